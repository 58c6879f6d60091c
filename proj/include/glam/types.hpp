#pragma once

#include "glam/common.hpp"

#include <string>
#include <vector>

namespace glam {

inline const std::string kDummyLabel = "<dummy>";

/// Keypoints of one image: features (n×d), positions in [0,1]² (n×2), and
/// optional per-keypoint names.
struct PointFeatureSet {
  Matrix features;
  Matrix positions;
  std::vector<std::string> labels;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  /// Throws ShapeError when the row counts or column counts are inconsistent.
  void validate() const;
};

/// Marks dummy keypoints added by padding.
struct PaddingMask {
  std::vector<bool> dummy_a;  // per row
  std::vector<bool> dummy_b;  // per column

  bool empty() const;
  bool row_is_dummy(std::size_t i) const { return i < dummy_a.size() && dummy_a[i]; }
  bool col_is_dummy(std::size_t j) const { return j < dummy_b.size() && dummy_b[j]; }
};

/// A pair of keypoint sets with its ground-truth partial matching.
struct CorrespondenceSample {
  std::size_t category = 0;
  PointFeatureSet a;
  PointFeatureSet b;
  Matching gt;  // size a.size(); -1 where the keypoint has no counterpart
};

}  // namespace glam
