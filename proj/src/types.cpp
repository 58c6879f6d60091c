#include "glam/types.hpp"

#include <algorithm>

namespace glam {

bool Permutation::is_bijective() const {
  std::vector<bool> seen(assign.size(), false);
  for (std::size_t c : assign) {
    if (c >= assign.size() || seen[c]) return false;
    seen[c] = true;
  }
  return true;
}

void PointFeatureSet::validate() const {
  if (features.rows() != positions.rows()) {
    throw ShapeError("PointFeatureSet: " + std::to_string(features.rows()) + " feature rows vs " +
                     std::to_string(positions.rows()) + " position rows");
  }
  if (positions.cols() != 2) {
    throw ShapeError("PointFeatureSet: positions need 2 columns, got " +
                     std::to_string(positions.cols()));
  }
  if (!labels.empty() && labels.size() != size()) {
    throw ShapeError("PointFeatureSet: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(size()) + " keypoints");
  }
}

bool PaddingMask::empty() const {
  return std::none_of(dummy_a.begin(), dummy_a.end(), [](bool b) { return b; }) &&
         std::none_of(dummy_b.begin(), dummy_b.end(), [](bool b) { return b; });
}

}  // namespace glam
