#pragma once

// Synthetic keypoint-correspondence data with planted category structure.

#include "glam/common.hpp"
#include "glam/types.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace glam {

struct CategoryTemplate {
  std::string name;
  Matrix prototype_features;   // n×d, each row has norm √d
  Matrix prototype_positions;  // n×2 in [0,1]²
  Matrix planted_adjacency;    // n×n, symmetric 0/1, zero diagonal
  std::vector<std::string> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(prototype_features.cols()); }
  void validate() const;
};

struct GenConfig {
  std::uint64_t seed = 0;
  double feature_noise_sigma = 0.5;
  double position_noise_sigma = 0.02;
  double max_rotation = 0.5;  // radians, uniform in [-max, max]
  double min_scale = 0.8;
  double max_scale = 1.2;
  double max_translation = 0.2;
  /// Per keypoint and image, probability that the appearance is replaced by
  /// an unrelated random feature of prototype norm. Position is kept, so such
  /// keypoints can only be identified through their neighbours.
  double corruption_prob = 0.0;
  double dropout_prob = 0.0;  // per keypoint, per image
  std::size_t pairs_per_category = 10;
  /// Pair indices start here, so a held-out split from the same templates is
  /// another dataset with the same seed and a disjoint index range.
  std::uint64_t first_index = 0;
  bool shuffle = true;        // randomize keypoint order inside each image

  void validate() const;
};

struct TemplateOptions {
  /// Minimum Euclidean distance between prototype features; negative means
  /// the default of 0.5·√d.
  double margin = -1.0;
  std::size_t neighbors = 3;
  std::size_t max_retries = 1000;
};

/// Prototype features on the sphere of radius √d with pairwise separation at
/// least the margin (rejection sampled); planted adjacency links each
/// prototype to its k nearest positions, symmetrized.
CategoryTemplate make_template(std::size_t n, std::size_t d, std::uint64_t seed,
                               const TemplateOptions& options = {});

/// Two independently perturbed views of `tmpl`. `index` selects the pair in
/// a deterministic per-(seed, index) random stream.
CorrespondenceSample sample_pair(const CategoryTemplate& tmpl, const GenConfig& config,
                                 std::uint64_t index = 0, std::size_t category = 0);

struct Dataset {
  std::size_t feat_dim = 0;
  std::vector<CategoryTemplate> categories;
  std::vector<CorrespondenceSample> samples;

  bool operator==(const Dataset& other) const;
};

/// `categories` templates of `n_keypoints`, `config.pairs_per_category` pairs each.
Dataset generate_dataset(std::size_t categories, std::size_t n_keypoints, std::size_t feat_dim,
                         const GenConfig& config);

/// Malformed dataset text. The message names the line and field.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr int kDatasetVersion = 1;

std::string dataset_to_string(const Dataset& ds);
Dataset dataset_from_string(const std::string& text);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace glam
