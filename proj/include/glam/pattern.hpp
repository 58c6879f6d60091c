#pragma once

// Learnt graph patterns: head-averaged last-layer self-attention, averaged
// per category over all images whose keypoints carry shared labels.

#include "glam/attention.hpp"
#include "glam/common.hpp"
#include "glam/synthdata.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace glam {

struct LearntPattern {
  Matrix adjacency;  // N×N, mean over contributing samples
  Matrix counts;     // N×N, number of contributing samples; 0 marks an absent cell
  std::vector<std::string> labels;

  std::size_t size() const { return labels.size(); }
  bool cell_present(std::size_t i, std::size_t j) const {
    return counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > 0.0;
  }
};

enum class Image { A = 0, B = 1 };

/// Mean of the last layer's self-attention heads for one image.
/// Throws ContractError if the trace holds no self-attention.
Matrix extract_sample_adjacency(const ForwardTrace& trace, Image image = Image::A);

struct SampleAdjacency {
  Matrix adjacency;
  std::vector<std::string> labels;  // one per row; kDummyLabel rows are skipped
};

/// Scatters every sample into the label universe and averages each cell over
/// the samples that contain both of its keypoints. The result does not depend
/// on sample order.
LearntPattern aggregate_category(const std::vector<SampleAdjacency>& samples,
                                 const std::vector<std::string>& universe);

/// Keeps the ceil(keep_fraction·E) strongest undirected edges among the E
/// present off-diagonal pairs, ranked by max(A_ij, A_ji). Edges tied with the
/// weakest survivor are all kept. Diagonal cells are left untouched.
LearntPattern filter_top_edges(const LearntPattern& pattern, double keep_fraction = 0.7);

/// Writes `<base>.csv` (label header, then N rows) and `<base>.pgm` (P2,
/// maxval 255; the largest cell is 0, zero is 255, a constant matrix is 128).
void export_heatmap(const LearntPattern& pattern, const std::string& base_path);

std::string heatmap_csv(const LearntPattern& pattern);
std::string heatmap_pgm(const LearntPattern& pattern);

struct HeatmapCsv {
  std::vector<std::string> labels;
  Matrix values;
};
HeatmapCsv parse_heatmap_csv(const std::string& text);

/// Pearson correlation between symmetrized off-diagonal pattern weights,
/// (A_ij + A_ji)/2, and the planted adjacency over present pairs.
/// Throws ContractError on zero variance or a label missing from the template.
double pattern_recovery_score(const LearntPattern& pattern, const CategoryTemplate& tmpl);

/// Recovery scores with the pattern's labels randomly permuted.
std::vector<double> pattern_recovery_null(const LearntPattern& pattern, const CategoryTemplate& tmpl,
                                          std::size_t trials, std::uint64_t seed);

/// Empirical quantile (linear interpolation between order statistics).
double quantile(std::vector<double> values, double q);

}  // namespace glam
