#pragma once

// Finite-difference verification of the network's adjoints on a small
// random instance.

#include "glam/attention.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace glam {

struct GradcheckOptions {
  NetworkConfig config = small_config();
  std::size_t n_keypoints = 4;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double pos_weight = 5.0;

  /// 1 layer, 2 + 2 heads, d = 8, 2 Sinkhorn iterations.
  static NetworkConfig small_config();
};

struct GradcheckEntry {
  std::string name;
  double relative_error = 0.0;  // ||analytic - numeric|| / max(norms, 1e-8)
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;

  double worst() const;
  /// Worst error per group: "encoder", "layer{t}.sal", "layer{t}.cal".
  std::map<std::string, double> worst_by_group() const;
  std::vector<std::string> failures(double tolerance) const;
};

/// Compares tape gradients of the weighted loss with central differences for
/// every parameter tensor. Deterministic in `options.seed`.
GradcheckReport gradient_check(const GradcheckOptions& options);

std::string parameter_group(const std::string& name);

}  // namespace glam
