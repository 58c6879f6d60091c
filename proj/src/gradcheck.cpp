#include "glam/gradcheck.hpp"

#include "glam/assignment.hpp"
#include "glam/synthdata.hpp"
#include "glam/training.hpp"

#include <algorithm>
#include <cmath>

namespace glam {

NetworkConfig GradcheckOptions::small_config() {
  NetworkConfig c;
  c.n_layers = 1;
  c.n_self_heads = c.n_cross_heads = 2;
  c.feat_dim = c.self_dim = c.cross_dim = 8;
  c.encoder_hidden = 2;
  c.sinkhorn_iters = 2;
  return c;
}

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.relative_error);
  return w;
}

std::map<std::string, double> GradcheckReport::worst_by_group() const {
  std::map<std::string, double> out;
  for (const auto& e : entries) {
    double& w = out[parameter_group(e.name)];
    w = std::max(w, e.relative_error);
  }
  return out;
}

std::vector<std::string> GradcheckReport::failures(double tolerance) const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (!(e.relative_error < tolerance)) out.push_back(e.name);
  return out;
}

std::string parameter_group(const std::string& name) {
  if (name.rfind("encoder", 0) == 0) return "encoder";
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  const auto second = name.find('.', first + 1);
  return name.substr(0, second);
}

GradcheckReport gradient_check(const GradcheckOptions& options) {
  const NetworkConfig& c = options.config;
  c.validate();
  GenConfig gen;
  gen.seed = options.seed;
  gen.feature_noise_sigma = 0.5;
  const CategoryTemplate tmpl = make_template(options.n_keypoints, c.feat_dim, options.seed);
  const CorrespondenceSample sample = sample_pair(tmpl, gen, 0);
  const PaddedPair padded = pad_to_common_size(sample.a, sample.b, sample.gt);
  const std::size_t n = padded.a.size();
  const Matrix gt = matching_matrix(*padded.gt, n, n);
  const Matrix valid = valid_entries(padded.mask, n, n);

  GlamParameters params = GlamParameters::init(c, options.seed);
  params.zero_grad();
  {
    Tape tape;
    BoundParameters bound(tape, params, true);
    tape.backward(weighted_bce_loss(forward_on_tape(bound, c, padded.a, padded.b).assignment, gt, valid,
                                    options.pos_weight));
  }
  auto loss = [&]() {
    return weighted_bce_loss(forward(params, c, padded.a, padded.b).assignment, gt, valid, options.pos_weight);
  };

  GradcheckReport report;
  for (auto& [name, t] : params.tensors()) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t k = 0; k < t.values.size(); ++k) {
      const double saved = t.values[k];
      t.values[k] = saved + options.step;
      const double up = loss();
      t.values[k] = saved - options.step;
      const double down = loss();
      t.values[k] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      diff += (t.grad[k] - numeric) * (t.grad[k] - numeric);
      na += t.grad[k] * t.grad[k];
      nn += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
    report.entries.push_back({name, std::sqrt(diff) / denom});
  }
  return report;
}

}  // namespace glam
