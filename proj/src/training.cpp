#include "glam/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace glam {

void TrainConfig::validate() const {
  if (!(pos_weight > 0.0)) throw ContractError("TrainConfig: pos_weight must be > 0");
  if (!(learning_rate > 0.0)) throw ContractError("TrainConfig: learning_rate must be > 0");
  if (optimizer == OptimizerKind::AdaptiveMoment) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ContractError("TrainConfig: betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ContractError("TrainConfig: epsilon must be > 0");
  }
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,accuracy\n";
  for (std::size_t e = 0; e < loss.size(); ++e) os << e + 1 << ',' << loss[e] << ',' << accuracy[e] << '\n';
  return os.str();
}

std::string TrainReport::timing_csv() const {
  std::ostringstream os;
  os.precision(6);
  os << "epoch,seconds\n";
  for (std::size_t e = 0; e < seconds.size(); ++e) os << e + 1 << ',' << seconds[e] << '\n';
  return os.str();
}

// ---------------------------------------------------------------- loss

namespace {

void check_loss_shapes(Eigen::Index rows, Eigen::Index cols, const Matrix& gt, const Matrix& valid) {
  if (gt.rows() != rows || gt.cols() != cols || valid.rows() != rows || valid.cols() != cols)
    throw ShapeError("weighted_bce_loss: prediction, ground truth and mask shapes differ");
}

}  // namespace

// Log arguments are floored at kProbFloor but not capped below one, so a
// prediction equal to the binary ground truth scores exactly zero.
Var weighted_bce_loss(Var x, const Matrix& gt, const Matrix& valid, double pos_weight) {
  check_loss_shapes(static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(x.cols()), gt, valid);
  Tape& tape = x.tape();
  const Matrix pos_coef = pos_weight * gt.cwiseProduct(valid);
  const Matrix neg_coef = (Matrix::Ones(gt.rows(), gt.cols()) - gt).cwiseProduct(valid);
  Var pos = hadamard(tape.constant(pos_coef), log_clamped(x, kProbFloor, 1.0));
  Var neg = hadamard(tape.constant(neg_coef), log_clamped(affine(x, -1.0, 1.0), kProbFloor, 1.0));
  return scale(sum(add(pos, neg)), -1.0);
}

double weighted_bce_loss(const Matrix& x, const Matrix& gt, const Matrix& valid, double pos_weight) {
  check_loss_shapes(x.rows(), x.cols(), gt, valid);
  double total = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double v = valid.data()[k];
    if (v == 0.0) continue;
    const double g = gt.data()[k];
    const double p = x.data()[k];
    if (g != 0.0) total += pos_weight * g * v * std::log(std::clamp(p, kProbFloor, 1.0));
    if (g != 1.0) total += (1.0 - g) * v * std::log(std::clamp(1.0 - p, kProbFloor, 1.0));
  }
  return -total;
}

double binary_cross_entropy(const Matrix& x, const Matrix& gt, const Matrix& valid) {
  check_loss_shapes(x.rows(), x.cols(), gt, valid);
  double total = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (valid.data()[k] == 0.0) continue;
    const double g = gt.data()[k];
    const double p = x.data()[k];
    const double term = g * std::log(std::clamp(p, kProbFloor, 1.0)) +
                        (1.0 - g) * std::log(std::clamp(1.0 - p, kProbFloor, 1.0));
    total += valid.data()[k] * term;
  }
  return -total;
}

// ---------------------------------------------------------------- optimizers

namespace {

const std::vector<double>& require_grad(const std::string& name, const Tensor& t) {
  if (t.grad.size() != t.values.size())
    throw ContractError("optimizer: parameter " + name + " has no gradient");
  return t.grad;
}

}  // namespace

void PlainGradient::step(GlamParameters& params) {
  for (auto& [name, t] : params.tensors()) {
    const auto& g = require_grad(name, t);
    for (std::size_t k = 0; k < t.values.size(); ++k) t.values[k] -= lr_ * g[k];
  }
}

void AdaptiveMoment::step(GlamParameters& params) {
  for (const auto& [name, t] : params.tensors()) require_grad(name, t);
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, t] : params.tensors()) {
    Moments& s = state_[name];
    if (s.m.size() != t.values.size()) {
      s.m.assign(t.values.size(), 0.0);
      s.v.assign(t.values.size(), 0.0);
    }
    for (std::size_t k = 0; k < t.values.size(); ++k) {
      const double g = t.grad[k];
      s.m[k] = beta1_ * s.m[k] + (1.0 - beta1_) * g;
      s.v[k] = beta2_ * s.v[k] + (1.0 - beta2_) * g * g;
      const double m_hat = s.m[k] / c1;
      const double v_hat = s.v[k] / c2;
      t.values[k] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config) {
  config.validate();
  if (config.optimizer == OptimizerKind::PlainGradient)
    return std::make_unique<PlainGradient>(config.learning_rate);
  return std::make_unique<AdaptiveMoment>(config.learning_rate, config.beta1, config.beta2,
                                          config.epsilon);
}

// ---------------------------------------------------------------- loops

double sample_accuracy(const Predictor& predict, const CorrespondenceSample& sample) {
  const PaddedPair padded = pad_to_common_size(sample.a, sample.b, sample.gt);
  const Matrix x = predict(padded.a, padded.b);
  return matching_accuracy(hungarian(x), *padded.gt, padded.mask);
}

double sample_accuracy(const GlamParameters& params, const NetworkConfig& config,
                       const CorrespondenceSample& sample) {
  return sample_accuracy(
      [&](const PointFeatureSet& a, const PointFeatureSet& b) {
        return forward(params, config, a, b).assignment;
      },
      sample);
}

double evaluate(const Predictor& predict, const std::vector<CorrespondenceSample>& test_set) {
  if (test_set.empty()) throw ContractError("evaluate: empty test set");
  std::vector<double> acc;
  acc.reserve(test_set.size());
  for (const auto& s : test_set) acc.push_back(sample_accuracy(predict, s));
  // Summed in sorted order so the mean does not depend on sample order.
  std::sort(acc.begin(), acc.end());
  return std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
}

double evaluate(const GlamParameters& params, const NetworkConfig& config,
                const std::vector<CorrespondenceSample>& test_set) {
  return evaluate(
      [&](const PointFeatureSet& a, const PointFeatureSet& b) {
        return forward(params, config, a, b).assignment;
      },
      test_set);
}

double accumulate_sample_gradient(GlamParameters& params, const NetworkConfig& config,
                                  const CorrespondenceSample& sample, double pos_weight) {
  const PaddedPair padded = pad_to_common_size(sample.a, sample.b, sample.gt);
  const std::size_t n = padded.a.size();
  Tape tape;
  BoundParameters bound(tape, params, /*track_grad=*/true);
  ForwardGraph g = forward_on_tape(bound, config, padded.a, padded.b);
  Var loss = weighted_bce_loss(g.assignment, matching_matrix(*padded.gt, n, n),
                               valid_entries(padded.mask, n, n), pos_weight);
  const double value = loss.value().values[0];
  if (std::isfinite(value)) tape.backward(loss);
  return value;
}

namespace {

bool all_finite(const GlamParameters& params) {
  for (const auto& [name, t] : params.tensors())
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TrainReport train(GlamParameters& params, const NetworkConfig& net_config,
                  const std::vector<CorrespondenceSample>& train_set,
                  const std::vector<CorrespondenceSample>& val_set, const TrainConfig& config,
                  const TrainCallbacks& callbacks) {
  net_config.validate();
  config.validate();
  params.check_layout(net_config);
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (val_set.empty()) throw ContractError("train: empty validation set");

  TrainReport report;
  auto optimizer = make_optimizer(config);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      params.zero_grad();
      double loss = 0.0;
      try {
        loss = accumulate_sample_gradient(params, net_config, train_set[order[k]], config.pos_weight);
      } catch (const ContractError& e) {
        // Once updates have been applied, a forward pass that overflows into
        // non-finite or zero activations is a symptom of divergence.
        if (epoch == 0 && k == 0) throw;
        throw DivergenceError(epoch + 1, order[k],
                              "training diverged: forward pass failed at epoch " + std::to_string(epoch + 1) +
                                  ", sample " + std::to_string(order[k]) + " (" + e.what() + ")");
      }
      if (!std::isfinite(loss)) {
        throw DivergenceError(epoch + 1, order[k],
                              "training diverged: non-finite loss at epoch " +
                                  std::to_string(epoch + 1) + ", sample " + std::to_string(order[k]));
      }
      optimizer->step(params);
      if (!all_finite(params)) {
        throw DivergenceError(epoch + 1, order[k],
                              "training diverged: non-finite parameters after the update at epoch " +
                                  std::to_string(epoch + 1) + ", sample " + std::to_string(order[k]));
      }
      loss_sum += loss;
    }
    const double accuracy = evaluate(params, net_config, val_set);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.loss.push_back(loss_sum / static_cast<double>(order.size()));
    report.accuracy.push_back(accuracy);
    report.seconds.push_back(seconds);
    if (callbacks.on_epoch) callbacks.on_epoch(epoch + 1, report.loss.back(), accuracy, seconds);
  }
  params.zero_grad();
  return report;
}

}  // namespace glam
