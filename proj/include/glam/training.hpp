#pragma once

#include "glam/assignment.hpp"
#include "glam/attention.hpp"
#include "glam/common.hpp"
#include "glam/diffcore.hpp"
#include "glam/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace glam {

enum class OptimizerKind { PlainGradient, AdaptiveMoment };

struct TrainConfig {
  double pos_weight = 5.0;
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::AdaptiveMoment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct TrainReport {
  std::vector<double> loss;      // mean training loss per epoch
  std::vector<double> accuracy;  // held-out accuracy per epoch
  std::vector<double> seconds;   // wall-clock per epoch

  std::size_t epochs() const { return loss.size(); }
  /// Columns: epoch,loss,accuracy. Deterministic for a fixed seed.
  std::string to_csv() const;
  /// Columns: epoch,seconds.
  std::string timing_csv() const;
};

/// Training aborted because the loss became non-finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, std::size_t sample, const std::string& what)
      : std::runtime_error(what), epoch_(epoch), sample_(sample) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t sample() const { return sample_; }

 private:
  std::size_t epoch_, sample_;
};

// ---------------------------------------------------------------- loss

/// L = -Σ valid · [ w·gt·log(x) + (1-gt)·log(1-x) ], log arguments floored
/// at kProbFloor. `valid` zeroes dummy rows/columns.
Var weighted_bce_loss(Var x, const Matrix& gt, const Matrix& valid, double pos_weight);
double weighted_bce_loss(const Matrix& x, const Matrix& gt, const Matrix& valid, double pos_weight);
/// Unweighted binary cross entropy, used to cross-check the w = 1 case.
double binary_cross_entropy(const Matrix& x, const Matrix& gt, const Matrix& valid);

// ---------------------------------------------------------------- optimizers

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Updates every parameter in place from its grad buffer. Throws
  /// ContractError if a parameter has no gradient.
  virtual void step(GlamParameters& params) = 0;
};

class PlainGradient final : public Optimizer {
 public:
  explicit PlainGradient(double learning_rate) : lr_(learning_rate) {}
  void step(GlamParameters& params) override;

 private:
  double lr_;
};

/// Bias-corrected first/second moment optimizer; state is keyed by name.
class AdaptiveMoment final : public Optimizer {
 public:
  AdaptiveMoment(double learning_rate, double beta1, double beta2, double epsilon)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}
  void step(GlamParameters& params) override;
  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config);

// ---------------------------------------------------------------- loops

/// Soft assignment for an already padded pair.
using Predictor = std::function<Matrix(const PointFeatureSet&, const PointFeatureSet&)>;

/// Accuracy of one sample after padding and Hungarian discretization.
double sample_accuracy(const Predictor& predict, const CorrespondenceSample& sample);
double sample_accuracy(const GlamParameters& params, const NetworkConfig& config,
                       const CorrespondenceSample& sample);

/// Mean per-sample accuracy. Throws ContractError on an empty set.
double evaluate(const Predictor& predict, const std::vector<CorrespondenceSample>& test_set);
double evaluate(const GlamParameters& params, const NetworkConfig& config,
                const std::vector<CorrespondenceSample>& test_set);

/// forward -> loss -> backward on one padded sample; returns the loss.
/// Gradients accumulate into params.
double accumulate_sample_gradient(GlamParameters& params, const NetworkConfig& config,
                                  const CorrespondenceSample& sample, double pos_weight);

struct TrainCallbacks {
  std::function<void(std::size_t epoch, double loss, double accuracy, double seconds)> on_epoch;
};

/// One sample per update, shuffled each epoch from `config.seed`.
/// Throws DivergenceError when the loss becomes NaN or infinite.
TrainReport train(GlamParameters& params, const NetworkConfig& net_config,
                  const std::vector<CorrespondenceSample>& train_set,
                  const std::vector<CorrespondenceSample>& val_set, const TrainConfig& config,
                  const TrainCallbacks& callbacks = {});

}  // namespace glam
