#pragma once

// The GLAM attention network: positional encoding followed by stacked
// self-attention (per-image graph learning) and cross-attention
// (Sinkhorn-normalized matching) layers. The soft assignment is the mean of
// the last layer's cross-attention heads, M̂ᴬ and (M̂ᴮ)ᵀ.

#include "glam/common.hpp"
#include "glam/diffcore.hpp"
#include "glam/types.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace glam {

struct NetworkConfig {
  std::size_t n_layers = 3;
  std::size_t n_self_heads = 4;
  std::size_t n_cross_heads = 4;
  std::size_t feat_dim = 64;
  std::size_t self_dim = 64;
  std::size_t cross_dim = 64;
  std::size_t encoder_hidden = 16;  // hidden width of the positional MLP
  int sinkhorn_iters = 5;
  bool use_sal = true;
  bool use_cal = true;

  /// d = 64, 4 heads, 3 layers.
  static NetworkConfig desk_scale();
  /// 3 layers, 8 + 8 heads, d = d_S = d_C = 1024.
  static NetworkConfig paper_scale();

  /// Throws ContractError when a count is zero or both layer types are off.
  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

/// Named learnable tensors. Names:
///   encoder.{0|1}.{weight|bias}
///   layer{t}.{sal|cal}.head{i}.{Q|K|V}
///   layer{t}.{sal|cal}.mixer
class GlamParameters {
 public:
  GlamParameters() = default;

  /// Uniform(-1/√fan_in, 1/√fan_in) initialization for every tensor.
  static GlamParameters init(const NetworkConfig& config, std::uint64_t seed);
  /// Expected name -> shape for `config`.
  static std::map<std::string, Shape> layout(const NetworkConfig& config);

  /// Throws ShapeError naming the first missing, extra, or misshaped tensor.
  void check_layout(const NetworkConfig& config) const;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  void set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }

  std::map<std::string, Tensor>& tensors() { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::size_t parameter_count() const;
  void zero_grad();

  bool operator==(const GlamParameters& other) const;

 private:
  std::map<std::string, Tensor> tensors_;
};

std::string head_name(std::size_t layer, const char* kind, std::size_t head, char proj);
std::string mixer_name(std::size_t layer, const char* kind);

/// Parameters bound to a tape, either as gradient-tracked or frozen leaves.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, GlamParameters& params, bool track_grad);
  BoundParameters(Tape& tape, const GlamParameters& params);

  Var operator[](const std::string& name) const;
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
};

/// Attention matrices recorded during a forward pass.
struct ForwardTrace {
  Matrix assignment;
  /// self_attn[layer][head] = {M̄ for image A, M̄ for image B}
  std::vector<std::vector<std::array<Matrix, 2>>> self_attn;
  /// Last-layer cross-attention heads M̂ᴬ_i and M̂ᴮ_i.
  std::vector<Matrix> cross_attn_a;
  std::vector<Matrix> cross_attn_b;
};

struct PairFeatures {
  Var a;
  Var b;
};

struct LayerOutput {
  Var a;
  Var b;
  std::vector<Var> attn_a;  // one matrix per head
  std::vector<Var> attn_b;
};

/// ρ(P): 2 -> encoder_hidden -> feat_dim MLP with a ReLU in between.
Var encode_positions(const BoundParameters& params, Var positions);
Matrix encode_positions(const GlamParameters& params, const Matrix& positions);

/// Multi-head self-attention on each image with shared weights, followed by
/// the residual F <- ReLU(F + F̄). The caller re-adds ρ(P).
LayerOutput self_attention_layer(const BoundParameters& params, const NetworkConfig& config,
                                 std::size_t layer, Var fa, Var fb);

/// Multi-head cross-attention in both directions with shared weights;
/// attention is sinkhorn(sigmoid(Q̂K̂ᵀ/√d_C)). Residual as above.
LayerOutput cross_attention_layer(const BoundParameters& params, const NetworkConfig& config,
                                  std::size_t layer, Var fa, Var fb);

/// Full network on a tape. Both sets must already have the same size.
struct ForwardGraph {
  Var assignment;
  ForwardTrace trace;
};
ForwardGraph forward_on_tape(const BoundParameters& params, const NetworkConfig& config,
                             const PointFeatureSet& a, const PointFeatureSet& b);

/// Inference-only forward pass.
ForwardTrace forward(const GlamParameters& params, const NetworkConfig& config,
                     const PointFeatureSet& a, const PointFeatureSet& b);

// ---------------------------------------------------------------- checkpoints

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const GlamParameters& params,
                     const NetworkConfig& config);

struct Checkpoint {
  GlamParameters params;
  NetworkConfig config;
};
/// Throws std::runtime_error on I/O or format errors.
Checkpoint load_checkpoint(const std::string& path);

/// The `config` object of a checkpoint as a standalone JSON document.
std::string network_config_to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const std::string& text);

std::string checkpoint_to_string(const GlamParameters& params, const NetworkConfig& config);
Checkpoint checkpoint_from_string(const std::string& text);

}  // namespace glam
