#include "glam/attention.hpp"

#include "glam/assignment.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace glam {

NetworkConfig NetworkConfig::desk_scale() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::paper_scale() {
  NetworkConfig c;
  c.n_layers = 3;
  c.n_self_heads = 8;
  c.n_cross_heads = 8;
  c.feat_dim = 1024;
  c.self_dim = 1024;
  c.cross_dim = 1024;
  c.encoder_hidden = 256;
  c.sinkhorn_iters = 5;
  return c;
}

void NetworkConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ContractError(std::string("NetworkConfig: ") + what + " must be >= 1");
  };
  positive(n_layers, "n_layers");
  positive(n_self_heads, "n_self_heads");
  positive(n_cross_heads, "n_cross_heads");
  positive(feat_dim, "feat_dim");
  positive(self_dim, "self_dim");
  positive(cross_dim, "cross_dim");
  positive(encoder_hidden, "encoder_hidden");
  if (sinkhorn_iters < 1) throw ContractError("NetworkConfig: sinkhorn_iters must be >= 1");
  if (!use_sal && !use_cal) {
    throw ContractError("NetworkConfig: at least one of self-attention or cross-attention is required");
  }
}

// ---------------------------------------------------------------- parameters

std::string head_name(std::size_t layer, const char* kind, std::size_t head, char proj) {
  return "layer" + std::to_string(layer) + "." + kind + ".head" + std::to_string(head) + "." + proj;
}

std::string mixer_name(std::size_t layer, const char* kind) {
  return "layer" + std::to_string(layer) + "." + kind + ".mixer";
}

std::map<std::string, Shape> GlamParameters::layout(const NetworkConfig& c) {
  c.validate();
  std::map<std::string, Shape> out;
  out["encoder.0.weight"] = {2, c.encoder_hidden};
  out["encoder.0.bias"] = {1, c.encoder_hidden};
  out["encoder.1.weight"] = {c.encoder_hidden, c.feat_dim};
  out["encoder.1.bias"] = {1, c.feat_dim};
  for (std::size_t t = 0; t < c.n_layers; ++t) {
    if (c.use_sal) {
      for (std::size_t i = 0; i < c.n_self_heads; ++i)
        for (char p : {'Q', 'K', 'V'}) out[head_name(t, "sal", i, p)] = {c.feat_dim, c.self_dim};
      out[mixer_name(t, "sal")] = {c.self_dim * c.n_self_heads, c.feat_dim};
    }
    if (c.use_cal) {
      for (std::size_t i = 0; i < c.n_cross_heads; ++i)
        for (char p : {'Q', 'K', 'V'}) out[head_name(t, "cal", i, p)] = {c.feat_dim, c.cross_dim};
      out[mixer_name(t, "cal")] = {c.cross_dim * c.n_cross_heads, c.feat_dim};
    }
  }
  return out;
}

GlamParameters GlamParameters::init(const NetworkConfig& config, std::uint64_t seed) {
  GlamParameters p;
  std::mt19937_64 rng(seed);
  for (const auto& [name, shape] : layout(config)) {
    Tensor t(shape);
    // Biases share the fan-in of the weight they accompany.
    std::size_t fan_in = shape[0];
    if (name == "encoder.0.bias") fan_in = 2;
    if (name == "encoder.1.bias") fan_in = config.encoder_hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values) v = dist(rng);
    p.tensors_.emplace(name, std::move(t));
  }
  return p;
}

void GlamParameters::check_layout(const NetworkConfig& config) const {
  const auto expected = layout(config);
  for (const auto& [name, shape] : expected) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ShapeError("parameter " + name + " is missing");
    if (it->second.shape != shape) {
      throw ShapeError("parameter " + name + " has shape " + shape_string(it->second.shape) +
                       ", expected " + shape_string(shape));
    }
    if (it->second.values.size() != it->second.size() ||
        it->second.size() !=
            std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>())) {
      throw ShapeError("parameter " + name + " has inconsistent storage");
    }
  }
  for (const auto& [name, t] : tensors_) {
    if (!expected.count(name)) throw ShapeError("parameter " + name + " is not part of this configuration");
  }
}

Tensor& GlamParameters::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

const Tensor& GlamParameters::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

std::size_t GlamParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

void GlamParameters::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

bool GlamParameters::operator==(const GlamParameters& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (const auto& [name, t] : tensors_) {
    auto it = other.tensors_.find(name);
    if (it == other.tensors_.end() || it->second.shape != t.shape || it->second.values != t.values)
      return false;
  }
  return true;
}

BoundParameters::BoundParameters(Tape& tape, GlamParameters& params, bool track_grad) : tape_(&tape) {
  for (auto& [name, t] : params.tensors())
    vars_.emplace(name, track_grad ? tape.parameter(t) : tape.frozen(t));
}

BoundParameters::BoundParameters(Tape& tape, const GlamParameters& params) : tape_(&tape) {
  for (const auto& [name, t] : params.tensors()) vars_.emplace(name, tape.frozen(t));
}

Var BoundParameters::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("parameter " + name + " is not bound");
  return it->second;
}

// ---------------------------------------------------------------- network

Var encode_positions(const BoundParameters& p, Var positions) {
  Var h = relu(add_row_broadcast(matmul(positions, p["encoder.0.weight"]), p["encoder.0.bias"]));
  return add_row_broadcast(matmul(h, p["encoder.1.weight"]), p["encoder.1.bias"]);
}

Matrix encode_positions(const GlamParameters& params, const Matrix& positions) {
  Tape tape;
  BoundParameters p(tape, params);
  return encode_positions(p, tape.constant(positions)).matrix();
}

namespace {

// One attention direction: queries from `q_src`, keys/values from `kv_src`.
struct HeadResult {
  Var attention;
  Var update;
};

HeadResult self_head(const BoundParameters& p, std::size_t layer, std::size_t head, double inv_sqrt,
                     Var f) {
  Var q = matmul(f, p[head_name(layer, "sal", head, 'Q')]);
  Var k = matmul(f, p[head_name(layer, "sal", head, 'K')]);
  Var v = matmul(f, p[head_name(layer, "sal", head, 'V')]);
  Var m = row_softmax(scale(matmul_nt(q, k), inv_sqrt));
  return {m, matmul(m, v)};
}

HeadResult cross_head(const BoundParameters& p, std::size_t layer, std::size_t head, double inv_sqrt,
                      int sinkhorn_iters, Var q_src, Var kv_src) {
  Var q = matmul(q_src, p[head_name(layer, "cal", head, 'Q')]);
  Var k = matmul(kv_src, p[head_name(layer, "cal", head, 'K')]);
  Var v = matmul(kv_src, p[head_name(layer, "cal", head, 'V')]);
  Var m = sinkhorn(sigmoid(scale(matmul_nt(q, k), inv_sqrt)), sinkhorn_iters);
  return {m, matmul(m, v)};
}

}  // namespace

LayerOutput self_attention_layer(const BoundParameters& p, const NetworkConfig& c, std::size_t layer,
                                 Var fa, Var fb) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.self_dim));
  LayerOutput out;
  std::vector<Var> ua, ub;
  for (std::size_t i = 0; i < c.n_self_heads; ++i) {
    HeadResult ra = self_head(p, layer, i, inv_sqrt, fa);
    HeadResult rb = self_head(p, layer, i, inv_sqrt, fb);
    out.attn_a.push_back(ra.attention);
    out.attn_b.push_back(rb.attention);
    ua.push_back(ra.update);
    ub.push_back(rb.update);
  }
  Var mixer = p[mixer_name(layer, "sal")];
  out.a = relu(add(fa, matmul(concat_cols(ua), mixer)));
  out.b = relu(add(fb, matmul(concat_cols(ub), mixer)));
  return out;
}

LayerOutput cross_attention_layer(const BoundParameters& p, const NetworkConfig& c, std::size_t layer,
                                  Var fa, Var fb) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.cross_dim));
  LayerOutput out;
  std::vector<Var> ua, ub;
  for (std::size_t i = 0; i < c.n_cross_heads; ++i) {
    HeadResult ra = cross_head(p, layer, i, inv_sqrt, c.sinkhorn_iters, fa, fb);
    HeadResult rb = cross_head(p, layer, i, inv_sqrt, c.sinkhorn_iters, fb, fa);
    out.attn_a.push_back(ra.attention);
    out.attn_b.push_back(rb.attention);
    ua.push_back(ra.update);
    ub.push_back(rb.update);
  }
  Var mixer = p[mixer_name(layer, "cal")];
  out.a = relu(add(fa, matmul(concat_cols(ua), mixer)));
  out.b = relu(add(fb, matmul(concat_cols(ub), mixer)));
  return out;
}

ForwardGraph forward_on_tape(const BoundParameters& p, const NetworkConfig& c,
                             const PointFeatureSet& a, const PointFeatureSet& b) {
  c.validate();
  a.validate();
  b.validate();
  if (a.size() != b.size()) {
    throw ContractError("forward: sets must have equal size after padding (" +
                        std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  if (a.size() == 0) throw ContractError("forward: empty keypoint set");
  if (a.dim() != c.feat_dim || b.dim() != c.feat_dim) {
    throw ShapeError("forward: feature dim " + std::to_string(a.dim()) + "/" +
                     std::to_string(b.dim()) + " does not match config " + std::to_string(c.feat_dim));
  }
  Tape& tape = p.tape();
  Var rho_a = encode_positions(p, tape.constant(a.positions));
  Var rho_b = encode_positions(p, tape.constant(b.positions));
  Var fa = add(tape.constant(a.features), rho_a);
  Var fb = add(tape.constant(b.features), rho_b);

  ForwardGraph g;
  std::vector<Var> last_cross_a, last_cross_b;
  for (std::size_t t = 0; t < c.n_layers; ++t) {
    if (c.use_sal) {
      LayerOutput s = self_attention_layer(p, c, t, fa, fb);
      fa = add(s.a, rho_a);
      fb = add(s.b, rho_b);
      auto& heads = g.trace.self_attn.emplace_back();
      for (std::size_t i = 0; i < s.attn_a.size(); ++i)
        heads.push_back({s.attn_a[i].matrix(), s.attn_b[i].matrix()});
    }
    if (c.use_cal) {
      LayerOutput x = cross_attention_layer(p, c, t, fa, fb);
      fa = add(x.a, rho_a);
      fb = add(x.b, rho_b);
      last_cross_a = std::move(x.attn_a);
      last_cross_b = std::move(x.attn_b);
    }
  }

  if (c.use_cal) {
    Var acc = add(last_cross_a[0], transpose(last_cross_b[0]));
    for (std::size_t i = 1; i < last_cross_a.size(); ++i)
      acc = add(acc, add(last_cross_a[i], transpose(last_cross_b[i])));
    g.assignment = scale(acc, 1.0 / (2.0 * static_cast<double>(c.n_cross_heads)));
    for (std::size_t i = 0; i < last_cross_a.size(); ++i) {
      g.trace.cross_attn_a.push_back(last_cross_a[i].matrix());
      g.trace.cross_attn_b.push_back(last_cross_b[i].matrix());
    }
  } else {
    // Without cross-attention there is no averaged head output; score the
    // final features directly.
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.feat_dim));
    g.assignment = row_softmax(scale(matmul_nt(fa, fb), inv_sqrt));
  }
  g.trace.assignment = g.assignment.matrix();
  return g;
}

ForwardTrace forward(const GlamParameters& params, const NetworkConfig& config,
                     const PointFeatureSet& a, const PointFeatureSet& b) {
  Tape tape;
  BoundParameters p(tape, params);
  return forward_on_tape(p, config, a, b).trace;
}

// ---------------------------------------------------------------- checkpoints

namespace {

using nlohmann::json;

json config_to_json(const NetworkConfig& c) {
  return json{{"n_layers", c.n_layers},         {"n_self_heads", c.n_self_heads},
              {"n_cross_heads", c.n_cross_heads}, {"feat_dim", c.feat_dim},
              {"self_dim", c.self_dim},         {"cross_dim", c.cross_dim},
              {"encoder_hidden", c.encoder_hidden}, {"sinkhorn_iters", c.sinkhorn_iters},
              {"use_sal", c.use_sal},           {"use_cal", c.use_cal}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_self_heads = j.at("n_self_heads").get<std::size_t>();
  c.n_cross_heads = j.at("n_cross_heads").get<std::size_t>();
  c.feat_dim = j.at("feat_dim").get<std::size_t>();
  c.self_dim = j.at("self_dim").get<std::size_t>();
  c.cross_dim = j.at("cross_dim").get<std::size_t>();
  c.encoder_hidden = j.at("encoder_hidden").get<std::size_t>();
  c.sinkhorn_iters = j.at("sinkhorn_iters").get<int>();
  c.use_sal = j.at("use_sal").get<bool>();
  c.use_cal = j.at("use_cal").get<bool>();
  return c;
}

}  // namespace

std::string network_config_to_json(const NetworkConfig& config) { return config_to_json(config).dump(); }

NetworkConfig network_config_from_json(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("network config: ") + e.what());
  }
}

std::string checkpoint_to_string(const GlamParameters& params, const NetworkConfig& config) {
  json doc;
  doc["format"] = "glam-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["config"] = config_to_json(config);
  json entries = json::array();
  for (const auto& [name, t] : params.tensors())
    entries.push_back(json{{"name", name}, {"shape", t.shape}, {"values", t.values}});
  doc["parameters"] = std::move(entries);
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "glam-checkpoint")
      throw std::runtime_error("checkpoint: unexpected format tag");
    const int version = doc.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.config = config_from_json(doc.at("config"));
    for (const auto& e : doc.at("parameters")) {
      Tensor t;
      t.shape = e.at("shape").get<Shape>();
      t.values = e.at("values").get<std::vector<double>>();
      const auto name = e.at("name").get<std::string>();
      const std::size_t expected =
          std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>());
      if (expected != t.values.size())
        throw std::runtime_error("checkpoint: parameter " + name + " has " +
                                 std::to_string(t.values.size()) + " values for shape " +
                                 shape_string(t.shape));
      ck.params.set(name, std::move(t));
    }
    return ck;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const GlamParameters& params, const NetworkConfig& config) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << checkpoint_to_string(params, config);
  if (!os) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace glam
