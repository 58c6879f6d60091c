// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset, e.g. `acceptance 1 2 3`.

#include "glam/assignment.hpp"
#include "glam/attention.hpp"
#include "glam/gradcheck.hpp"
#include "glam/pattern.hpp"
#include "glam/synthdata.hpp"
#include "glam/training.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace glam;

namespace {

// ---------------------------------------------------------------- pinned thresholds

constexpr double kGradTolerance = 1e-3;
constexpr double kGradSeconds = 30.0;

constexpr int kSinkhornMatrices = 1000;
constexpr int kSinkhornMaxN = 8;
constexpr int kSinkhornIters = 5;
constexpr double kRowSumTolerance = 1e-12;
constexpr double kDoublyStochasticTolerance = 1e-9;
constexpr double kScaleTolerance = 1e-12;

constexpr int kHungarianInstances = 1000;
constexpr double kHungarianSeconds = 10.0;

constexpr int kEquivarianceSettings = 100;
constexpr double kEquivarianceTolerance = 1e-9;

constexpr double kLearnedAccuracy = 0.95;
constexpr double kBaselineBandSigmas = 3.0;
constexpr double kLearningSeconds = 15.0 * 60.0;

constexpr double kAblationMargin = 0.05;

constexpr double kNullQuantile = 0.95;
constexpr std::size_t kNullTrials = 1000;
constexpr std::size_t kPatternPairsPerCategory = 200;

constexpr double kLayerGain = 0.03;
constexpr double kLayerSaturation = 0.03;

constexpr double kLossExampleTolerance = 1e-9;
constexpr double kLossReductionTolerance = 1e-12;

// ---------------------------------------------------------------- experiment setup

constexpr std::size_t kCategories = 2;
constexpr std::size_t kKeypoints = 10;
constexpr std::size_t kFeatDim = 64;
constexpr std::size_t kTrainPerCategory = 250;
constexpr std::size_t kTestPerCategory = 100;
constexpr std::size_t kEpochs = 20;
constexpr std::uint64_t kDataSeed = 1;
constexpr std::uint64_t kInitSeed = 42;

struct Regime {
  const char* name;
  double feature_noise;
  double max_rotation;
  double corruption;
};

// Full rotations make absolute position uninformative. In the harder regime
// corrupted appearances can only be resolved through surrounding keypoints.
constexpr Regime kModerate{"moderate", 1.0, std::numbers::pi, 0.0};
constexpr Regime kHarder{"harder", 1.0, std::numbers::pi, 0.3};

struct Split {
  Dataset data;
  std::vector<CorrespondenceSample> train, test;
};

Split make_split(const Regime& r) {
  GenConfig g;
  g.seed = kDataSeed;
  g.feature_noise_sigma = r.feature_noise;
  g.max_rotation = r.max_rotation;
  g.corruption_prob = r.corruption;
  g.pairs_per_category = kTrainPerCategory;
  Split s;
  s.data = generate_dataset(kCategories, kKeypoints, kFeatDim, g);
  s.train = s.data.samples;
  g.pairs_per_category = kTestPerCategory;
  g.first_index = kTrainPerCategory;
  s.test = generate_dataset(kCategories, kKeypoints, kFeatDim, g).samples;
  return s;
}

TrainConfig train_config() {
  TrainConfig tc;
  tc.epochs = kEpochs;
  tc.learning_rate = 3e-4;
  tc.seed = kInitSeed;
  return tc;
}

struct Run {
  NetworkConfig config;
  GlamParameters params;
  TrainReport report;
  double untrained_accuracy = 0.0;
  double test_accuracy = 0.0;
  double train_seconds = 0.0;
};

Run train_run(const Split& split, NetworkConfig config, const char* tag) {
  Run run;
  run.config = config;
  run.params = GlamParameters::init(config, kInitSeed);
  run.untrained_accuracy = evaluate(run.params, config, split.test);
  std::printf("  training %s (%zu layers, sal=%d, cal=%d)\n", tag, config.n_layers, config.use_sal, config.use_cal);
  std::fflush(stdout);
  TrainCallbacks cb;
  cb.on_epoch = [](std::size_t e, double loss, double acc, double secs) {
    std::printf("    epoch %2zu loss %9.4f test accuracy %.4f (%.1fs)\n", e, loss, acc, secs);
    std::fflush(stdout);
  };
  const auto start = std::chrono::steady_clock::now();
  run.report = train(run.params, config, split.train, split.test, train_config(), cb);
  run.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  run.test_accuracy = run.report.accuracy.back();
  return run;
}

NetworkConfig desk(std::size_t layers = 3, bool sal = true, bool cal = true) {
  NetworkConfig c = NetworkConfig::desk_scale();
  c.n_layers = layers;
  c.use_sal = sal;
  c.use_cal = cal;
  return c;
}

// Runs shared between criteria, trained on first use.
struct Experiments {
  std::optional<Split> moderate, harder;
  std::map<std::string, Run> runs;

  const Split& split(const Regime& r) {
    auto& slot = &r == &kModerate ? moderate : harder;
    if (!slot) slot = make_split(r);
    return *slot;
  }
  const Run& get(const std::string& key, const Regime& r, const NetworkConfig& c) {
    auto it = runs.find(key);
    if (it == runs.end()) it = runs.emplace(key, train_run(split(r), c, key.c_str())).first;
    return it->second;
  }
  const Run& moderate_full() { return get("moderate/full", kModerate, desk()); }
  const Run& harder_full() { return get("harder/full", kHarder, desk()); }
};

Experiments experiments;

// ---------------------------------------------------------------- helpers

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

Matrix random_positive(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::uniform_real_distribution<double> u(0.01, 10.0);
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

Matrix permute_rows(const Matrix& m, const std::vector<Eigen::Index>& p) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(p[static_cast<std::size_t>(i)]);
  return out;
}

PointFeatureSet permute(const PointFeatureSet& s, const std::vector<Eigen::Index>& p) {
  return {permute_rows(s.features, p), permute_rows(s.positions, p), {}};
}

// ---------------------------------------------------------------- criteria

Outcome gradient_oracle() {
  const auto start = std::chrono::steady_clock::now();
  const GradcheckReport r = gradient_check(GradcheckOptions{});
  const double secs = seconds_since(start);
  const double worst = r.worst();
  return {worst < kGradTolerance && secs < kGradSeconds,
          fmt("worst relative error %.3g over %zu tensors (< %g), %.2f s (< %g s)", worst, r.entries.size(),
              kGradTolerance, secs, kGradSeconds)};
}

Outcome sinkhorn_properties() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> size(1, kSinkhornMaxN);
  std::uniform_real_distribution<double> log_scale(std::log(1e-3), std::log(1e3));
  double row_err = 0.0, ds_err = 0.0, scale_err = 0.0;
  for (int trial = 0; trial < kSinkhornMatrices; ++trial) {
    const int n = size(rng);
    const Matrix m = random_positive(rng, n, n);
    const Matrix x = sinkhorn_normalize(m, kSinkhornIters);
    row_err = std::max(row_err, (x.rowwise().sum().array() - 1.0).abs().maxCoeff());

    const Matrix conv = sinkhorn_to_convergence(m).result;
    ds_err = std::max({ds_err, (conv.rowwise().sum().array() - 1.0).abs().maxCoeff(),
                       (conv.colwise().sum().array() - 1.0).abs().maxCoeff()});

    const double c = std::exp(log_scale(rng));
    scale_err = std::max(scale_err, (sinkhorn_normalize(c * m, kSinkhornIters) - x).cwiseAbs().maxCoeff());
  }
  return {row_err <= kRowSumTolerance && ds_err <= kDoublyStochasticTolerance && scale_err <= kScaleTolerance,
          fmt("%d matrices: row sums %.2g (<= %g), converged doubly stochastic %.2g (<= %g), scale %.2g (<= %g)",
              kSinkhornMatrices, row_err, kRowSumTolerance, ds_err, kDoublyStochasticTolerance, scale_err,
              kScaleTolerance)};
}

Outcome hungarian_oracle() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int mismatches = 0, total = 0;
  const auto start = std::chrono::steady_clock::now();
  for (int n = 2; n <= 6; ++n) {
    for (int trial = 0; trial < kHungarianInstances; ++trial, ++total) {
      Matrix s(n, n);
      for (Eigen::Index k = 0; k < s.size(); ++k) s.data()[k] = u(rng);
      const Permutation p = hungarian(s);
      if (!p.is_bijective() || assignment_total(s, p) != test::brute_force_max_total(s)) ++mismatches;
    }
  }
  const double secs = seconds_since(start);
  return {mismatches == 0 && secs < kHungarianSeconds,
          fmt("%d/%d instances (n = 2..6) agree exactly with enumeration, %.2f s (< %g s)", total - mismatches, total,
              secs, kHungarianSeconds)};
}

Outcome equivariance() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> n_dist(2, 9), layers(1, 3), heads(1, 3), iters(1, 6), mode(0, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double perm_err = 0.0, swap_err = 0.0;
  for (int trial = 0; trial < kEquivarianceSettings; ++trial) {
    NetworkConfig c;
    c.n_layers = static_cast<std::size_t>(layers(rng));
    c.n_self_heads = static_cast<std::size_t>(heads(rng));
    c.n_cross_heads = static_cast<std::size_t>(heads(rng));
    c.feat_dim = c.self_dim = c.cross_dim = 16;
    c.encoder_hidden = 4;
    c.sinkhorn_iters = iters(rng);
    const int m = mode(rng);
    c.use_sal = m != 1;
    c.use_cal = m != 2;
    const GlamParameters params = GlamParameters::init(c, 1000 + static_cast<std::uint64_t>(trial));

    const int na = n_dist(rng), nb = na;  // forward takes padded, equal-size sets
    auto random_set = [&](int n) {
      PointFeatureSet s{Matrix(n, 16), Matrix(n, 2), {}};
      for (Eigen::Index k = 0; k < s.features.size(); ++k) s.features.data()[k] = 2.0 * normal(rng);
      for (Eigen::Index k = 0; k < s.positions.size(); ++k) s.positions.data()[k] = unit(rng);
      return s;
    };
    const PointFeatureSet a = random_set(na), b = random_set(nb);
    std::vector<Eigen::Index> pa(static_cast<std::size_t>(na)), pb(static_cast<std::size_t>(nb));
    std::iota(pa.begin(), pa.end(), 0);
    std::iota(pb.begin(), pb.end(), 0);
    std::shuffle(pa.begin(), pa.end(), rng);
    std::shuffle(pb.begin(), pb.end(), rng);

    const Matrix x = forward(params, c, a, b).assignment;
    const Matrix xa = forward(params, c, permute(a, pa), b).assignment;
    const Matrix xb = forward(params, c, a, permute(b, pb)).assignment;
    const Matrix xs = forward(params, c, b, a).assignment;
    perm_err = std::max(perm_err, (xa - permute_rows(x, pa)).cwiseAbs().maxCoeff());
    const Matrix xt = x.transpose();
    perm_err = std::max(perm_err, (xb.transpose() - permute_rows(xt, pb)).cwiseAbs().maxCoeff());
    if (c.use_cal) swap_err = std::max(swap_err, (xs - xt).cwiseAbs().maxCoeff());
  }
  return {perm_err <= kEquivarianceTolerance && swap_err <= kEquivarianceTolerance,
          fmt("%d random settings: permutation %.2g, swap-transpose %.2g (<= %g)", kEquivarianceSettings, perm_err,
              swap_err, kEquivarianceTolerance)};
}

Outcome learning_check() {
  const Run& run = experiments.moderate_full();
  const double chance = 1.0 / static_cast<double>(kKeypoints);
  const double decisions = static_cast<double>(experiments.split(kModerate).test.size() * kKeypoints);
  const double band = kBaselineBandSigmas * std::sqrt(chance * (1.0 - chance) / decisions);
  const bool learned = run.test_accuracy >= kLearnedAccuracy;
  const bool baseline = std::abs(run.untrained_accuracy - chance) <= band;
  const bool fast = run.train_seconds < kLearningSeconds;
  return {learned && baseline && fast,
          fmt("%s regime: trained %.4f (>= %g) %s; untrained %.4f vs band %.3f +- %.4f %s; %.0f s (< %g s)",
              kModerate.name, run.test_accuracy, kLearnedAccuracy, learned ? "ok" : "LOW", run.untrained_accuracy,
              chance, band, baseline ? "ok" : "OUTSIDE", run.train_seconds, kLearningSeconds)};
}

Outcome ablation_direction() {
  const double full = experiments.harder_full().test_accuracy;
  const double no_sal = experiments.get("harder/no-sal", kHarder, desk(3, false, true)).test_accuracy;
  const double no_cal = experiments.get("harder/no-cal", kHarder, desk(3, true, false)).test_accuracy;
  const bool pass = full - no_sal >= kAblationMargin && full - no_cal >= kAblationMargin;
  return {pass, fmt("%s regime: full %.4f, no-sal %.4f (gap %+.4f), no-cal %.4f (gap %+.4f), required gap >= %g",
                    kHarder.name, full, no_sal, full - no_sal, no_cal, full - no_cal, kAblationMargin)};
}

Outcome pattern_recovery() {
  const Run& run = experiments.moderate_full();
  const Split& split = experiments.split(kModerate);
  bool pass = true;
  std::string detail;
  for (std::size_t c = 0; c < kCategories; ++c) {
    const CategoryTemplate& tmpl = split.data.categories[c];
    std::vector<SampleAdjacency> adj;
    for (const auto& s : split.train) {
      if (s.category != c) continue;
      if (adj.size() >= 2 * kPatternPairsPerCategory) break;
      const PaddedPair p = pad_to_common_size(s.a, s.b);
      const ForwardTrace t = forward(run.params, run.config, p.a, p.b);
      adj.push_back({extract_sample_adjacency(t, Image::A), p.a.labels});
      adj.push_back({extract_sample_adjacency(t, Image::B), p.b.labels});
    }
    const LearntPattern pattern = aggregate_category(adj, tmpl.labels);
    const double score = pattern_recovery_score(pattern, tmpl);
    const double p95 = quantile(pattern_recovery_null(pattern, tmpl, kNullTrials, 7 + c), kNullQuantile);
    pass = pass && score > p95;
    detail += fmt("%s%s recovery %.3f vs null p95 %.3f", c ? "; " : "", tmpl.name.c_str(), score, p95);
  }
  return {pass, detail};
}

Outcome layer_trend() {
  const Run& one = experiments.get("harder/1-layer", kHarder, desk(1));
  const Run& two = experiments.get("harder/2-layer", kHarder, desk(2));
  const Run& three = experiments.harder_full();
  const double gain = two.test_accuracy - one.test_accuracy;
  const double plateau = three.test_accuracy - two.test_accuracy;
  const bool monotone = one.train_seconds < two.train_seconds && two.train_seconds < three.train_seconds;
  const bool pass = gain >= kLayerGain && std::abs(plateau) <= kLayerSaturation && monotone;
  return {pass, fmt("%s regime: 1/2/3 layers %.4f/%.4f/%.4f; 2-1 %+.4f (>= %g), 3-2 %+.4f (within %g); "
                    "train time %.0f/%.0f/%.0f s %s",
                    kHarder.name, one.test_accuracy, two.test_accuracy, three.test_accuracy, gain, kLayerGain, plateau,
                    kLayerSaturation, one.train_seconds, two.train_seconds, three.train_seconds,
                    monotone ? "increasing" : "NOT increasing")};
}

// Test-side binary cross entropy, written out entry by entry.
double reference_bce(const Matrix& x, const Matrix& gt, double pos_weight) {
  double sum = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double p = std::max(x.data()[k], kProbFloor), q = std::max(1.0 - x.data()[k], kProbFloor);
    sum -= gt.data()[k] > 0.5 ? pos_weight * std::log(p) : std::log(q);
  }
  return sum;
}

Outcome loss_contract() {
  auto one = [](double v) { return Matrix::Constant(1, 1, v); };
  const Matrix valid = one(1.0);
  double example_err = 0.0;
  example_err = std::max(example_err, std::abs(weighted_bce_loss(one(0.5), one(1.0), valid, 5.0) - 3.4657359028));
  example_err = std::max(example_err, std::abs(weighted_bce_loss(one(0.5), one(0.0), valid, 5.0) - 0.6931471806));
  Matrix eye = Matrix::Identity(3, 3);
  example_err = std::max(example_err, std::abs(weighted_bce_loss(eye, eye, Matrix::Ones(3, 3), 5.0)));
  // 2x2: positives at 0.8 and 0.6, negatives at 0.3 and 0.1, w = 5.
  Matrix x(2, 2), gt(2, 2);
  x << 0.8, 0.3, 0.1, 0.6;
  gt << 1, 0, 0, 1;
  const double by_hand = -5.0 * std::log(0.8) - std::log(0.7) - std::log(0.9) - 5.0 * std::log(0.6);
  example_err = std::max(example_err, std::abs(weighted_bce_loss(x, gt, Matrix::Ones(2, 2), 5.0) - by_hand));

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(1e-6, 1.0 - 1e-6);
  std::bernoulli_distribution coin(0.2);
  double reduction_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Matrix xr(5, 5), g(5, 5);
    for (Eigen::Index k = 0; k < xr.size(); ++k) {
      xr.data()[k] = u(rng);
      g.data()[k] = coin(rng) ? 1.0 : 0.0;
    }
    const Matrix ones = Matrix::Ones(5, 5);
    const double w1 = weighted_bce_loss(xr, g, ones, 1.0);
    reduction_err = std::max({reduction_err, std::abs(w1 - binary_cross_entropy(xr, g, ones)),
                              std::abs(w1 - reference_bce(xr, g, 1.0))});
  }
  return {example_err <= kLossExampleTolerance && reduction_err <= kLossReductionTolerance,
          fmt("hand-derived examples %.2g (<= %g); w=1 vs unweighted BCE %.2g (<= %g)", example_err,
              kLossExampleTolerance, reduction_err, kLossReductionTolerance)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"sinkhorn properties", sinkhorn_properties},
      {"hungarian oracle", hungarian_oracle},
      {"equivariance suite", equivariance},
      {"learning check", learning_check},
      {"ablation direction", ablation_direction},
      {"pattern recovery", pattern_recovery},
      {"layer-count trend", layer_trend},
      {"loss contract", loss_contract},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  std::vector<std::string> lines;
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    std::printf("criterion %d: %s\n", id, criteria[k].first);
    std::fflush(stdout);
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    lines.push_back(fmt("[%s] criterion %d %s: ", o.pass ? "PASS" : "FAIL", id, criteria[k].first) + o.detail);
    std::printf("%s\n", lines.back().c_str());
    std::fflush(stdout);
  }
  std::printf("\nsummary\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  std::printf("%d of %zu criteria failed\n", failures, lines.size());
  return failures == 0 ? 0 : 1;
}
