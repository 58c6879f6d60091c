#include "glam/cli.hpp"

#include "glam/attention.hpp"
#include "glam/gradcheck.hpp"
#include "glam/pattern.hpp"
#include "glam/synthdata.hpp"
#include "glam/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace glam {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

/// Raised for flag combinations CLI11 cannot express.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Verification failed; the message has already been printed.
class VerificationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::shared_ptr<spdlog::logger> make_logger() {
  auto logger = spdlog::get("glam");
  if (!logger) {
    logger = spdlog::stderr_logger_st("glam");
    logger->set_pattern("[%l] %v");
  }
  const char* level = std::getenv("GLAM_LOG");
  logger->set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
  return logger;
}

std::string dataset_file(const std::string& path) {
  return fs::is_directory(path) ? (fs::path(path) / "dataset.txt").string() : path;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

json gen_config_json(const GenConfig& g, std::size_t categories, std::size_t n_keypoints,
                     std::size_t feat_dim) {
  return json{{"categories", categories},
              {"n_keypoints", n_keypoints},
              {"feat_dim", feat_dim},
              {"seed", g.seed},
              {"feature_noise_sigma", g.feature_noise_sigma},
              {"position_noise_sigma", g.position_noise_sigma},
              {"max_rotation", g.max_rotation},
              {"min_scale", g.min_scale},
              {"max_scale", g.max_scale},
              {"max_translation", g.max_translation},
              {"corruption_prob", g.corruption_prob},
              {"dropout_prob", g.dropout_prob},
              {"pairs_per_category", g.pairs_per_category},
              {"first_index", g.first_index},
              {"shuffle", g.shuffle}};
}

json train_config_json(const TrainConfig& t) {
  return json{{"pos_weight", t.pos_weight},
              {"learning_rate", t.learning_rate},
              {"epochs", t.epochs},
              {"seed", t.seed},
              {"optimizer", t.optimizer == OptimizerKind::AdaptiveMoment ? "adam" : "sgd"},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"epsilon", t.epsilon}};
}

json network_json(const NetworkConfig& c) { return json::parse(network_config_to_json(c)); }

void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed, json inputs,
                    std::vector<std::string> outputs, json config) {
  std::sort(outputs.begin(), outputs.end());
  json m{{"tool", "glam"},
         {"version", kToolVersion},
         {"command", command},
         {"seed", seed},
         {"inputs", std::move(inputs)},
         {"outputs", outputs},
         {"config", std::move(config)}};
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ---------------------------------------------------------------- network flags

struct NetworkFlags {
  std::size_t layers = 3;
  std::size_t heads = 4;
  std::size_t dim = 64;
  int sinkhorn_iters = 5;
  bool paper_scale = false;
  bool no_sal = false;
  bool no_cal = false;
  CLI::Option* layers_opt = nullptr;
  CLI::Option* heads_opt = nullptr;
  CLI::Option* dim_opt = nullptr;
  CLI::Option* sinkhorn_opt = nullptr;

  void attach(CLI::App* app) {
    layers_opt = app->add_option("--layers", layers, "Attention layers")->capture_default_str();
    heads_opt = app->add_option("--heads", heads, "Heads per attention module")->capture_default_str();
    dim_opt = app->add_option("--dim", dim, "Feature and attention width")->capture_default_str();
    sinkhorn_opt =
        app->add_option("--sinkhorn-iters", sinkhorn_iters, "Sinkhorn rounds per cross-attention head")
            ->capture_default_str();
    app->add_flag("--paper-scale", paper_scale, "Start from the full-size preset (compute heavy)");
    app->add_flag("--no-sal", no_sal, "Ablate the self-attention layers");
    app->add_flag("--no-cal", no_cal, "Ablate the cross-attention layers");
  }

  NetworkConfig resolve() const {
    NetworkConfig c = paper_scale ? NetworkConfig::paper_scale() : NetworkConfig::desk_scale();
    if (!paper_scale || layers_opt->count()) c.n_layers = layers;
    if (!paper_scale || heads_opt->count()) c.n_self_heads = c.n_cross_heads = heads;
    if (!paper_scale || dim_opt->count()) {
      c.feat_dim = c.self_dim = c.cross_dim = dim;
      c.encoder_hidden = std::max<std::size_t>(1, dim / 4);
    }
    if (!paper_scale || sinkhorn_opt->count()) c.sinkhorn_iters = sinkhorn_iters;
    c.use_sal = !no_sal;
    c.use_cal = !no_cal;
    c.validate();
    return c;
  }
};

void require_feat_dim(const NetworkConfig& c, const Dataset& ds) {
  if (ds.feat_dim != c.feat_dim) {
    throw UsageError("dataset feature dim " + std::to_string(ds.feat_dim) + " does not match network dim " +
                     std::to_string(c.feat_dim));
  }
}

Checkpoint load_checked(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint " + path + " not found");
  Checkpoint ck = load_checkpoint(path);
  ck.config.validate();
  ck.params.check_layout(ck.config);
  return ck;
}

// ---------------------------------------------------------------- commands

struct GenDataArgs {
  std::size_t categories = 2;
  std::size_t pairs = 10;
  std::size_t n_keypoints = 10;
  std::size_t feat_dim = 64;
  GenConfig gen;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  GenConfig g = a.gen;
  g.pairs_per_category = a.pairs;
  g.validate();
  if (a.categories == 0) throw UsageError("--categories must be >= 1");
  const Dataset ds = generate_dataset(a.categories, a.n_keypoints, a.feat_dim, g);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_dataset((dir / "dataset.txt").string(), ds);
  write_manifest(dir, "gen-data", g.seed, json::object(), {"dataset.txt", "manifest.json"},
                 json{{"generation", gen_config_json(g, a.categories, a.n_keypoints, a.feat_dim)}});
  out << "wrote " << ds.samples.size() << " samples to " << (dir / "dataset.txt").string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  NetworkFlags net;
  TrainConfig train;
  std::string optimizer = "adam";
  std::string train_path, val_path, out;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const NetworkConfig c = a.net.resolve();
  TrainConfig tc = a.train;
  tc.optimizer = a.optimizer == "sgd" ? OptimizerKind::PlainGradient : OptimizerKind::AdaptiveMoment;
  tc.validate();

  const std::string train_file = dataset_file(a.train_path);
  const std::string val_file = a.val_path.empty() ? train_file : dataset_file(a.val_path);
  const Dataset train_ds = load_dataset(train_file);
  const Dataset val_ds = val_file == train_file ? train_ds : load_dataset(val_file);
  require_feat_dim(c, train_ds);
  require_feat_dim(c, val_ds);

  auto log = make_logger();
  GlamParameters params = GlamParameters::init(c, tc.seed);
  log->info("training {} parameters on {} pairs for {} epochs", params.parameter_count(),
            train_ds.samples.size(), tc.epochs);
  TrainCallbacks cb;
  cb.on_epoch = [&](std::size_t epoch, double loss, double acc, double secs) {
    log->info("epoch {} loss {:.6f} val accuracy {:.4f} ({:.1f}s)", epoch, loss, acc, secs);
  };
  const TrainReport report = train(params, c, train_ds.samples, val_ds.samples, tc, cb);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_checkpoint((dir / "checkpoint.json").string(), params, c);
  write_text(dir / "report.csv", report.to_csv());
  write_text(dir / "timing.csv", report.timing_csv());
  write_manifest(dir, "train", tc.seed, json{{"train", train_file}, {"val", val_file}},
                 {"checkpoint.json", "report.csv", "timing.csv", "manifest.json"},
                 json{{"network", network_json(c)}, {"training", train_config_json(tc)}});
  if (report.epochs()) out << "final val accuracy " << fmt_double(report.accuracy.back()) << "\n";
  out << "wrote " << (dir / "checkpoint.json").string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checked(a.checkpoint);
  const std::string data_file = dataset_file(a.data);
  const Dataset ds = load_dataset(data_file);
  require_feat_dim(ck.config, ds);
  if (ds.samples.empty()) throw UsageError("dataset " + data_file + " has no samples");

  std::map<std::size_t, std::vector<double>> per_category;
  std::vector<double> all;
  for (const auto& s : ds.samples) {
    const double acc = sample_accuracy(ck.params, ck.config, s);
    per_category[s.category].push_back(acc);
    all.push_back(acc);
  }
  auto mean = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  std::string csv = "category,pairs,accuracy\n";
  for (const auto& [cat, v] : per_category) {
    const std::string name = cat < ds.categories.size() ? ds.categories[cat].name : std::to_string(cat);
    csv += name + "," + std::to_string(v.size()) + "," + fmt_double(mean(v)) + "\n";
  }
  csv += "mean," + std::to_string(all.size()) + "," + fmt_double(mean(all)) + "\n";
  out << csv;
  if (!a.out.empty()) {
    const fs::path dir(a.out);
    fs::create_directories(dir);
    write_text(dir / "metrics.csv", csv);
    write_manifest(dir, "eval", 0, json{{"checkpoint", a.checkpoint}, {"data", data_file}},
                   {"metrics.csv", "manifest.json"}, json{{"network", network_json(ck.config)}});
  }
  return kExitOk;
}

struct PatternArgs {
  std::string checkpoint, data, out;
  std::size_t pairs_per_category = 200;
  double keep_fraction = 0.7;
  std::size_t null_trials = 1000;
  std::uint64_t seed = 0;
};

int cmd_extract_pattern(const PatternArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checked(a.checkpoint);
  if (!ck.config.use_sal)
    throw UsageError("checkpoint was trained without self-attention; there is no pattern to extract");
  const std::string data_file = dataset_file(a.data);
  const Dataset ds = load_dataset(data_file);
  require_feat_dim(ck.config, ds);
  if (!(a.keep_fraction > 0.0 && a.keep_fraction <= 1.0)) throw UsageError("--keep-fraction must lie in (0, 1]");

  const fs::path dir(a.out);
  fs::create_directories(dir);
  std::vector<std::string> outputs{"manifest.json", "recovery.csv"};
  std::string csv = "category,samples,recovery,null_mean,null_p95\n";
  std::mt19937_64 rng(a.seed);
  for (std::size_t c = 0; c < ds.categories.size(); ++c) {
    const CategoryTemplate& tmpl = ds.categories[c];
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
      if (ds.samples[i].category == c) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    if (members.size() > a.pairs_per_category) members.resize(a.pairs_per_category);
    std::sort(members.begin(), members.end());
    if (members.empty()) continue;

    std::vector<SampleAdjacency> adj;
    for (std::size_t i : members) {
      const auto& s = ds.samples[i];
      const PaddedPair p = pad_to_common_size(s.a, s.b);
      const ForwardTrace t = forward(ck.params, ck.config, p.a, p.b);
      adj.push_back({extract_sample_adjacency(t, Image::A), p.a.labels});
      adj.push_back({extract_sample_adjacency(t, Image::B), p.b.labels});
    }
    const LearntPattern pattern = aggregate_category(adj, tmpl.labels);
    export_heatmap(filter_top_edges(pattern, a.keep_fraction), (dir / tmpl.name).string());
    write_text(dir / (tmpl.name + "_unfiltered.csv"), heatmap_csv(pattern));
    outputs.insert(outputs.end(), {tmpl.name + ".csv", tmpl.name + ".pgm", tmpl.name + "_unfiltered.csv"});

    const double score = pattern_recovery_score(pattern, tmpl);
    const auto null = pattern_recovery_null(pattern, tmpl, a.null_trials, a.seed + c);
    const double null_mean = std::accumulate(null.begin(), null.end(), 0.0) / static_cast<double>(null.size());
    csv += tmpl.name + "," + std::to_string(members.size()) + "," + fmt_double(score) + "," +
           fmt_double(null_mean) + "," + fmt_double(quantile(null, 0.95)) + "\n";
  }
  write_text(dir / "recovery.csv", csv);
  write_manifest(dir, "extract-pattern", a.seed, json{{"checkpoint", a.checkpoint}, {"data", data_file}},
                 outputs,
                 json{{"network", network_json(ck.config)},
                      {"pattern",
                       {{"pairs_per_category", a.pairs_per_category},
                        {"keep_fraction", a.keep_fraction},
                        {"null_trials", a.null_trials}}}});
  out << csv;
  return kExitOk;
}

struct GradcheckArgs {
  GradcheckOptions options;
  double tolerance = 1e-3;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (!(a.options.step > 0.0)) throw UsageError("--step must be > 0");
  const GradcheckReport report = gradient_check(a.options);
  for (const auto& [group, worst] : report.worst_by_group())
    out << group << " worst relative error " << fmt_double(worst) << "\n";
  const auto failed = report.failures(a.tolerance);
  if (failed.empty()) {
    out << "gradcheck passed (tolerance " << a.tolerance << ")\n";
    return kExitOk;
  }
  out << "gradcheck FAILED (tolerance " << a.tolerance << "):";
  for (const auto& name : failed) out << ' ' << name;
  out << "\n";
  return kExitVerification;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graph learning and matching with attention"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic correspondence dataset");
  gen_cmd->add_option("--categories", gen.categories)->capture_default_str();
  gen_cmd->add_option("--pairs", gen.pairs, "Pairs per category")->capture_default_str();
  gen_cmd->add_option("--n-keypoints", gen.n_keypoints)->capture_default_str()->check(CLI::Range(2, 100000));
  gen_cmd->add_option("--feat-dim", gen.feat_dim)->capture_default_str()->check(CLI::Range(1, 100000));
  gen_cmd->add_option("--noise", gen.gen.feature_noise_sigma, "Feature noise sigma")->capture_default_str();
  gen_cmd->add_option("--position-noise", gen.gen.position_noise_sigma)->capture_default_str();
  gen_cmd->add_option("--rotation", gen.gen.max_rotation, "Max rotation (radians)")->capture_default_str();
  gen_cmd->add_option("--corruption", gen.gen.corruption_prob,
                      "Probability that a keypoint's appearance is replaced by a random feature")
      ->capture_default_str();
  gen_cmd->add_option("--dropout", gen.gen.dropout_prob)->capture_default_str();
  gen_cmd->add_option("--seed", gen.gen.seed)->capture_default_str();
  gen_cmd->add_option("--first-index", gen.gen.first_index,
                      "Index of the first pair; held-out splits share --seed and use a disjoint range")
      ->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a network on a dataset");
  tr.net.attach(train_cmd);
  train_cmd->add_option("--pos-weight", tr.train.pos_weight)->capture_default_str();
  train_cmd->add_option("--epochs", tr.train.epochs)->capture_default_str();
  train_cmd->add_option("--lr", tr.train.learning_rate)->capture_default_str();
  train_cmd->add_option("--optimizer", tr.optimizer)
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  train_cmd->add_option("--seed", tr.train.seed)->capture_default_str();
  train_cmd->add_option("--train", tr.train_path, "Training dataset (file or gen-data directory)")->required();
  train_cmd->add_option("--val", tr.val_path, "Validation dataset; defaults to the training set");
  train_cmd->add_option("--out", tr.out, "Output directory")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Report matching accuracy of a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--out", ev.out, "Optional output directory for metrics.csv");

  PatternArgs pa;
  auto* pattern_cmd = app.add_subcommand("extract-pattern", "Export learnt per-category graph patterns");
  pattern_cmd->add_option("--checkpoint", pa.checkpoint)->required();
  pattern_cmd->add_option("--data", pa.data)->required();
  pattern_cmd->add_option("--out", pa.out)->required();
  pattern_cmd->add_option("--pairs-per-category", pa.pairs_per_category)->capture_default_str();
  pattern_cmd->add_option("--keep-fraction", pa.keep_fraction)->capture_default_str();
  pattern_cmd->add_option("--null-trials", pa.null_trials)->capture_default_str()->check(CLI::Range(1, 10000000));
  pattern_cmd->add_option("--seed", pa.seed)->capture_default_str();

  GradcheckArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Check adjoints against finite differences");
  grad_cmd->add_option("--tolerance", gc.tolerance)->capture_default_str();
  grad_cmd->add_option("--step", gc.options.step)->capture_default_str();
  grad_cmd->add_option("--seed", gc.options.seed)->capture_default_str();
  grad_cmd->add_option("--n-keypoints", gc.options.n_keypoints)->capture_default_str()->check(CLI::Range(2, 64));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(tr, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*pattern_cmd) return cmd_extract_pattern(pa, out);
    if (*grad_cmd) return cmd_gradcheck(gc, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace glam
