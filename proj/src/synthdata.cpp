#include "glam/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace glam {

namespace {

std::mt19937_64 stream_for(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

bool is_symmetric_01(const Matrix& m) {
  if (m.rows() != m.cols()) return false;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (m(i, i) != 0.0) return false;
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (m(i, j) != m(j, i) || m(i, j) < 0.0 || m(i, j) > 1.0) return false;
  }
  return true;
}

}  // namespace

void CategoryTemplate::validate() const {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (prototype_features.rows() != n || prototype_positions.rows() != n ||
      prototype_positions.cols() != 2 || planted_adjacency.rows() != n || planted_adjacency.cols() != n)
    throw ShapeError("CategoryTemplate " + name + ": inconsistent sizes");
  if (!is_symmetric_01(planted_adjacency))
    throw ContractError("CategoryTemplate " + name +
                        ": planted adjacency must be symmetric with zero diagonal and entries in [0,1]");
}

void GenConfig::validate() const {
  if (!(feature_noise_sigma >= 0.0) || !(position_noise_sigma >= 0.0))
    throw ContractError("GenConfig: noise sigmas must be >= 0");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0))
    throw ContractError("GenConfig: dropout_prob must lie in [0, 1)");
  if (!(min_scale > 0.0 && min_scale <= max_scale))
    throw ContractError("GenConfig: need 0 < min_scale <= max_scale");
  if (!(corruption_prob >= 0.0 && corruption_prob <= 1.0))
    throw ContractError("GenConfig: corruption_prob must lie in [0, 1]");
  if (!(max_rotation >= 0.0) || !(max_translation >= 0.0))
    throw ContractError("GenConfig: rotation and translation ranges must be >= 0");
}

CategoryTemplate make_template(std::size_t n, std::size_t d, std::uint64_t seed,
                               const TemplateOptions& options) {
  if (n < 2) throw ContractError("make_template: need at least 2 keypoints");
  if (d < 1) throw ContractError("make_template: need feature dim >= 1");
  const double radius = std::sqrt(static_cast<double>(d));
  const double margin = options.margin < 0.0 ? 0.5 * radius : options.margin;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  CategoryTemplate t;
  t.name = "category";
  const auto rows = static_cast<Eigen::Index>(n);
  t.prototype_features.resize(rows, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < rows; ++i) {
    std::size_t attempts = 0;
    for (;;) {
      if (attempts++ >= options.max_retries)
        throw ContractError("make_template: feature margin " + std::to_string(margin) +
                            " unreachable for n=" + std::to_string(n) + ", d=" + std::to_string(d));
      Eigen::RowVectorXd v(static_cast<Eigen::Index>(d));
      for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = normal(rng);
      const double norm = v.norm();
      if (norm == 0.0) continue;
      v *= radius / norm;
      bool ok = true;
      for (Eigen::Index j = 0; j < i && ok; ++j) ok = (t.prototype_features.row(j) - v).norm() >= margin;
      if (ok) {
        t.prototype_features.row(i) = v;
        break;
      }
    }
  }

  t.prototype_positions.resize(rows, 2);
  for (Eigen::Index i = 0; i < rows; ++i) {
    t.prototype_positions(i, 0) = unit(rng);
    t.prototype_positions(i, 1) = unit(rng);
  }

  const std::size_t k = std::min(options.neighbors, n - 1);
  t.planted_adjacency = Matrix::Zero(rows, rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    std::vector<Eigen::Index> others;
    for (Eigen::Index j = 0; j < rows; ++j)
      if (j != i) others.push_back(j);
    std::stable_sort(others.begin(), others.end(), [&](Eigen::Index a, Eigen::Index b) {
      return (t.prototype_positions.row(a) - t.prototype_positions.row(i)).squaredNorm() <
             (t.prototype_positions.row(b) - t.prototype_positions.row(i)).squaredNorm();
    });
    for (std::size_t m = 0; m < k; ++m) {
      t.planted_adjacency(i, others[m]) = 1.0;
      t.planted_adjacency(others[m], i) = 1.0;
    }
  }

  for (std::size_t i = 0; i < n; ++i) t.labels.push_back("kp" + std::to_string(i));
  return t;
}

namespace {

struct View {
  std::vector<std::size_t> ids;  // template keypoint index per row
  PointFeatureSet set;
};

View perturb(const CategoryTemplate& tmpl, const GenConfig& cfg, const std::vector<bool>& keep,
             std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double angle = (2.0 * unit(rng) - 1.0) * cfg.max_rotation;
  const double scale = cfg.min_scale + (cfg.max_scale - cfg.min_scale) * unit(rng);
  const double tx = (2.0 * unit(rng) - 1.0) * cfg.max_translation;
  const double ty = (2.0 * unit(rng) - 1.0) * cfg.max_translation;
  const double c = std::cos(angle), s = std::sin(angle);

  View v;
  for (std::size_t k = 0; k < keep.size(); ++k)
    if (keep[k]) v.ids.push_back(k);
  if (cfg.shuffle) std::shuffle(v.ids.begin(), v.ids.end(), rng);

  const auto n = static_cast<Eigen::Index>(v.ids.size());
  const auto d = static_cast<Eigen::Index>(tmpl.dim());
  v.set.features.resize(n, d);
  v.set.positions.resize(n, 2);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto k = static_cast<Eigen::Index>(v.ids[static_cast<std::size_t>(r)]);
    for (Eigen::Index j = 0; j < d; ++j)
      v.set.features(r, j) =
          tmpl.prototype_features(k, j) + cfg.feature_noise_sigma * normal(rng);
    const double px = tmpl.prototype_positions(k, 0) - 0.5;
    const double py = tmpl.prototype_positions(k, 1) - 0.5;
    v.set.positions(r, 0) = scale * (c * px - s * py) + 0.5 + tx + cfg.position_noise_sigma * normal(rng);
    v.set.positions(r, 1) = scale * (s * px + c * py) + 0.5 + ty + cfg.position_noise_sigma * normal(rng);
    v.set.labels.push_back(tmpl.labels[static_cast<std::size_t>(k)]);
  }
  if (cfg.corruption_prob > 0.0) {
    const double radius = std::sqrt(static_cast<double>(d));
    for (Eigen::Index r = 0; r < n; ++r) {
      if (unit(rng) >= cfg.corruption_prob) continue;
      Eigen::RowVectorXd f(d);
      for (Eigen::Index j = 0; j < d; ++j) f(j) = normal(rng);
      v.set.features.row(r) = radius * f / f.norm();
    }
  }

  // Fit into [0,1]² with a uniform scale so the aspect ratio survives.
  const Eigen::RowVector2d lo = v.set.positions.colwise().minCoeff();
  const Eigen::RowVector2d hi = v.set.positions.colwise().maxCoeff();
  const double extent = (hi - lo).maxCoeff();
  for (Eigen::Index r = 0; r < n; ++r) {
    if (extent > 0.0) {
      v.set.positions.row(r) = (v.set.positions.row(r) - lo) / extent;
    } else {
      v.set.positions.row(r).setConstant(0.5);
    }
  }
  return v;
}

}  // namespace

CorrespondenceSample sample_pair(const CategoryTemplate& tmpl, const GenConfig& config,
                                 std::uint64_t index, std::size_t category) {
  tmpl.validate();
  config.validate();
  std::mt19937_64 rng = stream_for(config.seed, category, index);
  std::bernoulli_distribution drop(config.dropout_prob);
  const std::size_t n = tmpl.size();
  constexpr int kMaxRetries = 1000;

  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    std::vector<bool> keep_a(n), keep_b(n);
    std::size_t common = 0;
    for (std::size_t k = 0; k < n; ++k) {
      keep_a[k] = !drop(rng);
      keep_b[k] = !drop(rng);
      if (keep_a[k] && keep_b[k]) ++common;
    }
    if (common < 2) continue;
    View va = perturb(tmpl, config, keep_a, rng);
    View vb = perturb(tmpl, config, keep_b, rng);

    CorrespondenceSample s;
    s.category = category;
    s.gt.assign(va.ids.size(), -1);
    std::vector<int> where_b(n, -1);
    for (std::size_t j = 0; j < vb.ids.size(); ++j) where_b[vb.ids[j]] = static_cast<int>(j);
    for (std::size_t i = 0; i < va.ids.size(); ++i) s.gt[i] = where_b[va.ids[i]];
    s.a = std::move(va.set);
    s.b = std::move(vb.set);
    return s;
  }
  throw ContractError("sample_pair: could not keep 2 common keypoints after " +
                      std::to_string(kMaxRetries) + " attempts");
}

Dataset generate_dataset(std::size_t categories, std::size_t n_keypoints, std::size_t feat_dim,
                         const GenConfig& config) {
  config.validate();
  Dataset ds;
  ds.feat_dim = feat_dim;
  for (std::size_t c = 0; c < categories; ++c) {
    std::mt19937_64 seeder = stream_for(config.seed, 0x7e3b1a5ULL, c);
    CategoryTemplate t = make_template(n_keypoints, feat_dim, seeder());
    t.name = "cat" + std::to_string(c);
    ds.categories.push_back(std::move(t));
  }
  for (std::size_t c = 0; c < categories; ++c)
    for (std::size_t i = 0; i < config.pairs_per_category; ++i)
      ds.samples.push_back(sample_pair(ds.categories[c], config, config.first_index + i, c));
  return ds;
}

bool Dataset::operator==(const Dataset& o) const {
  if (feat_dim != o.feat_dim || categories.size() != o.categories.size() ||
      samples.size() != o.samples.size())
    return false;
  for (std::size_t c = 0; c < categories.size(); ++c) {
    const auto& x = categories[c];
    const auto& y = o.categories[c];
    if (x.name != y.name || x.labels != y.labels || x.prototype_features != y.prototype_features ||
        x.prototype_positions != y.prototype_positions || x.planted_adjacency != y.planted_adjacency)
      return false;
  }
  auto same_set = [](const PointFeatureSet& a, const PointFeatureSet& b) {
    return a.features == b.features && a.positions == b.positions && a.labels == b.labels;
  };
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& x = samples[s];
    const auto& y = o.samples[s];
    if (x.category != y.category || x.gt != y.gt || !same_set(x.a, y.a) || !same_set(x.b, y.b))
      return false;
  }
  return true;
}

// ---------------------------------------------------------------- text format

namespace {

void put_double(std::string& out, double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

void put_matrix(std::string& out, const char* tag, const Matrix& m) {
  out += tag;
  out += '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ' ';
      put_double(out, m(r, c));
    }
    out += '\n';
  }
}

void put_labels(std::string& out, const std::vector<std::string>& labels) {
  out += "labels";
  for (const auto& l : labels) {
    if (l.empty() || l.find_first_of(" \t\r\n") != std::string::npos)
      throw ContractError("dataset: label '" + l + "' is empty or contains whitespace");
    out += ' ';
    out += l;
  }
  out += '\n';
}

void put_set(std::string& out, const char* tag, const PointFeatureSet& s) {
  if (s.labels.size() != s.size())
    throw ContractError(std::string("dataset: set ") + tag + " needs one label per keypoint");
  out += "set ";
  out += tag;
  out += ' ' + std::to_string(s.size()) + '\n';
  put_labels(out, s.labels);
  put_matrix(out, "features", s.features);
  put_matrix(out, "positions", s.positions);
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : is_(text) {}

  std::size_t line() const { return line_; }

  std::vector<std::string> next(const char* expecting) {
    std::string raw;
    while (std::getline(is_, raw)) {
      ++line_;
      std::istringstream ls(raw);
      std::vector<std::string> tokens;
      for (std::string tok; ls >> tok;) tokens.push_back(tok);
      if (!tokens.empty()) return tokens;
    }
    throw ParseError(line_ + 1, std::string("unexpected end of file, expected ") + expecting);
  }

  std::vector<std::string> expect(const char* keyword, std::size_t n_tokens) {
    auto t = next(keyword);
    if (t[0] != keyword) throw ParseError(line_, std::string("expected '") + keyword + "', got '" + t[0] + "'");
    if (n_tokens && t.size() != n_tokens)
      throw ParseError(line_, std::string("'") + keyword + "' record needs " + std::to_string(n_tokens - 1) +
                                  " fields, got " + std::to_string(t.size() - 1));
    return t;
  }

  double to_double(const std::string& s, const char* field) const {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ParseError(line_, std::string("bad number '") + s + "' in " + field);
    return v;
  }

  long long to_int(const std::string& s, const char* field) const {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ParseError(line_, std::string("bad integer '") + s + "' in " + field);
    return v;
  }

  std::size_t to_count(const std::string& s, const char* field) const {
    const long long v = to_int(s, field);
    if (v < 0) throw ParseError(line_, std::string("negative count in ") + field);
    return static_cast<std::size_t>(v);
  }

  Matrix matrix(const char* tag, std::size_t rows, std::size_t cols) {
    expect(tag, 1);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
      auto t = next(tag);
      if (t.size() != cols)
        throw ParseError(line_, std::string(tag) + " row " + std::to_string(r) + " has " +
                                    std::to_string(t.size()) + " values, expected " + std::to_string(cols));
      for (std::size_t c = 0; c < cols; ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = to_double(t[c], tag);
    }
    return m;
  }

  std::vector<std::string> labels(std::size_t n) {
    auto t = expect("labels", 0);
    if (t.size() - 1 != n)
      throw ParseError(line_, "expected " + std::to_string(n) + " labels, got " + std::to_string(t.size() - 1));
    return {t.begin() + 1, t.end()};
  }

 private:
  std::istringstream is_;
  std::size_t line_ = 0;
};

PointFeatureSet read_set(LineReader& in, const char* tag, std::size_t d) {
  auto t = in.expect("set", 3);
  if (t[1] != tag) throw ParseError(in.line(), std::string("expected set ") + tag + ", got set " + t[1]);
  const std::size_t n = in.to_count(t[2], "set size");
  PointFeatureSet s;
  s.labels = in.labels(n);
  s.features = in.matrix("features", n, d);
  s.positions = in.matrix("positions", n, 2);
  return s;
}

}  // namespace

std::string dataset_to_string(const Dataset& ds) {
  std::string out;
  out += "glam-dataset " + std::to_string(kDatasetVersion) + '\n';
  out += "feat_dim " + std::to_string(ds.feat_dim) + '\n';
  out += "categories " + std::to_string(ds.categories.size()) + '\n';
  for (const auto& c : ds.categories) {
    if (c.name.empty() || c.name.find_first_of(" \t\r\n") != std::string::npos)
      throw ContractError("dataset: category name '" + c.name + "' is empty or contains whitespace");
    out += "category " + c.name + ' ' + std::to_string(c.size()) + '\n';
    put_labels(out, c.labels);
    put_matrix(out, "prototype_features", c.prototype_features);
    put_matrix(out, "prototype_positions", c.prototype_positions);
    put_matrix(out, "planted_adjacency", c.planted_adjacency);
  }
  out += "samples " + std::to_string(ds.samples.size()) + '\n';
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    out += "sample " + std::to_string(i) + " category " + std::to_string(s.category) + '\n';
    put_set(out, "A", s.a);
    put_set(out, "B", s.b);
    out += "gt";
    for (int g : s.gt) out += ' ' + std::to_string(g);
    out += "\nend\n";
  }
  return out;
}

Dataset dataset_from_string(const std::string& text) {
  LineReader in(text);
  Dataset ds;
  {
    auto t = in.expect("glam-dataset", 2);
    if (in.to_int(t[1], "version") != kDatasetVersion)
      throw ParseError(in.line(), "unsupported dataset version " + t[1]);
  }
  ds.feat_dim = in.to_count(in.expect("feat_dim", 2)[1], "feat_dim");
  const std::size_t n_cat = in.to_count(in.expect("categories", 2)[1], "categories");
  for (std::size_t c = 0; c < n_cat; ++c) {
    auto t = in.expect("category", 3);
    CategoryTemplate tmpl;
    tmpl.name = t[1];
    const std::size_t n = in.to_count(t[2], "category size");
    tmpl.labels = in.labels(n);
    tmpl.prototype_features = in.matrix("prototype_features", n, ds.feat_dim);
    tmpl.prototype_positions = in.matrix("prototype_positions", n, 2);
    tmpl.planted_adjacency = in.matrix("planted_adjacency", n, n);
    ds.categories.push_back(std::move(tmpl));
  }
  const std::size_t n_samples = in.to_count(in.expect("samples", 2)[1], "samples");
  for (std::size_t i = 0; i < n_samples; ++i) {
    auto t = in.expect("sample", 4);
    if (in.to_count(t[1], "sample index") != i)
      throw ParseError(in.line(), "sample record " + t[1] + " out of order, expected " + std::to_string(i));
    if (t[2] != "category") throw ParseError(in.line(), "sample " + t[1] + ": expected 'category' field");
    CorrespondenceSample s;
    s.category = in.to_count(t[3], "category");
    if (s.category >= ds.categories.size())
      throw ParseError(in.line(), "sample " + t[1] + ": unknown category " + t[3]);
    try {
      s.a = read_set(in, "A", ds.feat_dim);
      s.b = read_set(in, "B", ds.feat_dim);
      auto g = in.expect("gt", 0);
      if (g.size() - 1 != s.a.size())
        throw ParseError(in.line(), "gt has " + std::to_string(g.size() - 1) + " entries, expected " +
                                        std::to_string(s.a.size()));
      for (std::size_t k = 1; k < g.size(); ++k) {
        const long long v = in.to_int(g[k], "gt");
        if (v < -1 || v >= static_cast<long long>(s.b.size()))
          throw ParseError(in.line(), "gt entry " + g[k] + " out of range");
        s.gt.push_back(static_cast<int>(v));
      }
      in.expect("end", 1);
    } catch (const ParseError& e) {
      throw ParseError(e.line(), std::string("sample ") + std::to_string(i) + ": " +
                                     std::string(e.what()).substr(std::string(e.what()).find(": ") + 2));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  const std::string text = dataset_to_string(ds);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << text;
  if (!os) throw std::runtime_error("failed writing " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return dataset_from_string(ss.str());
}

}  // namespace glam
