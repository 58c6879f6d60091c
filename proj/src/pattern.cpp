#include "glam/pattern.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace glam {

Matrix extract_sample_adjacency(const ForwardTrace& trace, Image image) {
  if (trace.self_attn.empty() || trace.self_attn.back().empty())
    throw ContractError("extract_sample_adjacency: trace has no self-attention (model trained without it)");
  const auto& heads = trace.self_attn.back();
  const std::size_t which = static_cast<std::size_t>(image);
  Matrix acc = heads.front()[which];
  for (std::size_t i = 1; i < heads.size(); ++i) acc += heads[i][which];
  return acc / static_cast<double>(heads.size());
}

LearntPattern aggregate_category(const std::vector<SampleAdjacency>& samples,
                                 const std::vector<std::string>& universe) {
  const std::size_t n = universe.size();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index.emplace(universe[i], i);

  // Per-cell contributions, summed in sorted order so the mean is exactly
  // independent of the order of `samples`.
  std::vector<std::vector<double>> cells(n * n);
  for (const auto& s : samples) {
    const auto m = static_cast<std::size_t>(s.adjacency.rows());
    if (s.labels.size() != m || static_cast<std::size_t>(s.adjacency.cols()) != m)
      throw ShapeError("aggregate_category: adjacency and labels disagree in size");
    std::vector<std::ptrdiff_t> map(m, -1);
    for (std::size_t r = 0; r < m; ++r) {
      if (s.labels[r] == kDummyLabel) continue;
      auto it = index.find(s.labels[r]);
      if (it == index.end()) throw ContractError("aggregate_category: unknown label " + s.labels[r]);
      map[r] = static_cast<std::ptrdiff_t>(it->second);
    }
    for (std::size_t r = 0; r < m; ++r) {
      if (map[r] < 0) continue;
      for (std::size_t c = 0; c < m; ++c) {
        if (map[c] < 0) continue;
        cells[static_cast<std::size_t>(map[r]) * n + static_cast<std::size_t>(map[c])].push_back(
            s.adjacency(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
      }
    }
  }

  LearntPattern p;
  p.labels = universe;
  const auto N = static_cast<Eigen::Index>(n);
  p.adjacency = Matrix::Zero(N, N);
  p.counts = Matrix::Zero(N, N);
  for (std::size_t k = 0; k < cells.size(); ++k) {
    auto& v = cells[k];
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    const double total = std::accumulate(v.begin(), v.end(), 0.0);
    p.adjacency.data()[k] = total / static_cast<double>(v.size());
    p.counts.data()[k] = static_cast<double>(v.size());
  }
  return p;
}

LearntPattern filter_top_edges(const LearntPattern& pattern, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw ContractError("filter_top_edges: keep_fraction must lie in (0, 1]");
  struct Edge {
    std::size_t i, j;
    double w;
  };
  const std::size_t n = pattern.size();
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool ij = pattern.cell_present(i, j), ji = pattern.cell_present(j, i);
      if (!ij && !ji) continue;
      double w = -std::numeric_limits<double>::infinity();
      if (ij) w = std::max(w, pattern.adjacency(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      if (ji) w = std::max(w, pattern.adjacency(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
      edges.push_back({i, j, w});
    }
  }
  LearntPattern out = pattern;
  if (edges.empty()) return out;
  const auto keep = static_cast<std::size_t>(
      std::ceil(keep_fraction * static_cast<double>(edges.size()) - 1e-9));
  std::vector<double> weights;
  for (const auto& e : edges) weights.push_back(e.w);
  std::sort(weights.begin(), weights.end(), std::greater<>());
  const double cut = weights[std::clamp<std::size_t>(keep, 1, weights.size()) - 1];
  for (const auto& e : edges) {
    if (e.w >= cut) continue;
    out.adjacency(static_cast<Eigen::Index>(e.i), static_cast<Eigen::Index>(e.j)) = 0.0;
    out.adjacency(static_cast<Eigen::Index>(e.j), static_cast<Eigen::Index>(e.i)) = 0.0;
  }
  return out;
}

// ---------------------------------------------------------------- export

std::string heatmap_csv(const LearntPattern& pattern) {
  std::string out;
  for (std::size_t i = 0; i < pattern.labels.size(); ++i) {
    if (i) out += ',';
    out += pattern.labels[i];
  }
  out += '\n';
  char buf[64];
  for (Eigen::Index r = 0; r < pattern.adjacency.rows(); ++r) {
    for (Eigen::Index c = 0; c < pattern.adjacency.cols(); ++c) {
      if (c) out += ',';
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), pattern.adjacency(r, c));
      out.append(buf, end);
    }
    out += '\n';
  }
  return out;
}

std::string heatmap_pgm(const LearntPattern& pattern) {
  const Matrix& a = pattern.adjacency;
  std::ostringstream os;
  os << "P2\n" << a.cols() << ' ' << a.rows() << "\n255\n";
  const double hi = a.size() ? a.maxCoeff() : 0.0;
  const double lo = a.size() ? std::min(0.0, a.minCoeff()) : 0.0;
  const bool flat = a.size() == 0 || a.maxCoeff() == a.minCoeff();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const int level = flat ? 128 : static_cast<int>(std::lround(255.0 * (hi - a(r, c)) / (hi - lo)));
      os << (c ? " " : "") << level;
    }
    os << '\n';
  }
  return os.str();
}

void export_heatmap(const LearntPattern& pattern, const std::string& base_path) {
  for (const auto& [suffix, body] :
       {std::pair{".csv", heatmap_csv(pattern)}, std::pair{".pgm", heatmap_pgm(pattern)}}) {
    const std::string path = base_path + suffix;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << body;
    if (!os) throw std::runtime_error("failed writing " + path);
  }
}

HeatmapCsv parse_heatmap_csv(const std::string& text) {
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) out.push_back(field);
    return out;
  };
  std::istringstream is(text);
  std::string line;
  HeatmapCsv out;
  if (!std::getline(is, line)) throw std::runtime_error("heatmap csv: missing header");
  out.labels = split(line);
  const auto n = static_cast<Eigen::Index>(out.labels.size());
  out.values.resize(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    if (!std::getline(is, line)) throw std::runtime_error("heatmap csv: missing row " + std::to_string(r));
    auto fields = split(line);
    if (static_cast<Eigen::Index>(fields.size()) != n)
      throw std::runtime_error("heatmap csv: row " + std::to_string(r) + " has wrong width");
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto& f = fields[static_cast<std::size_t>(c)];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw std::runtime_error("heatmap csv: bad value '" + f + "'");
      out.values(r, c) = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------- recovery

namespace {

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  auto constant = [](const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
  };
  if (constant(x) || constant(y)) throw ContractError("pattern_recovery_score: zero-variance input");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw ContractError("pattern_recovery_score: zero-variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Pattern index -> template index, through the labels.
std::vector<std::size_t> label_map(const LearntPattern& p, const CategoryTemplate& t) {
  std::vector<std::size_t> out;
  for (const auto& l : p.labels) {
    auto it = std::find(t.labels.begin(), t.labels.end(), l);
    if (it == t.labels.end()) throw ContractError("pattern_recovery_score: label " + l + " not in template");
    out.push_back(static_cast<std::size_t>(it - t.labels.begin()));
  }
  return out;
}

double recovery_with_map(const LearntPattern& p, const CategoryTemplate& t,
                         const std::vector<std::size_t>& map) {
  std::vector<double> learnt, planted;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      if (!p.cell_present(i, j) && !p.cell_present(j, i)) continue;
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      learnt.push_back(0.5 * (p.adjacency(ii, jj) + p.adjacency(jj, ii)));
      planted.push_back(t.planted_adjacency(static_cast<Eigen::Index>(map[i]),
                                            static_cast<Eigen::Index>(map[j])));
    }
  }
  if (learnt.size() < 2) throw ContractError("pattern_recovery_score: fewer than two present edges");
  return pearson(learnt, planted);
}

}  // namespace

double pattern_recovery_score(const LearntPattern& pattern, const CategoryTemplate& tmpl) {
  return recovery_with_map(pattern, tmpl, label_map(pattern, tmpl));
}

std::vector<double> pattern_recovery_null(const LearntPattern& pattern, const CategoryTemplate& tmpl,
                                          std::size_t trials, std::uint64_t seed) {
  auto map = label_map(pattern, tmpl);
  std::mt19937_64 rng(seed);
  std::vector<double> out;
  out.reserve(trials);
  for (std::size_t k = 0; k < trials; ++k) {
    std::shuffle(map.begin(), map.end(), rng);
    out.push_back(recovery_with_map(pattern, tmpl, map));
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace glam
