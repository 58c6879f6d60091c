#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "glam/assignment.hpp"
#include "glam/synthdata.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

using namespace glam;

namespace {

GenConfig clean_config() {
  GenConfig g;
  g.feature_noise_sigma = 0.0;
  g.position_noise_sigma = 0.0;
  g.dropout_prob = 0.0;
  return g;
}

double distance(const Matrix& p, Eigen::Index i, Eigen::Index j) { return (p.row(i) - p.row(j)).norm(); }

}  // namespace

TEST_CASE("templates") {
  const CategoryTemplate a = make_template(10, 16, 3), b = make_template(10, 16, 3);
  CHECK(a.prototype_features == b.prototype_features);
  CHECK(a.planted_adjacency == b.planted_adjacency);
  CHECK_FALSE(make_template(10, 16, 4).prototype_features == a.prototype_features);
  CHECK(a.labels.front() == "kp0");
  CHECK_NOTHROW(a.validate());

  const CategoryTemplate two = make_template(2, 4, 1);
  Matrix expect(2, 2);
  expect << 0, 1, 1, 0;
  CHECK(two.planted_adjacency == expect);

  CHECK_THROWS_AS(make_template(1, 4, 1), ContractError);
  TemplateOptions impossible;
  impossible.margin = 100.0;
  CHECK_THROWS_AS(make_template(3, 4, 1, impossible), ContractError);
}

TEST_CASE("template invariants hold for many seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const std::size_t d = 8 + seed % 9;
    const CategoryTemplate t = make_template(10, d, seed);
    const double radius = std::sqrt(static_cast<double>(d));
    for (Eigen::Index i = 0; i < 10; ++i) {
      CHECK(std::abs(t.prototype_features.row(i).norm() - radius) < 1e-9);
      for (Eigen::Index j = 0; j < i; ++j)
        CHECK(distance(t.prototype_features, i, j) >= 0.5 * radius);
    }
    const Matrix& adj = t.planted_adjacency;
    CHECK(adj == adj.transpose());
    CHECK(adj.diagonal().isZero());
    CHECK(((adj.array() == 0.0) || (adj.array() == 1.0)).all());
    // Every keypoint links at least to its 3 nearest neighbours.
    for (Eigen::Index i = 0; i < 10; ++i) CHECK(adj.row(i).sum() >= 3.0);

    // Brute-force 3-NN, symmetrized.
    Matrix knn = Matrix::Zero(10, 10);
    for (Eigen::Index i = 0; i < 10; ++i) {
      std::vector<Eigen::Index> order;
      for (Eigen::Index j = 0; j < 10; ++j)
        if (j != i) order.push_back(j);
      std::sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
        return distance(t.prototype_positions, i, x) < distance(t.prototype_positions, i, y);
      });
      for (int k = 0; k < 3; ++k) knn(i, order[k]) = knn(order[k], i) = 1.0;
    }
    CHECK(knn == adj);
  }
}

TEST_CASE("noise-free pairs") {
  const CategoryTemplate t = make_template(8, 6, 5);
  GenConfig g = clean_config();
  g.shuffle = false;
  const CorrespondenceSample s = sample_pair(t, g, 0);
  std::vector<int> identity(8);
  std::iota(identity.begin(), identity.end(), 0);
  CHECK(s.gt == identity);
  CHECK(s.a.features == t.prototype_features);
  CHECK(s.b.features == t.prototype_features);

  // Positions agree up to a similarity: all distance ratios are equal.
  const double ratio = distance(s.a.positions, 0, 1) / distance(s.b.positions, 0, 1);
  for (Eigen::Index i = 0; i < 8; ++i)
    for (Eigen::Index j = 0; j < i; ++j)
      CHECK(distance(s.a.positions, i, j) / distance(s.b.positions, i, j) == doctest::Approx(ratio).epsilon(1e-9));
}

TEST_CASE("determinism and per-index streams") {
  const CategoryTemplate t = make_template(6, 4, 7);
  GenConfig g;
  g.seed = 11;
  const CorrespondenceSample x = sample_pair(t, g, 3, 1), y = sample_pair(t, g, 3, 1);
  CHECK(x.a.features == y.a.features);
  CHECK(x.gt == y.gt);
  CHECK_FALSE(sample_pair(t, g, 4, 1).a.features == x.a.features);

  g.pairs_per_category = 4;
  CHECK(generate_dataset(2, 6, 4, g) == generate_dataset(2, 6, 4, g));
  GenConfig other = g;
  other.seed = 12;
  CHECK_FALSE(generate_dataset(2, 6, 4, g) == generate_dataset(2, 6, 4, other));
}

TEST_CASE("held-out split shares templates and continues the index range") {
  GenConfig g;
  g.seed = 4;
  g.pairs_per_category = 5;
  const Dataset all = generate_dataset(2, 6, 8, g);
  g.pairs_per_category = 2;
  g.first_index = 3;
  const Dataset tail = generate_dataset(2, 6, 8, g);
  REQUIRE(tail.samples.size() == 4);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(tail.categories[c].prototype_features == all.categories[c].prototype_features);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto& a = tail.samples[c * 2 + i];
      const auto& b = all.samples[c * 5 + 3 + i];
      CHECK(a.a.features == b.a.features);
      CHECK(a.b.positions == b.b.positions);
      CHECK(a.gt == b.gt);
    }
  }
}

TEST_CASE("pairs are well formed") {
  GenConfig g;
  g.seed = 2;
  g.dropout_prob = 0.3;
  g.pairs_per_category = 50;
  const Dataset ds = generate_dataset(3, 10, 8, g);
  CHECK(ds.samples.size() == 150);
  bool saw_unequal = false;
  for (const auto& s : ds.samples) {
    CHECK(s.gt.size() == s.a.size());
    saw_unequal |= s.a.size() != s.b.size();
    // Partial bijection: used columns are distinct and in range.
    std::set<int> used;
    std::size_t matched = 0;
    for (std::size_t i = 0; i < s.gt.size(); ++i) {
      if (s.gt[i] < 0) continue;
      ++matched;
      CHECK(s.gt[i] < static_cast<int>(s.b.size()));
      CHECK(used.insert(s.gt[i]).second);
      CHECK(s.a.labels[i] == s.b.labels[static_cast<std::size_t>(s.gt[i])]);
    }
    CHECK(matched >= 2);
    for (const auto* set : {&s.a, &s.b}) {
      CHECK(set->positions.minCoeff() >= 0.0);
      CHECK(set->positions.maxCoeff() <= 1.0 + 1e-12);
      CHECK(set->labels.size() == set->size());
    }
  }
  CHECK(saw_unequal);
}

TEST_CASE("dropout leaves dropped keypoints unmatched") {
  const CategoryTemplate t = make_template(10, 4, 8);
  GenConfig g = clean_config();
  g.dropout_prob = 0.4;
  for (std::uint64_t i = 0; i < 30; ++i) {
    const CorrespondenceSample s = sample_pair(t, g, i);
    std::set<std::string> in_b(s.b.labels.begin(), s.b.labels.end());
    for (std::size_t r = 0; r < s.a.size(); ++r)
      CHECK((s.gt[r] < 0) == (in_b.count(s.a.labels[r]) == 0));
  }
}

TEST_CASE("nearest neighbour on clean features recovers the ground truth") {
  GenConfig g;
  g.feature_noise_sigma = 0.0;
  g.dropout_prob = 0.0;
  g.pairs_per_category = 20;
  const Dataset ds = generate_dataset(2, 10, 8, g);
  for (const auto& s : ds.samples) {
    for (Eigen::Index i = 0; i < s.a.features.rows(); ++i) {
      Eigen::Index best = 0;
      (s.b.features.rowwise() - s.a.features.row(i)).rowwise().squaredNorm().minCoeff(&best);
      CHECK(best == s.gt[static_cast<std::size_t>(i)]);
    }
  }
}

TEST_CASE("corrupted keypoints get unrelated features of prototype norm") {
  const CategoryTemplate t = make_template(10, 16, 9);
  GenConfig g = clean_config();
  g.shuffle = false;
  CHECK(sample_pair(t, g, 3).a.features == t.prototype_features);

  g.corruption_prob = 1.0;
  const CorrespondenceSample all = sample_pair(t, g, 3);
  for (Eigen::Index i = 0; i < 10; ++i) {
    CHECK(all.a.features.row(i).norm() == doctest::Approx(4.0).epsilon(1e-12));
    // Far from its own prototype, which sits at the same norm.
    CHECK((all.a.features.row(i) - t.prototype_features.row(i)).norm() > 1.0);
  }
  GenConfig plain = g;
  plain.corruption_prob = 0.0;
  CHECK(all.a.positions == sample_pair(t, plain, 3).a.positions);

  g.corruption_prob = 0.3;
  int corrupted = 0;
  for (std::uint64_t k = 0; k < 200; ++k) {
    const CorrespondenceSample s = sample_pair(t, g, k);
    CHECK(s.gt == Matching{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    for (Eigen::Index i = 0; i < 10; ++i) corrupted += s.a.features.row(i) != t.prototype_features.row(i);
  }
  CHECK(corrupted > 500);
  CHECK(corrupted < 700);
}

TEST_CASE("config validation") {
  GenConfig g;
  g.dropout_prob = 1.0;
  CHECK_THROWS_AS(g.validate(), ContractError);
  g = GenConfig{};
  g.feature_noise_sigma = -0.1;
  CHECK_THROWS_AS(g.validate(), ContractError);
  g = GenConfig{};
  g.min_scale = 0.0;
  CHECK_THROWS_AS(g.validate(), ContractError);
  g = GenConfig{};
  g.corruption_prob = 1.5;
  CHECK_THROWS_AS(g.validate(), ContractError);
}

TEST_CASE("dataset text round trip") {
  GenConfig g;
  g.seed = 4;
  g.pairs_per_category = 2;
  g.dropout_prob = 0.2;
  Dataset ds = generate_dataset(2, 5, 3, g);
  ds.samples.resize(3);
  const std::string text = dataset_to_string(ds);
  CHECK(text.rfind("glam-dataset 1\n", 0) == 0);
  CHECK(dataset_from_string(text) == ds);

  const auto path = std::filesystem::temp_directory_path() / "glam_test_dataset.txt";
  save_dataset(path.string(), ds);
  CHECK(load_dataset(path.string()) == ds);
  std::filesystem::remove(path);

  Dataset empty;
  empty.feat_dim = 4;
  CHECK(dataset_from_string(dataset_to_string(empty)) == empty);
}

TEST_CASE("malformed dataset text names the line") {
  GenConfig g;
  g.pairs_per_category = 1;
  const std::string text = dataset_to_string(generate_dataset(1, 4, 2, g));

  // Cut inside the last sample record.
  const std::string truncated = text.substr(0, text.rfind("gt"));
  try {
    dataset_from_string(truncated);
    FAIL("expected a ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() > 1);
    CHECK(std::string(e.what()).find("line ") == 0);
  }

  std::string bad_number = text;
  bad_number.replace(bad_number.find("prototype_features\n") + 19, 1, "x");
  CHECK_THROWS_AS(dataset_from_string(bad_number), ParseError);
  CHECK_THROWS_AS(dataset_from_string("glam-dataset 99\n"), ParseError);
  CHECK_THROWS_AS(dataset_from_string(""), ParseError);
  CHECK_THROWS_AS(load_dataset("/nonexistent/glam/dataset.txt"), std::runtime_error);
}
