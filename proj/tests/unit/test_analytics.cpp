#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "support.hpp"
#include "txnlink/analytics.hpp"
#include "txnlink/errors.hpp"

using namespace txnlink;
using namespace txnlink::analytics;
using nd::Tensor;

namespace {

SnapshotEmbeddings snap(std::string name, std::vector<std::string> ids, std::vector<double> values, std::size_t d) {
  SnapshotEmbeddings s;
  s.snapshot = std::move(name);
  const std::size_t n = ids.size();
  s.ids = std::move(ids);
  s.z = Tensor::from({n, d}, std::move(values));
  return s;
}

model::Model small_model(const graph::BipartiteGraph& g) {
  model::ModelConfig c;
  c.layers = 2;
  c.hidden = 8;
  c.heads = 2;
  c.customer_dim = g.customer_dim();
  c.txn_dim = g.txn_dim();
  return model::make_model(c, 3);
}

}  // namespace

TEST_CASE("cosine similarity") {
  const std::vector<double> u{1, 1}, x{1, 0}, y{0, 1};
  CHECK(cosine_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(x, y) == 0.0);
  CHECK(cosine_similarity(u, x) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  const auto a = support::random_values(10, 1), b = support::random_values(10, 2);
  auto scaled = a;
  for (auto& v : scaled) v *= 3.7;
  CHECK(std::abs(cosine_similarity(scaled, b) - cosine_similarity(a, b)) < 1e-12);
  const std::vector<double> zero{0, 0};
  CHECK_THROWS_AS(cosine_similarity(zero, u), MetricError);
  CHECK_THROWS_AS(cosine_similarity(u, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("divergence report") {
  SUBCASE("identical embeddings are not diverging") {
    std::vector<SnapshotEmbeddings> s;
    for (const char* n : {"a", "b", "c"}) s.push_back(snap(n, {"x", "y"}, {1, 2, 3, 4}, 2));
    const auto r = divergence_report(s, "x");
    CHECK(r.snapshots.size() == 3);
    for (const auto& row : r.matrix)
      for (double v : row) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(!r.diverging);
  }
  SUBCASE("an orthogonal snapshot diverges") {
    std::vector<SnapshotEmbeddings> s{snap("a", {"x"}, {1, 0}, 2), snap("b", {"x"}, {1, 0}, 2), snap("c", {"x"}, {0, 1}, 2)};
    const auto r = divergence_report(s, "x");
    CHECK(r.matrix[0][2] == 0.0);
    CHECK(r.matrix[2][1] == 0.0);
    CHECK(r.diverging);
  }
  SUBCASE("matrix equals element-wise recomputation") {
    std::vector<SnapshotEmbeddings> s;
    for (std::uint64_t k = 0; k < 4; ++k) s.push_back(snap("s" + std::to_string(k), {"p", "q"}, support::random_values(8, k), 4));
    s.push_back(snap("other", {"q"}, support::random_values(4, 9), 4));
    const auto r = divergence_report(s, "p", 0.5);
    REQUIRE(r.snapshots.size() == 4);
    bool below = false;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const auto zi = s[i].z.data().subspan(0, 4), zj = s[j].z.data().subspan(0, 4);
        CHECK(std::abs(r.matrix[i][j] - cosine_similarity(zi, zj)) < 1e-15);
        CHECK(r.matrix[i][j] == r.matrix[j][i]);
        CHECK(std::abs(r.matrix[i][j]) <= 1.0 + 1e-12);
        if (i != j && r.matrix[i][j] < 0.5) below = true;
      }
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(r.matrix[i][i] - 1.0) < 1e-9);
    CHECK(r.diverging == below);
    nlohmann::json j = r;
    CHECK(j.at("customer_id") == "p");
    CHECK(j.at("cosine_similarity").size() == 4);
  }
  SUBCASE("missing customer") {
    std::vector<SnapshotEmbeddings> s{snap("a", {"x"}, {1, 0}, 2), snap("b", {"x"}, {1, 0}, 2)};
    CHECK_THROWS_AS(divergence_report(s, "nobody"), LookupError);
  }
}

TEST_CASE("kmeans") {
  SUBCASE("k equals n") {
    const auto pts = Tensor::from({5, 2}, support::random_values(10, 3));
    const auto c = kmeans(pts, 5, 1);
    CHECK(c.inertia == 0.0);
    CHECK(std::set<std::size_t>(c.assignment.begin(), c.assignment.end()).size() == 5);
  }
  SUBCASE("two separated blobs") {
    std::vector<double> v;
    const auto noise = support::random_values(80, 4, -0.5, 0.5);
    for (std::size_t i = 0; i < 40; ++i) v.push_back(noise[i] + (i < 20 ? -10.0 : 10.0));
    for (std::size_t i = 0; i < 40; ++i) v.push_back(noise[40 + i]);
    // Columns: x then y; 20 points around (-10,0) and 20 around (10,0).
    std::vector<double> rows;
    for (std::size_t i = 0; i < 40; ++i) {
      rows.push_back(v[i]);
      rows.push_back(v[40 + i]);
    }
    const auto c = kmeans(Tensor::from({40, 2}, rows), 2, 5);
    for (std::size_t i = 1; i < 20; ++i) CHECK(c.assignment[i] == c.assignment[0]);
    for (std::size_t i = 21; i < 40; ++i) CHECK(c.assignment[i] == c.assignment[20]);
    CHECK(c.assignment[0] != c.assignment[20]);
  }
  SUBCASE("inertia never increases") {
    const auto pts = Tensor::from({200, 3}, support::random_values(600, 6));
    const auto c = kmeans(pts, 6, 2);
    CHECK(c.inertia <= c.seeded_inertia);
    for (std::size_t i = 1; i < c.inertia_trace.size(); ++i) CHECK(c.inertia_trace[i] <= c.inertia_trace[i - 1] + 1e-12);
    CHECK(c.iterations <= 100);
    const auto again = kmeans(pts, 6, 2);
    CHECK(again.assignment == c.assignment);
  }
  SUBCASE("bad k") {
    const auto pts = Tensor::from({3, 2}, support::random_values(6, 7));
    CHECK_THROWS_AS(kmeans(pts, 4, 1), ConfigError);
    CHECK_THROWS_AS(kmeans(pts, 0, 1), ConfigError);
  }
}

TEST_CASE("embedding export") {
  const auto g = support::toy_graph(15, 60, 11);
  auto m = small_model(g);
  const auto zc = export_embeddings(m, g, graph::NodeType::customer);
  CHECK(zc.rows() == g.num_customers());
  CHECK(zc.cols() == 8);
  const auto zt1 = export_embeddings(m, g, graph::NodeType::transaction, 1);
  CHECK(zt1.rows() == g.num_transactions());
  const auto again = export_embeddings(m, g, graph::NodeType::customer);
  CHECK(std::equal(zc.data().begin(), zc.data().end(), again.data().begin()));
  CHECK_THROWS(export_embeddings(m, g, graph::NodeType::customer, 3));

  const auto path = (std::filesystem::temp_directory_path() / "txnlink_emb.csv").string();
  write_embeddings(path, g.customer_ids(), zc);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "id,e0,e1,e2,e3,e4,e5,e6,e7");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 8);
    if (rows == 1) {
      // Full precision: the first value parses back exactly.
      const auto first = line.substr(line.find(',') + 1, line.find(',', line.find(',') + 1) - line.find(',') - 1);
      CHECK(std::stod(first) == zc.at(0, 0));
    }
  }
  CHECK(rows == g.num_customers());
  std::filesystem::remove(path);

  const auto s = snapshot_embeddings(m, g, "snap");
  CHECK(s.find("c3") == g.find_customer("c3"));
  CHECK(s.find("zz") == -1);
}

TEST_CASE("customer transactions") {
  const auto g = support::toy_graph(10, 40, 13);
  for (graph::Index c = 0; c < 10; ++c) {
    const auto rows = customer_transactions(g, c);
    std::size_t expected = 0;
    for (graph::Index t = 0; t < static_cast<graph::Index>(g.num_transactions()); ++t)
      expected += g.customer_of(t, graph::Direction::outgoing) == c || g.customer_of(t, graph::Direction::incoming) == c;
    CHECK(rows.size() == expected);
  }
}
