#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "support.hpp"
#include "txnlink/errors.hpp"
#include "txnlink/graph.hpp"

using namespace txnlink;
using namespace txnlink::graph;

namespace {

RawTransaction txn(std::string id, std::string src, std::string dst, std::int64_t ts = 0) {
  return {std::move(id), std::move(src), std::move(dst), ts, {1.0, 2.0 + ts}};
}
CustomerProfile profile(std::string id, double v) { return {std::move(id), {v, -v}}; }

std::size_t edge_count(const BipartiteGraph& g, Relation r) { return g.relation(r).senders.size(); }

using NodeSet = std::set<std::pair<int, Index>>;

/// Every node within `hops` steps of the seeds, treating all relations as undirected.
NodeSet bfs(const BipartiteGraph& g, const NodeSet& seeds, std::size_t hops) {
  NodeSet seen = seeds, frontier = seeds;
  for (std::size_t h = 0; h < hops; ++h) {
    NodeSet next;
    for (auto [type, node] : frontier) {
      for (Relation r : kRelations) {
        if (static_cast<int>(receiver_type(r)) != type) continue;
        for (Index s : g.relation(r).of(node)) {
          std::pair<int, Index> key{static_cast<int>(sender_type(r)), s};
          if (seen.insert(key).second) next.insert(key);
        }
      }
    }
    frontier = std::move(next);
  }
  return seen;
}

}  // namespace

TEST_CASE("build: single transfer") {
  const std::vector<RawTransaction> txns{txn("t1", "A", "B")};
  const std::vector<CustomerProfile> profiles{profile("A", 1), profile("B", 2)};
  const auto g = BipartiteGraph::build(txns, profiles);
  CHECK(g.num_customers() == 2);
  CHECK(g.num_transactions() == 1);
  CHECK(g.num_edges(Direction::outgoing) == 1);
  CHECK(g.num_edges(Direction::incoming) == 1);
  CHECK(g.customer_of(0, Direction::outgoing) == g.find_customer("A"));
  CHECK(g.customer_of(0, Direction::incoming) == g.find_customer("B"));
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("build: external deposit") {
  const std::vector<RawTransaction> txns{txn("t1", kExternal, "A")};
  const std::vector<CustomerProfile> profiles{profile("A", 1)};
  const auto g = BipartiteGraph::build(txns, profiles);
  CHECK(g.num_transactions() == 1);
  CHECK(g.num_edges(Direction::outgoing) == 0);
  CHECK(g.num_edges(Direction::incoming) == 1);
  CHECK(g.customer_of(0, Direction::outgoing) == -1);
}

TEST_CASE("build: edge count equals known endpoints") {
  const auto d = support::toy_data(60, 1000, 3, 0.2);
  const auto g = BipartiteGraph::build(d.txns, d.profiles);
  std::size_t known = 0;
  for (const auto& t : d.txns) known += (t.source != kExternal) + (t.dest != kExternal);
  CHECK(g.num_edges(Direction::outgoing) + g.num_edges(Direction::incoming) == known);
  CHECK(edge_count(g, Relation::out_fwd) == edge_count(g, Relation::out_rev));
  CHECK(edge_count(g, Relation::in_fwd) == edge_count(g, Relation::in_rev));
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("build: errors") {
  const std::vector<CustomerProfile> profiles{profile("A", 1)};
  const std::vector<RawTransaction> missing{txn("t1", "A", "Z")};
  CHECK_THROWS_AS(BipartiteGraph::build(missing, profiles), IngestionError);
  const std::vector<RawTransaction> dup{txn("t1", "A", kExternal), txn("t1", kExternal, "A")};
  CHECK_THROWS_AS(BipartiteGraph::build(dup, profiles), IngestionError);
  const std::vector<RawTransaction> none{txn("t1", kExternal, kExternal)};
  CHECK_THROWS_AS(BipartiteGraph::build(none, profiles), IngestionError);
}

TEST_CASE("features are standardized") {
  const auto g = support::toy_graph(30, 200, 5);
  const auto& x = g.txn_features();
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double m = 0;
    for (std::size_t r = 0; r < x.rows(); ++r) m += x.at(r, c);
    CHECK(std::abs(m / static_cast<double>(x.rows())) < 1e-9);
  }
}

TEST_CASE("with_transactions appends without disturbing existing ids") {
  const auto d = support::toy_data(10, 30, 8);
  const auto g = BipartiteGraph::build(d.txns, d.profiles);
  std::vector<RawTransaction> extra{txn("new", "c1", kExternal)};
  extra[0].features = {0.0, 0.0, 0.0};
  const auto h = g.with_transactions(extra);
  CHECK(h.num_transactions() == g.num_transactions() + 1);
  CHECK(h.find_transaction("new") == static_cast<Index>(g.num_transactions()));
  CHECK(h.customer_of(h.find_transaction("new"), Direction::outgoing) == h.find_customer("c1"));
  CHECK(h.find_customer("c3") == g.find_customer("c3"));
  extra[0].source = "nobody";
  CHECK_THROWS_AS(g.with_transactions(extra), IngestionError);
}

TEST_CASE("snapshot round-trip") {
  const auto g = support::toy_graph(12, 40, 9);
  std::stringstream ss;
  g.save(ss);
  const auto h = BipartiteGraph::load(ss);
  CHECK(h.customer_ids() == g.customer_ids());
  CHECK(h.txn_ids() == g.txn_ids());
  for (Relation r : kRelations) {
    CHECK(h.relation(r).offsets == g.relation(r).offsets);
    CHECK(h.relation(r).senders == g.relation(r).senders);
  }
  for (std::size_t i = 0; i < g.txn_features().size(); ++i) CHECK(h.txn_features().at(i) == g.txn_features().at(i));
  std::stringstream bad("nope");
  CHECK_THROWS_AS(BipartiteGraph::load(bad), IngestionError);
}

TEST_CASE("split_edges") {
  SUBCASE("all message") {
    const auto g = support::toy_graph(20, 100, 1);
    const auto s = split_edges(g, {1.0, 0.0, 0.0}, 3);
    CHECK(s.message.size() == g.num_edges(Direction::outgoing) + g.num_edges(Direction::incoming));
    CHECK(s.supervision.empty());
    CHECK(s.validation.empty());
  }
  SUBCASE("exact sizes at divisible counts") {
    // 100 outgoing edges, no incoming.
    std::vector<RawTransaction> txns;
    for (int i = 0; i < 100; ++i) txns.push_back(txn("t" + std::to_string(i), "A", kExternal));
    const auto g = BipartiteGraph::build(txns, std::vector<CustomerProfile>{profile("A", 1)});
    const auto s = split_edges(g, {0.5, 0.3, 0.2}, 4);
    CHECK(s.message.size() == 50);
    CHECK(s.supervision.size() == 30);
    CHECK(s.validation.size() == 20);
  }
  SUBCASE("deterministic, disjoint and exhaustive") {
    const auto g = support::toy_graph(40, 333, 2);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto a = split_edges(g, {0.5, 0.3, 0.2}, seed);
      const auto b = split_edges(g, {0.5, 0.3, 0.2}, seed);
      CHECK(a.message == b.message);
      CHECK(a.supervision == b.supervision);
      CHECK(a.validation == b.validation);
      std::set<std::pair<int, Index>> all;
      for (const auto* part : {&a.message, &a.supervision, &a.validation})
        for (const auto& e : *part) CHECK(all.insert({static_cast<int>(e.dir), e.txn}).second);
      CHECK(all.size() == g.num_edges(Direction::outgoing) + g.num_edges(Direction::incoming));
      for (Direction d : {Direction::outgoing, Direction::incoming}) {
        const double n = static_cast<double>(g.num_edges(d));
        CHECK(std::abs(static_cast<double>(a.supervision_in(d).size()) - 0.3 * n) <= 1.0);
        CHECK(std::abs(static_cast<double>(a.validation_in(d).size()) - 0.2 * n) <= 1.0);
      }
    }
  }
  SUBCASE("ratios must sum to one") {
    const auto g = support::toy_graph(5, 10, 1);
    CHECK_THROWS_AS(split_edges(g, {0.5, 0.3, 0.3}, 1), ConfigError);
  }
}

TEST_CASE("sample_neighborhood fanout") {
  SUBCASE("cap not binding") {
    std::vector<RawTransaction> txns;
    for (int i = 0; i < 3; ++i) txns.push_back(txn("t" + std::to_string(i), "A", kExternal));
    const auto g = BipartiteGraph::build(txns, std::vector<CustomerProfile>{profile("A", 1)});
    const std::vector<Index> cs{0};
    const auto sub = sample_neighborhood(g, cs, {}, {32, 1, 1});
    CHECK(sub.edges(0, Relation::out_rev).size() == 3);
    CHECK(sub.transactions[1].size() == 3);
  }
  SUBCASE("cap binding") {
    std::vector<RawTransaction> txns;
    for (int i = 0; i < 100; ++i) txns.push_back(txn("t" + std::to_string(i), "A", kExternal));
    const auto g = BipartiteGraph::build(txns, std::vector<CustomerProfile>{profile("A", 1)});
    const std::vector<Index> cs{0};
    const auto sub = sample_neighborhood(g, cs, {}, {32, 1, 1});
    CHECK(sub.edges(0, Relation::out_rev).size() == 32);
    std::set<Index> distinct(sub.transactions[1].begin(), sub.transactions[1].end());
    CHECK(distinct.size() == 32);
  }
}

TEST_CASE("sample_neighborhood stays inside the exact L-hop neighbourhood") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const auto g = support::toy_graph(40, 300, 100 + trial);
    const auto edges = g.edges(Direction::outgoing);
    const EdgeRef seed = edges[trial % edges.size()];
    for (std::size_t layers : {1u, 2u, 3u}) {
      const auto sub = sample_neighborhood(g, std::span<const EdgeRef>(&seed, 1), {3, layers, trial});
      const NodeSet seeds{{0, seed.customer}, {1, seed.txn}};
      for (std::size_t l = 0; l <= layers; ++l) {
        const auto reach = bfs(g, seeds, l);
        for (Index c : sub.customers[l]) CHECK(reach.count({0, c}) == 1);
        for (Index t : sub.transactions[l]) CHECK(reach.count({1, t}) == 1);
      }
      // Seeds at layer 0 and nesting of layers.
      CHECK(sub.seed_row(NodeType::customer, seed.customer) >= 0);
      CHECK(sub.seed_row(NodeType::transaction, seed.txn) >= 0);
      for (std::size_t l = 0; l < layers; ++l) {
        CHECK(std::equal(sub.customers[l].begin(), sub.customers[l].end(), sub.customers[l + 1].begin()));
        // Every hop edge is a real edge of its relation.
        for (Relation r : kRelations) {
          const auto& e = sub.edges(l, r);
          const auto& recv = sub.nodes(l, receiver_type(r));
          const auto& send = sub.nodes(l + 1, sender_type(r));
          for (std::size_t i = 0; i < e.size(); ++i) {
            const auto senders = g.relation(r).of(recv[e.dst[i]]);
            CHECK(std::find(senders.begin(), senders.end(), send[e.src[i]]) != senders.end());
          }
        }
      }
    }
  }
}

TEST_CASE("sample_neighborhood is deterministic per seed") {
  const auto g = support::toy_graph(40, 300, 6);
  const auto edges = g.edges(Direction::incoming);
  const std::span<const EdgeRef> seeds(edges.data(), 5);
  const auto a = sample_neighborhood(g, seeds, {2, 3, 42});
  const auto b = sample_neighborhood(g, seeds, {2, 3, 42});
  CHECK(a.customers == b.customers);
  CHECK(a.transactions == b.transactions);
}

TEST_CASE("sever_edges") {
  const std::vector<RawTransaction> txns{txn("t1", "A", "B"), txn("t2", "B", "A"), txn("t3", "A", kExternal)};
  const auto g = BipartiteGraph::build(txns, std::vector<CustomerProfile>{profile("A", 1), profile("B", 2)});
  const auto full = full_neighborhood(g, 2);
  const Index a = g.find_customer("A"), t1 = g.find_transaction("t1");
  const std::vector<EdgeRef> cut{{Direction::outgoing, t1, a}};
  const auto sub = sever_edges(full, cut, Direction::outgoing);
  for (std::size_t h = 0; h < sub.depth(); ++h) {
    CHECK(sub.edges(h, Relation::out_fwd).size() + 1 == full.edges(h, Relation::out_fwd).size());
    CHECK(sub.edges(h, Relation::out_rev).size() + 1 == full.edges(h, Relation::out_rev).size());
    CHECK(sub.edges(h, Relation::in_fwd).size() == full.edges(h, Relation::in_fwd).size());
    CHECK(sub.edges(h, Relation::in_rev).size() == full.edges(h, Relation::in_rev).size());
    for (Relation r : {Relation::out_fwd, Relation::out_rev}) {
      const auto& e = sub.edges(h, r);
      for (std::size_t i = 0; i < e.size(); ++i) CHECK(e.txn[i] != t1);
    }
  }
  // Severing an absent edge is a no-op.
  const std::vector<EdgeRef> absent{{Direction::incoming, g.find_transaction("t3"), a}};
  const auto same = sever_edges(full, absent, Direction::incoming);
  for (std::size_t h = 0; h < full.depth(); ++h)
    for (Relation r : kRelations) CHECK(same.edges(h, r).size() == full.edges(h, r).size());
}

TEST_CASE("severed set hides edges during sampling") {
  const auto g = support::toy_graph(30, 200, 12);
  SeveredEdges hidden;
  for (const auto& e : g.edges(Direction::outgoing)) hidden.add(e);
  const auto sub = full_neighborhood(g, 2, &hidden);
  for (std::size_t h = 0; h < sub.depth(); ++h) {
    CHECK(sub.edges(h, Relation::out_fwd).size() == 0);
    CHECK(sub.edges(h, Relation::out_rev).size() == 0);
    CHECK(sub.edges(h, Relation::in_fwd).size() > 0);
  }
}

TEST_CASE("sample_negatives") {
  SUBCASE("complete bipartite graph has no non-edges") {
    std::vector<RawTransaction> txns{txn("t1", "A", kExternal)};
    const auto g = BipartiteGraph::build(txns, std::vector<CustomerProfile>{profile("A", 1)});
    CHECK_THROWS_AS(sample_negatives(g, 1, Direction::outgoing, 1), SamplingError);
  }
  SUBCASE("one real edge among four pairs") {
    std::vector<RawTransaction> txns{txn("t1", "A", kExternal), txn("t2", kExternal, "B")};
    const auto g = BipartiteGraph::build(txns, std::vector<CustomerProfile>{profile("A", 1), profile("B", 2)});
    const Index a = g.find_customer("A"), t1 = g.find_transaction("t1");
    const auto neg = sample_negatives(g, 200, Direction::outgoing, 5);
    CHECK(neg.size() == 200);
    std::map<std::pair<Index, Index>, int> counts;
    for (const auto& e : neg) {
      CHECK(!(e.customer == a && e.txn == t1));
      CHECK(e.dir == Direction::outgoing);
      ++counts[{e.customer, e.txn}];
    }
    CHECK(counts.size() == 3);
  }
  SUBCASE("uniform over non-edges") {
    const auto g = support::toy_graph(4, 5, 21, 0.0, 2, 2);
    const std::size_t n = 100000;
    const auto neg = sample_negatives(g, n, Direction::outgoing, 77);
    std::map<std::pair<Index, Index>, double> counts;
    for (const auto& e : neg) counts[{e.customer, e.txn}] += 1;
    const std::size_t cells = g.num_customers() * g.num_transactions() - g.num_edges(Direction::outgoing);
    CHECK(counts.size() == cells);
    const double expected = static_cast<double>(n) / static_cast<double>(cells);
    double chi2 = 0;
    for (auto& [_, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
    // df = cells - 1 = 14; the 0.999 quantile is 36.1.
    CHECK(chi2 < 36.1);
  }
  SUBCASE("deterministic per seed") {
    const auto g = support::toy_graph(20, 50, 3);
    CHECK(sample_negatives(g, 30, Direction::incoming, 9) == sample_negatives(g, 30, Direction::incoming, 9));
  }
}

TEST_CASE("line-delimited ingestion round-trips") {
  const auto d = support::toy_data(5, 12, 4);
  const auto dir = std::filesystem::temp_directory_path() / "txnlink_test_graph_io";
  std::filesystem::create_directories(dir);
  write_transactions((dir / "t.jsonl").string(), d.txns);
  write_profiles((dir / "p.jsonl").string(), d.profiles);
  const auto txns = read_transactions((dir / "t.jsonl").string());
  const auto profiles = read_profiles((dir / "p.jsonl").string());
  REQUIRE(txns.size() == d.txns.size());
  CHECK(txns[3].txn_id == d.txns[3].txn_id);
  CHECK(txns[3].features == d.txns[3].features);
  CHECK(profiles[2].features == d.profiles[2].features);
  {
    std::FILE* f = std::fopen((dir / "bad.jsonl").c_str(), "w");
    std::fputs("{\"txn_id\": 1}\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_transactions((dir / "bad.jsonl").string()), IngestionError);
  std::filesystem::remove_all(dir);
}
