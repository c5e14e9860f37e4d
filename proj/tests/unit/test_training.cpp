#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "support.hpp"
#include "txnlink/datagen.hpp"
#include "txnlink/errors.hpp"
#include "txnlink/training.hpp"

using namespace txnlink;
using namespace txnlink::training;
using graph::Direction;
using graph::EdgeRef;
using nd::Tape;
using nd::Tensor;

namespace {

TrainingConfig small_config() {
  TrainingConfig c;
  c.layers = 2;
  c.hidden = 8;
  c.heads = 2;
  c.batch_size = 16;
  c.fanout = 8;
  c.max_epochs = 3;
  c.learning_rate = 0.01;
  c.seed = 5;
  return c;
}

model::Model small_model(const graph::BipartiteGraph& g, const TrainingConfig& c, std::uint64_t seed = 1) {
  return model::make_model(c.model_config(g.customer_dim(), g.txn_dim()), seed);
}

datagen::SyntheticDataset small_dataset() {
  datagen::SyntheticConfig s;
  s.n_customers = 200;
  s.n_communities = 4;
  s.transactions_per_customer = 5;
  s.seed = 3;
  return datagen::generate(s);
}

}  // namespace

TEST_CASE("link loss") {
  Tape tape(false);
  const auto half = Tensor::from({1}, {0.5});
  CHECK(link_loss(tape, half, half, 1).item() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(link_loss(tape, Tensor::from({1}, {1 - 1e-12}), Tensor::from({1}, {1e-12}), 1).item() < 1e-6);

  const auto pos = Tensor::from({7}, support::random_values(7, 1, 0.01, 0.99));
  const auto neg = Tensor::from({21}, support::random_values(21, 2, 0.01, 0.99));
  double expected = 0;
  for (std::size_t b = 0; b < 7; ++b) {
    expected -= std::log(pos.at(b));
    for (std::size_t m = 0; m < 3; ++m) expected -= std::log(1 - neg.at(b * 3 + m));
  }
  CHECK(std::abs(link_loss(tape, pos, neg, 3).item() - expected / 7) < 1e-12);

  // M = 1 equals the sum of the two binary cross-entropies.
  const auto neg1 = Tensor::from({7}, support::random_values(7, 3, 0.01, 0.99));
  const double viabce = nd::bce(tape, pos, std::vector<double>(7, 1.0)).item() +
                        nd::bce(tape, neg1, std::vector<double>(7, 0.0)).item();
  CHECK(std::abs(link_loss(tape, pos, neg1, 1).item() - viabce) < 1e-12);

  CHECK_THROWS_AS(link_loss(tape, pos, neg1, 2), DimensionError);
}

TEST_CASE("adam") {
  model::ParamStore ps;
  auto& w = ps.add("w", {3}, {1.0, -2.0, 0.5});
  SUBCASE("zero gradient leaves parameters unchanged") {
    AdamState st;
    Tape tape;
    tape.backward(nd::scale(tape, nd::sum(tape, w), 0.0));
    adam_step(st, ps, 0.1);
    CHECK(w.at(0) == 1.0);
    CHECK(w.at(1) == -2.0);
  }
  SUBCASE("first step closed form") {
    AdamState st;
    Tape tape;
    tape.backward(nd::sum(tape, nd::hadamard(tape, w, w)));  // grad = 2w
    const std::vector<double> before(w.data().begin(), w.data().end());
    adam_step(st, ps, 0.01);
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = 2 * before[i];
      // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps).
      CHECK(std::abs(w.at(i) - (before[i] - 0.01 * g / (std::abs(g) + 1e-8))) < 1e-15);
    }
  }
  SUBCASE("identical state and gradient give identical steps") {
    model::ParamStore other = ps.clone();
    AdamState a, b;
    for (auto* store : {&ps, &other}) {
      Tape tape;
      auto& p = store->get("w");
      tape.backward(nd::sum(tape, nd::hadamard(tape, p, p)));
      adam_step(store == &ps ? a : b, *store, 0.01);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(ps.get("w").at(i) == other.get("w").at(i));
  }
  SUBCASE("frozen parameters are skipped") {
    AdamState st;
    Tape tape;
    tape.backward(nd::sum(tape, nd::hadamard(tape, w, w)));
    w.set_requires_grad(false);
    adam_step(st, ps, 0.01);
    CHECK(w.at(0) == 1.0);
  }
}

TEST_CASE("train_step") {
  const auto g = support::toy_graph(40, 60, 3);
  const auto cfg = small_config();
  const auto split = graph::split_edges(g, cfg.split, 1);
  const graph::SeveredEdges none;

  auto run = [&](std::size_t steps) {
    auto m = small_model(g, cfg);
    AdamState adam;
    std::vector<double> trace;
    const auto sup = split.supervision_in(Direction::outgoing);
    LinkBatch b;
    b.positives.assign(sup.begin(), sup.begin() + 8);
    b.negatives = graph::sample_negatives(g, 8, Direction::outgoing, 4);
    for (std::size_t s = 0; s < steps; ++s) trace.push_back(train_step(m, adam, g, b, none, cfg, 10).loss);
    return trace;
  };
  SUBCASE("loss decreases") {
    const auto t = run(50);
    CHECK(t.back() < t.front());
  }
  SUBCASE("identical seeds give identical traces") { CHECK(run(5) == run(5)); }
  SUBCASE("empty batch") {
    auto m = small_model(g, cfg);
    AdamState adam;
    CHECK_THROWS_AS(train_step(m, adam, g, LinkBatch{}, none, cfg, 1), ConfigError);
  }
}

TEST_CASE("severing matches a graph built without the edge") {
  const auto d = support::toy_data(15, 40, 8, 0.0);
  const auto g = graph::BipartiteGraph::build(d.txns, d.profiles);
  auto cfg = small_config();
  auto m = small_model(g, cfg, 3);
  const graph::SeveredEdges none;
  for (Direction dir : {Direction::outgoing, Direction::incoming}) {
    const auto edges = g.edges(dir);
    for (std::size_t k = 0; k < 5; ++k) {
      const auto e = edges[k * 3];
      auto txns = d.txns;
      auto& rec = txns[static_cast<std::size_t>(e.txn)];
      REQUIRE(rec.txn_id == g.txn_ids()[static_cast<std::size_t>(e.txn)]);
      (dir == Direction::outgoing ? rec.source : rec.dest) = graph::kExternal;
      const auto without = graph::BipartiteGraph::build(txns, d.profiles, g.customer_scaler(), g.txn_scaler());
      const double a = predict_link(m, g, e, none, 1000, 1);
      const double b = predict_link(m, without, e, none, 1000, 1);
      CHECK(std::abs(a - b) < 1e-9);
    }
  }
}

TEST_CASE("fit") {
  const auto data = small_dataset();
  const auto g = graph::BipartiteGraph::build(data.transactions, data.profiles);
  const auto split = graph::split_edges(g, {0.5, 0.3, 0.2}, 2);

  SUBCASE("history, best checkpoint and determinism") {
    auto cfg = small_config();
    cfg.max_epochs = 4;
    cfg.patience = 10;
    const auto r = fit(g, split, cfg);
    CHECK(r.history.size() <= cfg.max_epochs);
    REQUIRE(!r.history.empty());
    for (const auto& e : r.history) CHECK(r.best_validation_loss <= e.validation_loss);
    auto best = r.model.clone();
    CHECK(std::abs(validation_loss(best, g, split, cfg) - r.best_validation_loss) < 1e-12);
    CHECK(r.history.front().train_loss > r.history.back().train_loss);

    const auto again = fit(g, split, cfg);
    const auto& pa = r.model.params.items();
    const auto& pb = again.model.params.items();
    for (std::size_t i = 0; i < pa.size(); ++i)
      CHECK(std::equal(pa[i].second.data().begin(), pa[i].second.data().end(), pb[i].second.data().begin()));
  }
  SUBCASE("patience zero stops at the first non-improving epoch") {
    auto cfg = small_config();
    cfg.max_epochs = 30;
    cfg.patience = 0;
    cfg.learning_rate = 0.05;
    const auto r = fit(g, split, cfg);
    for (std::size_t i = 1; i + 1 < r.history.size(); ++i)
      CHECK(r.history[i].validation_loss < r.history[i - 1].validation_loss);
    if (r.history.size() < cfg.max_epochs) {
      const auto n = r.history.size();
      double best_before = r.history[0].validation_loss;
      for (std::size_t i = 0; i + 1 < n; ++i) best_before = std::min(best_before, r.history[i].validation_loss);
      CHECK(r.history[n - 1].validation_loss >= best_before);
    }
  }
  SUBCASE("frozen encoder stays bitwise unchanged") {
    auto cfg = small_config();
    cfg.max_epochs = 2;
    auto m = small_model(g, cfg, 9);
    const auto before = m.clone();
    FitOptions opts;
    opts.freeze_encoder = true;
    const auto r = fit(m, g, split, cfg, opts);
    for (const auto& [name, t] : before.params.items()) {
      if (name.rfind("enc.", 0) != 0) continue;
      const auto& after = r.model.params.get(name);
      CHECK(std::equal(t.data().begin(), t.data().end(), after.data().begin()));
    }
    CHECK(r.model.norms[0].running_mean == before.norms[0].running_mean);
    const auto& w0 = before.params.get("dec.w");
    CHECK(!std::equal(w0.data().begin(), w0.data().end(), r.model.params.get("dec.w").data().begin()));
  }
  SUBCASE("empty supervision set") {
    graph::EdgeSplit empty;
    empty.message = split.message;
    CHECK_THROWS_AS(fit(g, empty, small_config()), ConfigError);
  }
}

TEST_CASE("config json round-trip") {
  auto c = small_config();
  c.kind = model::EncoderKind::sage;
  nlohmann::json j = c;
  const auto back = training_config_from_json(j);
  CHECK(back.kind == model::EncoderKind::sage);
  CHECK(back.hidden == 8);
  CHECK(back.batch_size == 16);
  const auto sage = training_config_from_json(nlohmann::json{{"encoder", "sage"}});
  CHECK(sage.hidden == 256);
  CHECK_THROWS_AS(training_config_from_json(nlohmann::json{{"encoder", "gat"}, {"batch_size", 0}}).validate(), ConfigError);
}

TEST_CASE("scoring") {
  const auto data = small_dataset();
  const auto boundary = data.transactions[data.transactions.size() * 4 / 5].timestamp;
  const auto h = datagen::holdout_split(data.transactions, boundary);
  const auto g = graph::BipartiteGraph::build(h.train, data.profiles);
  const auto split = graph::split_edges(g, {0.5, 0.3, 0.2}, 2);
  auto cfg = small_config();
  cfg.max_epochs = 6;
  const auto r = fit(g, split, cfg);
  Scorer scorer(r.model.clone(), g, {cfg.fanout, 3, 64});

  SUBCASE("results are well formed") {
    std::vector<graph::RawTransaction> news(h.test.begin(), h.test.begin() + 50);
    news[0].source = "nobody";
    const auto results = scorer.score(news);
    bool cold = false;
    for (const auto& res : results) {
      if (res.cold_start) {
        cold = true;
        CHECK(!res.likelihood);
        CHECK(res.customer_id == "nobody");
        continue;
      }
      REQUIRE(res.likelihood);
      CHECK(*res.likelihood >= 0.0);
      CHECK(*res.likelihood <= 1.0);
      CHECK(*res.likelihood + *res.anomaly_score == doctest::Approx(1.0).epsilon(1e-15));
    }
    CHECK(cold);
    std::size_t expected = 0;
    for (const auto& t : news) expected += (t.source != graph::kExternal) + (t.dest != graph::kExternal);
    CHECK(results.size() == expected);
  }
  SUBCASE("scoring is deterministic") {
    const std::span<const graph::RawTransaction> news(h.test.data(), 30);
    const auto a = scorer.score(news);
    const auto b = Scorer(r.model.clone(), g, {cfg.fanout, 3, 64}).score(news);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].likelihood == b[i].likelihood);
  }
  SUBCASE("replayed training transactions score high") {
    std::vector<graph::RawTransaction> replay;
    for (std::size_t i = 0; i < 200; ++i) {
      auto t = h.train[i * 3];
      t.txn_id += "-replay";
      replay.push_back(t);
    }
    const auto results = scorer.score(replay);
    std::vector<double> ys;
    for (const auto& res : results) ys.push_back(*res.likelihood);
    std::nth_element(ys.begin(), ys.begin() + static_cast<std::ptrdiff_t>(ys.size() / 2), ys.end());
    CHECK(ys[ys.size() / 2] > 0.5);
  }
  SUBCASE("holdout queries pair every real side with a negative") {
    const std::span<const graph::RawTransaction> news(h.test.data(), 40);
    const auto q = holdout_queries(g, news, 1);
    REQUIRE(q.queries.size() == q.labels.size());
    for (std::size_t i = 0; i < q.queries.size(); i += 2) {
      CHECK(q.labels[i] == 1);
      CHECK(q.labels[i + 1] == 0);
      CHECK(q.queries[i].txn == q.queries[i + 1].txn);
      CHECK(q.queries[i].customer != q.queries[i + 1].customer);
      const auto& t = news[q.queries[i].txn];
      const auto& id = q.queries[i].dir == Direction::outgoing ? t.source : t.dest;
      CHECK(g.customer_ids()[static_cast<std::size_t>(q.queries[i].customer)] == id);
    }
    const auto p = scorer.score_pairs(news, q.queries);
    for (double v : p) CHECK((v > 0.0 && v < 1.0));
  }
  SUBCASE("results file round-trip") {
    const std::span<const graph::RawTransaction> news(h.test.data(), 10);
    auto results = scorer.score(news);
    results.push_back({"x", Direction::incoming, "nobody", true, std::nullopt, std::nullopt});
    const auto path = (std::filesystem::temp_directory_path() / "txnlink_results.jsonl").string();
    write_results(path, results);
    const auto back = read_results(path);
    REQUIRE(back.size() == results.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].txn_id == results[i].txn_id);
      CHECK(back[i].dir == results[i].dir);
      CHECK(back[i].cold_start == results[i].cold_start);
      CHECK(back[i].likelihood == results[i].likelihood);
    }
    std::filesystem::remove(path);
  }
}
