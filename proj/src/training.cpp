#include "txnlink/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "txnlink/errors.hpp"
#include "txnlink/seeding.hpp"

namespace txnlink::training {

using nlohmann::json;

TrainingConfig TrainingConfig::defaults_for(model::EncoderKind kind) {
  TrainingConfig c;
  c.kind = kind;
  switch (kind) {
    case model::EncoderKind::gat: c.hidden = 32; c.heads = 4; break;
    case model::EncoderKind::sage: c.hidden = 256; c.heads = 1; break;
    case model::EncoderKind::gin: c.hidden = 32; c.heads = 1; break;
  }
  return c;
}

model::ModelConfig TrainingConfig::model_config(std::size_t customer_dim, std::size_t txn_dim) const {
  model::ModelConfig m;
  m.kind = kind;
  m.layers = layers;
  m.hidden = hidden;
  m.heads = kind == model::EncoderKind::gat ? heads : 1;
  m.batch_norm = batch_norm;
  m.dropout = dropout;
  m.customer_dim = customer_dim;
  m.txn_dim = txn_dim;
  return m;
}

void TrainingConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (negatives == 0) throw ConfigError("negatives per positive must be >= 1");
  if (fanout == 0) throw ConfigError("fanout must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  model_config(1, 1).validate();
}

void to_json(json& j, const TrainingConfig& c) {
  j = json{{"encoder", model::to_string(c.kind)},
           {"layers", c.layers},
           {"hidden", c.hidden},
           {"heads", c.heads},
           {"batch_norm", c.batch_norm},
           {"dropout", c.dropout},
           {"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"negatives", c.negatives},
           {"fanout", c.fanout},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"seed", c.seed},
           {"split", {{"message", c.split.message}, {"supervision", c.split.supervision}, {"validation", c.split.validation}}}};
}

TrainingConfig training_config_from_json(const json& j) {
  try {
    const auto kind = model::parse_encoder_kind(j.value("encoder", std::string("gat")));
    TrainingConfig c = TrainingConfig::defaults_for(kind);
    c.layers = j.value("layers", c.layers);
    c.hidden = j.value("hidden", c.hidden);
    c.heads = j.value("heads", c.heads);
    c.batch_norm = j.value("batch_norm", c.batch_norm);
    c.dropout = j.value("dropout", c.dropout);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.negatives = j.value("negatives", c.negatives);
    c.fanout = j.value("fanout", c.fanout);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.split.message = s.value("message", c.split.message);
      c.split.supervision = s.value("supervision", c.split.supervision);
      c.split.validation = s.value("validation", c.split.validation);
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

nd::Tensor link_loss(nd::Tape& tape, const nd::Tensor& pos, const nd::Tensor& neg, std::size_t m) {
  if (m == 0) throw UsageError("link_loss needs at least one negative per positive");
  if (neg.size() != pos.size() * m)
    throw DimensionError("link_loss: " + std::to_string(neg.size()) + " negatives for " + std::to_string(pos.size()) +
                         " positives and M=" + std::to_string(m));
  const auto pos_term = nd::sum(tape, nd::log(tape, pos, nd::kProbEps));
  const auto neg_term = nd::sum(tape, nd::log(tape, nd::one_minus(tape, neg), nd::kProbEps));
  return nd::scale(tape, nd::add(tape, pos_term, neg_term), -1.0 / static_cast<double>(pos.size()));
}

void adam_step(AdamState& s, model::ParamStore& params, double lr) {
  auto& items = params.items();
  if (s.m.empty()) {
    for (const auto& [_, t] : items) {
      s.m.emplace_back(t.size(), 0.0);
      s.v.emplace_back(t.size(), 0.0);
    }
  }
  if (s.m.size() != items.size()) throw UsageError("optimizer state does not match parameter set");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& t = items[i].second;
    if (!t.requires_grad()) continue;
    const auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
      v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

// ---------------------------------------------------------------------------

nd::Tensor forward_pairs(nd::Tape& tape, model::Model& m, const graph::BipartiteGraph& g, std::span<const EdgeRef> pairs,
                         const graph::SeveredEdges& hidden, std::size_t fanout, std::uint64_t seed, nd::Mode mode) {
  if (pairs.empty()) throw UsageError("forward_pairs on an empty batch");
  const Direction d = pairs[0].dir;
  graph::SeveredEdges severed = hidden;
  std::vector<Index> cs, ts;
  cs.reserve(pairs.size());
  ts.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.dir != d) throw UsageError("a batch must hold a single direction");
    if (g.customer_of(p.txn, d) >= 0) severed.add(d, p.txn);
    cs.push_back(p.customer);
    ts.push_back(p.txn);
  }
  graph::SampleOptions so;
  so.fanout = fanout;
  so.layers = m.config.layers;
  so.seed = seed;
  so.severed = &severed;
  const auto sub = graph::sample_neighborhood(g, cs, ts, so);
  const auto z = model::encode(tape, m, sub, g.customer_features(), g.txn_features(), mode, seed);

  std::unordered_map<Index, Index> crow, trow;
  for (std::size_t i = 0; i < sub.customers[0].size(); ++i) crow.emplace(sub.customers[0][i], static_cast<Index>(i));
  for (std::size_t i = 0; i < sub.transactions[0].size(); ++i) trow.emplace(sub.transactions[0][i], static_cast<Index>(i));
  std::vector<Index> ci, ti;
  for (const auto& p : pairs) {
    ci.push_back(crow.at(p.customer));
    ti.push_back(trow.at(p.txn));
  }
  return model::decode(tape, m.params.get("dec.w"), nd::gather_rows(tape, z.customers, ci),
                       nd::gather_rows(tape, z.transactions, ti));
}

double predict_link(model::Model& m, const graph::BipartiteGraph& g, const EdgeRef& pair,
                    const graph::SeveredEdges& hidden, std::size_t fanout, std::uint64_t seed) {
  nd::Tape tape(false);
  const EdgeRef pairs[1] = {pair};
  return forward_pairs(tape, m, g, pairs, hidden, fanout, seed, nd::Mode::infer).item();
}

namespace {

nd::Tensor batch_loss(nd::Tape& tape, model::Model& m, const graph::BipartiteGraph& g, const LinkBatch& batch,
                      const graph::SeveredEdges& hidden, std::size_t fanout, std::size_t negatives, std::uint64_t seed,
                      nd::Mode mode) {
  std::vector<EdgeRef> pairs = batch.positives;
  pairs.insert(pairs.end(), batch.negatives.begin(), batch.negatives.end());
  const auto preds = forward_pairs(tape, m, g, pairs, hidden, fanout, seed, mode);
  const std::size_t b = batch.positives.size();
  std::vector<Index> neg_rows(batch.negatives.size());
  for (std::size_t i = 0; i < neg_rows.size(); ++i) neg_rows[i] = static_cast<Index>(b + i);
  return link_loss(tape, nd::slice_rows(tape, preds, b), nd::gather_rows(tape, preds, neg_rows), negatives);
}

std::vector<std::vector<EdgeRef>> chunk(const std::vector<EdgeRef>& edges, std::size_t size) {
  std::vector<std::vector<EdgeRef>> out;
  for (std::size_t i = 0; i < edges.size(); i += size)
    out.emplace_back(edges.begin() + static_cast<std::ptrdiff_t>(i),
                     edges.begin() + static_cast<std::ptrdiff_t>(std::min(edges.size(), i + size)));
  return out;
}

constexpr std::uint64_t kTagTrain = 1, kTagValidation = 2, kTagNegatives = 3, kTagSample = 4, kTagShuffle = 5,
                        kTagInit = 6;

}  // namespace

StepResult train_step(model::Model& m, AdamState& adam, const graph::BipartiteGraph& g, const LinkBatch& batch,
                      const graph::SeveredEdges& hidden, const TrainingConfig& cfg, std::uint64_t step_seed) {
  if (batch.positives.empty()) throw ConfigError("empty supervision batch");
  const bool frozen = !m.params.get("enc.0.self.customer.w").requires_grad();
  nd::Tape tape;
  const auto loss = batch_loss(tape, m, g, batch, hidden, cfg.fanout, cfg.negatives, step_seed,
                               frozen ? nd::Mode::infer : nd::Mode::train);
  if (!std::isfinite(loss.item())) throw NumericalError("training aborted: non-finite loss");
  tape.backward(loss);
  adam_step(adam, m.params, cfg.learning_rate);
  return {loss.item(), batch.positives.size()};
}

double validation_loss(model::Model& m, const graph::BipartiteGraph& g, const graph::EdgeSplit& split,
                       const TrainingConfig& cfg) {
  const graph::SeveredEdges none;
  double total = 0.0;
  std::size_t count = 0;
  for (Direction d : {Direction::outgoing, Direction::incoming}) {
    const auto batches = chunk(split.validation_in(d), cfg.batch_size);
    for (std::size_t k = 0; k < batches.size(); ++k) {
      LinkBatch b;
      b.positives = batches[k];
      b.negatives = graph::sample_negatives(g, b.positives.size() * cfg.negatives, d,
                                            derive_seed(cfg.seed, {kTagValidation, kTagNegatives, static_cast<std::uint64_t>(d), k}));
      nd::Tape tape(false);
      const auto loss = batch_loss(tape, m, g, b, none, cfg.fanout, cfg.negatives,
                                   derive_seed(cfg.seed, {kTagValidation, kTagSample, static_cast<std::uint64_t>(d), k}),
                                   nd::Mode::infer);
      total += loss.item() * static_cast<double>(b.positives.size());
      count += b.positives.size();
    }
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return total / static_cast<double>(count);
}

FitResult fit(const graph::BipartiteGraph& g, const graph::EdgeSplit& split, const TrainingConfig& cfg,
              const FitOptions& opts) {
  cfg.validate();
  auto m = model::make_model(cfg.model_config(g.customer_dim(), g.txn_dim()), derive_seed(cfg.seed, {kTagInit}));
  return fit(std::move(m), g, split, cfg, opts);
}

FitResult fit(model::Model m, const graph::BipartiteGraph& g, const graph::EdgeSplit& split, const TrainingConfig& cfg,
              const FitOptions& opts) {
  cfg.validate();
  if (m.config.customer_dim != g.customer_dim() || m.config.txn_dim != g.txn_dim())
    throw ModelError("model feature dimensions do not match the graph");
  const auto sup_out = split.supervision_in(Direction::outgoing);
  const auto sup_in = split.supervision_in(Direction::incoming);
  if (sup_out.empty() && sup_in.empty()) throw ConfigError("supervision set is empty");

  m.params.set_trainable("", true);
  if (opts.freeze_encoder) m.params.set_trainable("enc.", false);

  graph::SeveredEdges hidden;
  for (const auto& e : split.validation) hidden.add(e);

  AdamState adam;
  FitResult result;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto out_edges = sup_out, in_edges = sup_in;
    std::mt19937_64 rng(derive_seed(cfg.seed, {kTagShuffle, epoch}));
    std::shuffle(out_edges.begin(), out_edges.end(), rng);
    std::shuffle(in_edges.begin(), in_edges.end(), rng);
    const auto out_batches = chunk(out_edges, cfg.batch_size);
    const auto in_batches = chunk(in_edges, cfg.batch_size);

    double loss_sum = 0.0;
    std::size_t seen = 0, step = 0;
    for (std::size_t i = 0; i < std::max(out_batches.size(), in_batches.size()); ++i) {
      for (const auto* batches : {&out_batches, &in_batches}) {
        if (i >= batches->size()) continue;
        LinkBatch b;
        b.positives = (*batches)[i];
        const Direction d = b.positives[0].dir;
        b.negatives = graph::sample_negatives(g, b.positives.size() * cfg.negatives, d,
                                              derive_seed(cfg.seed, {kTagTrain, kTagNegatives, epoch, step}));
        const auto r = train_step(m, adam, g, b, hidden, cfg, derive_seed(cfg.seed, {kTagTrain, kTagSample, epoch, step}));
        loss_sum += r.loss * static_cast<double>(r.batch);
        seen += r.batch;
        ++step;
      }
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(seen);
    em.validation_loss = split.validation.empty() ? em.train_loss : validation_loss(m, g, split, cfg);
    if (!std::isfinite(em.validation_loss)) throw NumericalError("training aborted: non-finite validation loss");
    result.history.push_back(em);
    if (opts.on_epoch) opts.on_epoch(em);

    if (em.validation_loss < best) {
      best = em.validation_loss;
      result.model = m.clone();
      result.best_epoch = epoch;
      result.best_validation_loss = best;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  result.model.params.set_trainable("", true);
  return result;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const AnomalyResult& r) {
  j = json{{"txn_id", r.txn_id},
           {"direction", graph::to_string(r.dir)},
           {"customer_id", r.customer_id},
           {"cold_start", r.cold_start},
           {"likelihood", r.likelihood ? json(*r.likelihood) : json(nullptr)},
           {"anomaly_score", r.anomaly_score ? json(*r.anomaly_score) : json(nullptr)}};
}

Scorer::Scorer(model::Model m, const graph::BipartiteGraph& reference, ScoringOptions opts)
    : model_(std::move(m)), reference_(reference), opts_(opts) {
  if (model_.config.customer_dim != reference.customer_dim() || model_.config.txn_dim != reference.txn_dim())
    throw ModelError("model feature dimensions do not match the reference graph");
  nd::Tape tape(false);
  const auto sub = graph::full_neighborhood(reference, model_.config.layers);
  customer_z_ = model::encode(tape, model_, sub, reference.customer_features(), reference.txn_features(),
                              nd::Mode::infer, 0)
                    .customers;
}

std::vector<graph::RawTransaction> Scorer::sanitize(std::span<const graph::RawTransaction> txns) const {
  std::vector<graph::RawTransaction> out(txns.begin(), txns.end());
  for (auto& t : out) {
    if (t.source != graph::kExternal && reference_.find_customer(t.source) < 0) t.source = graph::kExternal;
    if (t.dest != graph::kExternal && reference_.find_customer(t.dest) < 0) t.dest = graph::kExternal;
  }
  return out;
}

namespace {

struct Augmented {
  graph::BipartiteGraph graph;
  std::vector<Index> node;  // new-transaction index -> augmented node id, -1 if not insertable
};

Augmented augment(const graph::BipartiteGraph& ref, const std::vector<graph::RawTransaction>& clean) {
  Augmented a;
  std::vector<graph::RawTransaction> insertable;
  for (const auto& t : clean) {
    if (t.source == graph::kExternal && t.dest == graph::kExternal) {
      a.node.push_back(-1);
      continue;
    }
    a.node.push_back(static_cast<Index>(ref.num_transactions() + insertable.size()));
    insertable.push_back(t);
  }
  a.graph = ref.with_transactions(insertable);
  return a;
}

nd::Tensor embed_new(model::Model& m, const Augmented& a, std::size_t first_new, Direction dir,
                     const ScoringOptions& opts) {
  graph::SeveredEdges severed;
  std::vector<Index> seeds;
  for (Index id : a.node) {
    if (id < 0) continue;
    severed.add(dir, id);
    seeds.push_back(id);
  }
  std::vector<nd::Tensor> parts;
  for (std::size_t start = 0; start < seeds.size(); start += opts.chunk) {
    const std::size_t end = std::min(seeds.size(), start + opts.chunk);
    const std::span<const Index> ts(seeds.data() + start, end - start);
    graph::SampleOptions so;
    so.fanout = opts.fanout;
    so.layers = m.config.layers;
    so.seed = derive_seed(opts.seed, {static_cast<std::uint64_t>(dir), start});
    so.severed = &severed;
    so.transient_from = static_cast<Index>(first_new);
    const auto sub = graph::sample_neighborhood(a.graph, {}, ts, so);
    nd::Tape tape(false);
    parts.push_back(model::encode(tape, m, sub, a.graph.customer_features(), a.graph.txn_features(), nd::Mode::infer,
                                  0).transactions);
  }
  nd::Tape tape(false);
  if (parts.empty()) return nd::Tensor::zeros({0, m.out_dim()});
  return nd::concat(tape, parts, 0);
}

}  // namespace

nd::Tensor Scorer::transaction_embeddings(std::span<const graph::RawTransaction> txns, Direction dir) {
  const auto a = augment(reference_, sanitize(txns));
  return embed_new(model_, a, reference_.num_transactions(), dir, opts_);
}

std::vector<double> Scorer::score_pairs(std::span<const graph::RawTransaction> txns, std::span<const PairQuery> queries) {
  const auto a = augment(reference_, sanitize(txns));
  // Row of each insertable transaction inside the embedding matrix.
  std::vector<Index> row(a.node.size(), -1);
  Index next = 0;
  for (std::size_t i = 0; i < a.node.size(); ++i)
    if (a.node[i] >= 0) row[i] = next++;

  std::array<nd::Tensor, 2> z;
  for (const auto& q : queries) {
    if (q.txn >= txns.size()) throw UsageError("query references transaction outside the list");
    if (row[q.txn] < 0) throw UsageError("query targets a transaction with no known customer");
    if (q.customer < 0 || static_cast<std::size_t>(q.customer) >= reference_.num_customers())
      throw LookupError("query customer outside the reference graph");
    auto& zt = z[static_cast<std::size_t>(q.dir)];
    if (!zt.defined()) zt = embed_new(model_, a, reference_.num_transactions(), q.dir, opts_);
  }
  std::vector<Index> ci, ti;
  std::vector<double> out(queries.size());
  for (Direction d : {Direction::outgoing, Direction::incoming}) {
    ci.clear();
    ti.clear();
    std::vector<std::size_t> slot;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      if (queries[i].dir != d) continue;
      ci.push_back(queries[i].customer);
      ti.push_back(row[queries[i].txn]);
      slot.push_back(i);
    }
    if (slot.empty()) continue;
    nd::Tape tape(false);
    const auto p = model::decode(tape, model_.params.get("dec.w"), nd::gather_rows(tape, customer_z_, ci),
                                 nd::gather_rows(tape, z[static_cast<std::size_t>(d)], ti));
    for (std::size_t k = 0; k < slot.size(); ++k) out[slot[k]] = p.at(k);
  }
  return out;
}

std::vector<AnomalyResult> Scorer::score(std::span<const graph::RawTransaction> txns) {
  std::vector<AnomalyResult> results;
  std::vector<PairQuery> queries;
  std::vector<std::size_t> query_slot;
  for (std::size_t i = 0; i < txns.size(); ++i) {
    const auto& t = txns[i];
    for (Direction d : {Direction::outgoing, Direction::incoming}) {
      const std::string& cid = d == Direction::outgoing ? t.source : t.dest;
      if (cid == graph::kExternal) continue;
      AnomalyResult r;
      r.txn_id = t.txn_id;
      r.dir = d;
      r.customer_id = cid;
      const Index c = reference_.find_customer(cid);
      if (c < 0) {
        r.cold_start = true;
      } else {
        queries.push_back({i, d, c});
        query_slot.push_back(results.size());
      }
      results.push_back(std::move(r));
    }
  }
  const auto p = score_pairs(txns, queries);
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto& r = results[query_slot[k]];
    r.likelihood = p[k];
    r.anomaly_score = model::anomaly_score(p[k]);
  }
  return results;
}

HoldoutQueries holdout_queries(const graph::BipartiteGraph& ref, std::span<const graph::RawTransaction> txns,
                               std::uint64_t seed) {
  if (ref.num_customers() < 2) throw SamplingError("need at least two customers to draw negatives");
  HoldoutQueries h;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick(0, static_cast<Index>(ref.num_customers()) - 1);
  for (std::size_t i = 0; i < txns.size(); ++i) {
    for (Direction d : {Direction::outgoing, Direction::incoming}) {
      const std::string& cid = d == Direction::outgoing ? txns[i].source : txns[i].dest;
      const Index c = cid == graph::kExternal ? -1 : ref.find_customer(cid);
      if (c < 0) continue;
      Index other;
      do other = pick(rng);
      while (other == c);
      h.queries.push_back({i, d, c});
      h.labels.push_back(1);
      h.queries.push_back({i, d, other});
      h.labels.push_back(0);
    }
  }
  return h;
}

void write_results(const std::string& path, std::span<const AnomalyResult> results) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path);
  for (const auto& r : results) out << json(r).dump() << '\n';
}

std::vector<AnomalyResult> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read " + path);
  std::vector<AnomalyResult> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      AnomalyResult r;
      r.txn_id = j.at("txn_id").get<std::string>();
      r.dir = graph::parse_direction(j.at("direction").get<std::string>());
      r.customer_id = j.value("customer_id", std::string());
      r.cold_start = j.value("cold_start", false);
      if (!j.at("likelihood").is_null()) r.likelihood = j.at("likelihood").get<double>();
      if (!j.at("anomaly_score").is_null()) r.anomaly_score = j.at("anomaly_score").get<double>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IngestionError(path + ": " + e.what());
    }
  }
  return out;
}

}  // namespace txnlink::training
