#include "txnlink/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "txnlink/errors.hpp"
#include "txnlink/seeding.hpp"

namespace txnlink::baselines {

namespace {

std::string lname(std::size_t i, const char* rest) { return "mlp." + std::to_string(i) + "." + rest; }

std::vector<Index> iota_index(std::size_t n) {
  std::vector<Index> v(n);
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

}  // namespace

void MlpConfig::validate() const {
  if (widths.empty() || widths.back() != 1) throw ConfigError("MLP widths must end with a single output unit");
  for (auto w : widths)
    if (w == 0) throw ConfigError("MLP widths must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("MLP dropout must lie in [0,1)");
  if (!(learning_rate > 0.0)) throw ConfigError("MLP learning_rate must be positive");
  if (batch_size < 2) throw ConfigError("MLP batch_size must be >= 2");
  if (max_epochs == 0) throw ConfigError("MLP max_epochs must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("MLP validation_fraction must lie in (0,1)");
}

Mlp Mlp::clone() const {
  Mlp c = *this;
  c.params = params.clone();
  return c;
}

Mlp make_mlp(std::size_t customer_dim, std::size_t txn_dim, const MlpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Mlp m;
  m.customer_dim = customer_dim;
  m.txn_dim = txn_dim;
  m.widths = cfg.widths;
  m.dropout = cfg.dropout;
  m.batch_norm = cfg.batch_norm;
  std::size_t in = m.in_dim();
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const std::size_t out = cfg.widths[i];
    m.params.add(lname(i, "w"), {in, out}, model::glorot_uniform(in, out, in * out, seed * 1000003ULL + i + 1));
    m.params.add(lname(i, "b"), {1, out}, std::vector<double>(out, 0.0));
    if (cfg.batch_norm && i + 1 < cfg.widths.size()) {
      m.params.add(lname(i, "bn.gamma"), {1, out}, std::vector<double>(out, 1.0));
      m.params.add(lname(i, "bn.beta"), {1, out}, std::vector<double>(out, 0.0));
      m.norms.emplace_back(out);
    }
    in = out;
  }
  return m;
}

nd::Tensor mlp_forward(nd::Tape& tape, Mlp& m, const nd::Tensor& x, nd::Mode mode, std::uint64_t seed) {
  if (x.cols() != m.in_dim())
    throw ModelError("MLP expects " + std::to_string(m.in_dim()) + " input columns, got " + std::to_string(x.cols()));
  nd::Tensor h = x;
  std::size_t bn = 0;
  for (std::size_t i = 0; i < m.widths.size(); ++i) {
    h = nd::add_row(tape, nd::matmul(tape, h, m.params.get(lname(i, "w"))), m.params.get(lname(i, "b")));
    if (i + 1 == m.widths.size()) break;
    h = nd::relu(tape, h);
    if (m.batch_norm)
      h = nd::batch_norm(tape, h, m.params.get(lname(i, "bn.gamma")), m.params.get(lname(i, "bn.beta")), m.norms[bn++],
                         mode);
    h = nd::dropout(tape, h, m.dropout, derive_seed(seed, {i}), mode);
  }
  return nd::sigmoid(tape, h);
}

double mlp_predict(Mlp& m, std::span<const double> f_src, std::span<const double> f_dst, std::span<const double> f_txn) {
  auto check = [](std::span<const double> f, std::size_t d, const char* what) {
    if (!f.empty() && f.size() != d)
      throw ModelError(std::string("MLP ") + what + " features have " + std::to_string(f.size()) + " values, expected " +
                       std::to_string(d));
  };
  check(f_src, m.customer_dim, "source");
  check(f_dst, m.customer_dim, "destination");
  if (f_txn.size() != m.txn_dim) throw ModelError("MLP transaction features have the wrong length");
  std::vector<double> row(m.in_dim(), 0.0);
  std::copy(f_src.begin(), f_src.end(), row.begin());
  std::copy(f_dst.begin(), f_dst.end(), row.begin() + static_cast<std::ptrdiff_t>(m.customer_dim));
  std::copy(f_txn.begin(), f_txn.end(), row.begin() + static_cast<std::ptrdiff_t>(2 * m.customer_dim));
  nd::Tape tape(false);
  return mlp_forward(tape, m, nd::Tensor::from({1, m.in_dim()}, std::move(row)), nd::Mode::infer, 0).item();
}

nd::Tensor mlp_inputs(const nd::Tensor& customer_x, const nd::Tensor& txn_x, std::span<const Triple> triples) {
  const std::size_t dc = customer_x.cols(), dt = txn_x.cols(), w = 2 * dc + dt;
  std::vector<double> v(triples.size() * w, 0.0);
  const auto cx = customer_x.data();
  const auto tx = txn_x.data();
  for (std::size_t i = 0; i < triples.size(); ++i) {
    double* row = v.data() + i * w;
    const auto& t = triples[i];
    if (t.src >= 0) std::copy_n(cx.data() + static_cast<std::size_t>(t.src) * dc, dc, row);
    if (t.dst >= 0) std::copy_n(cx.data() + static_cast<std::size_t>(t.dst) * dc, dc, row + dc);
    std::copy_n(tx.data() + static_cast<std::size_t>(t.txn) * dt, dt, row + 2 * dc);
  }
  return nd::Tensor::from({triples.size(), w}, std::move(v));
}

MlpDataset mlp_dataset(const graph::BipartiteGraph& g, std::uint64_t seed) {
  const std::size_t n = g.num_transactions();
  if (g.num_customers() == 0 || n == 0) throw SamplingError("MLP dataset needs customers and transactions");
  MlpDataset d;
  std::size_t ext_src = 0, ext_dst = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const Triple p{g.customer_of(static_cast<Index>(t), graph::Direction::outgoing),
                   g.customer_of(static_cast<Index>(t), graph::Direction::incoming), static_cast<Index>(t)};
    ext_src += p.src < 0;
    ext_dst += p.dst < 0;
    d.examples.push_back(p);
    d.labels.push_back(1.0);
  }
  const double p_src = static_cast<double>(ext_src) / static_cast<double>(n);
  const double p_dst = static_cast<double>(ext_dst) / static_cast<double>(n);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> cust(0, static_cast<Index>(g.num_customers()) - 1);
  std::uniform_int_distribution<Index> txn(0, static_cast<Index>(n) - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    Triple q;
    q.src = u(rng) < p_src ? -1 : cust(rng);
    q.dst = u(rng) < p_dst ? -1 : cust(rng);
    if (q.src < 0 && q.dst < 0) q.dst = cust(rng);
    q.txn = txn(rng);
    d.examples.push_back(q);
    d.labels.push_back(0.0);
  }
  return d;
}

std::vector<double> mlp_predict_batch(Mlp& m, const nd::Tensor& customer_x, const nd::Tensor& txn_x,
                                      std::span<const Triple> triples) {
  std::vector<double> out;
  out.reserve(triples.size());
  constexpr std::size_t kChunk = 4096;
  for (std::size_t i = 0; i < triples.size(); i += kChunk) {
    const auto part = triples.subspan(i, std::min(kChunk, triples.size() - i));
    nd::Tape tape(false);
    const auto p = mlp_forward(tape, m, mlp_inputs(customer_x, txn_x, part), nd::Mode::infer, 0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return out;
}

std::vector<double> mlp_score_pairs(Mlp& m, const graph::BipartiteGraph& reference,
                                    std::span<const graph::RawTransaction> txns,
                                    std::span<const training::PairQuery> queries) {
  std::vector<double> rows;
  rows.reserve(txns.size() * reference.txn_dim());
  for (const auto& t : txns) {
    if (t.features.size() != reference.txn_dim()) throw IngestionError("transaction " + t.txn_id + " has wrong feature length");
    const auto f = reference.txn_scaler().apply(t.features);
    rows.insert(rows.end(), f.begin(), f.end());
  }
  const auto tx = nd::Tensor::from({txns.size(), reference.txn_dim()}, std::move(rows));
  std::vector<Triple> triples;
  for (const auto& q : queries) {
    if (q.txn >= txns.size()) throw UsageError("query references transaction outside the list");
    const auto& t = txns[q.txn];
    const Index src = t.source == graph::kExternal ? -1 : reference.find_customer(t.source);
    const Index dst = t.dest == graph::kExternal ? -1 : reference.find_customer(t.dest);
    if (q.dir == graph::Direction::outgoing)
      triples.push_back({q.customer, dst, static_cast<Index>(q.txn)});
    else
      triples.push_back({src, q.customer, static_cast<Index>(q.txn)});
  }
  return mlp_predict_batch(m, reference.customer_features(), tx, triples);
}

namespace {

double mlp_loss_on(Mlp& m, const nd::Tensor& cx, const nd::Tensor& tx, const MlpDataset& data,
                   std::span<const std::size_t> rows) {
  std::vector<Triple> ex;
  std::vector<double> y;
  for (auto r : rows) {
    ex.push_back(data.examples[r]);
    y.push_back(data.labels[r]);
  }
  const auto p = mlp_predict_batch(m, cx, tx, ex);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], nd::kProbEps, 1.0 - nd::kProbEps);
    total -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return total / static_cast<double>(p.size());
}

}  // namespace

MlpFitResult mlp_fit(const graph::BipartiteGraph& g, const MlpConfig& cfg,
                     const std::function<void(const training::EpochMetrics&)>& on_epoch) {
  return mlp_fit(g.customer_features(), g.txn_features(), mlp_dataset(g, derive_seed(cfg.seed, {1})), cfg, on_epoch);
}

MlpFitResult mlp_fit(const nd::Tensor& cx, const nd::Tensor& tx, const MlpDataset& data, const MlpConfig& cfg,
                     const std::function<void(const training::EpochMetrics&)>& on_epoch) {
  cfg.validate();
  if (data.examples.size() != data.labels.size()) throw UsageError("MLP dataset labels do not match examples");
  if (data.examples.size() < 4) throw ConfigError("MLP dataset too small");
  Mlp m = make_mlp(cx.cols(), tx.cols(), cfg, derive_seed(cfg.seed, {2}));

  std::vector<std::size_t> order(data.examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 split_rng(derive_seed(cfg.seed, {3}));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.validation_fraction *
                                                                                       static_cast<double>(order.size()))));
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  training::AdamState adam;
  MlpFitResult result;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, {4, epoch}));
    std::shuffle(train.begin(), train.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < train.size(); i += cfg.batch_size) {
      const std::size_t end = std::min(train.size(), i + cfg.batch_size);
      if (end - i < 2) continue;  // batch norm needs two rows
      std::vector<Triple> ex;
      std::vector<double> y;
      for (std::size_t k = i; k < end; ++k) {
        ex.push_back(data.examples[train[k]]);
        y.push_back(data.labels[train[k]]);
      }
      nd::Tape tape;
      const auto p = mlp_forward(tape, m, mlp_inputs(cx, tx, ex), nd::Mode::train, derive_seed(cfg.seed, {5, epoch, i}));
      const auto loss = nd::bce(tape, p, y);
      if (!std::isfinite(loss.item())) throw NumericalError("MLP training aborted: non-finite loss");
      tape.backward(loss);
      training::adam_step(adam, m.params, cfg.learning_rate);
      loss_sum += loss.item() * static_cast<double>(end - i);
      seen += end - i;
    }
    training::EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    em.validation_loss = mlp_loss_on(m, cx, tx, data, val);
    result.history.push_back(em);
    if (on_epoch) on_epoch(em);
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
  return result;
}

void save_mlp(const Mlp& m, std::ostream& out) {
  model::CheckpointHeader h;
  h.kind = "mlp";
  h.tag = "mlp";
  h.layers = m.widths.size();
  h.customer_dim = m.customer_dim;
  h.txn_dim = m.txn_dim;
  h.hidden = m.widths.front();
  h.heads = 0;
  h.batch_norm = m.batch_norm;
  h.dropout = m.dropout;
  model::write_checkpoint(out, h, m.params, m.norms);
}

void save_mlp(const Mlp& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path);
  save_mlp(m, out);
}

Mlp load_mlp(std::istream& in) {
  model::CheckpointHeader h;
  Mlp m;
  model::read_checkpoint(in, h, m.params, m.norms);
  if (h.kind != "mlp") throw ModelError("checkpoint holds a " + h.kind + " graph model, not an MLP");
  m.customer_dim = h.customer_dim;
  m.txn_dim = h.txn_dim;
  m.batch_norm = h.batch_norm;
  m.dropout = h.dropout;
  std::size_t in_dim = m.in_dim();
  for (std::size_t i = 0; i < h.layers; ++i) {
    if (!m.params.contains(lname(i, "w"))) throw ModelError("MLP checkpoint is missing layer " + std::to_string(i));
    const auto& w = m.params.get(lname(i, "w"));
    if (w.rows() != in_dim) throw ModelError("MLP checkpoint layer " + std::to_string(i) + " has the wrong input width");
    m.widths.push_back(w.cols());
    in_dim = w.cols();
  }
  if (m.widths.empty() || m.widths.back() != 1) throw ModelError("MLP checkpoint does not end in one output");
  return m;
}

Mlp load_mlp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path);
  return load_mlp(in);
}

// ---------------------------------------------------------------------------

nd::Tensor shuffle_rows(const nd::Tensor& x, std::span<const Index> perm) {
  if (perm.size() != x.rows()) throw DimensionError("permutation length does not match row count");
  nd::Tape tape(false);
  return nd::gather_rows(tape, x, perm);
}

nd::Tensor dgi_discriminate(nd::Tape& tape, const nd::Tensor& w, const nd::Tensor& z, const nd::Tensor& summary) {
  const auto s = nd::sigmoid(tape, nd::mean_rows(tape, summary));
  return nd::sigmoid(tape, nd::head_dot(tape, z, nd::matmul(tape, s, w), 1));
}

nd::Tensor dgi_loss(nd::Tape& tape, const nd::Tensor& w, const nd::Tensor& clean, const nd::Tensor& corrupted) {
  const auto pos = dgi_discriminate(tape, w, clean, clean);
  const auto neg = dgi_discriminate(tape, w, corrupted, clean);
  const std::vector<double> ones(clean.rows(), 1.0), zeros(corrupted.rows(), 0.0);
  return nd::add(tape, nd::bce(tape, pos, ones), nd::bce(tape, neg, zeros));
}

nd::Tensor dgi_objective(nd::Tape& tape, Dgi& d, const graph::BipartiteGraph& g, const graph::Subgraph& sub,
                         std::uint64_t seed, nd::Mode mode) {
  const auto& cx = g.customer_features();
  const auto& tx = g.txn_features();
  const auto clean = model::encode(tape, d.encoder, sub, cx, tx, mode, seed);
  nd::Tensor total;
  for (graph::NodeType t : {graph::NodeType::customer, graph::NodeType::transaction}) {
    if (sub.nodes(0, t).empty()) continue;
    const auto& x = g.features(t);
    auto perm = iota_index(x.rows());
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(t), 1}));
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto xs = shuffle_rows(x, perm);
    const auto corrupted = t == graph::NodeType::customer ? model::encode(tape, d.encoder, sub, xs, tx, mode, seed)
                                                          : model::encode(tape, d.encoder, sub, cx, xs, mode, seed);
    const char* name = t == graph::NodeType::customer ? "dgi.customer.w" : "dgi.transaction.w";
    const auto loss = dgi_loss(tape, d.disc.get(name), clean.of(t), corrupted.of(t));
    total = total.defined() ? nd::add(tape, total, loss) : loss;
  }
  if (!total.defined()) throw UsageError("DGI objective on a subgraph with no seeds");
  return total;
}

Dgi dgi_pretrain(const graph::BipartiteGraph& g, const DgiConfig& cfg, const graph::SeveredEdges& hidden,
                 const std::function<void(std::size_t, double)>& on_epoch) {
  cfg.encoder.validate();
  if (cfg.seeds_per_type < 2) throw ConfigError("DGI needs at least two seeds per node type");
  if (cfg.max_epochs == 0) throw ConfigError("DGI max_epochs must be >= 1");
  const std::uint64_t seed = cfg.encoder.seed;
  Dgi d;
  d.encoder = model::make_model(cfg.encoder.model_config(g.customer_dim(), g.txn_dim()), derive_seed(seed, {6}));
  d.encoder.tag = "dgi";
  const std::size_t h = d.encoder.out_dim();
  d.disc.add("dgi.customer.w", {h, h}, model::glorot_uniform(h, h, h * h, derive_seed(seed, {7, 0})));
  d.disc.add("dgi.transaction.w", {h, h}, model::glorot_uniform(h, h, h * h, derive_seed(seed, {7, 1})));
  d.encoder.params.set_trainable("dec.", false);

  training::AdamState adam_enc, adam_disc;
  const std::size_t nc = g.num_customers(), nt = g.num_transactions();
  const std::size_t b = cfg.seeds_per_type;
  const std::size_t steps = std::max<std::size_t>(1, (nc + b - 1) / b);
  Dgi best;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto cperm = iota_index(nc), tperm = iota_index(nt);
    std::mt19937_64 rng(derive_seed(seed, {8, epoch}));
    std::shuffle(cperm.begin(), cperm.end(), rng);
    std::shuffle(tperm.begin(), tperm.end(), rng);
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<Index> cs, ts;
      for (std::size_t k = 0; k < b && s * b + k < nc; ++k) cs.push_back(cperm[s * b + k]);
      for (std::size_t k = 0; k < b && nt > 0; ++k) ts.push_back(tperm[(s * b + k) % nt]);
      if (cs.size() < 2) continue;
      graph::SampleOptions so;
      so.fanout = cfg.encoder.fanout;
      so.layers = d.encoder.config.layers;
      so.seed = derive_seed(seed, {9, epoch, s});
      so.severed = &hidden;
      const auto sub = graph::sample_neighborhood(g, cs, ts, so);
      nd::Tape tape;
      const auto loss = dgi_objective(tape, d, g, sub, so.seed, nd::Mode::train);
      if (!std::isfinite(loss.item())) throw NumericalError("DGI pretraining aborted: non-finite loss");
      tape.backward(loss);
      training::adam_step(adam_enc, d.encoder.params, cfg.learning_rate);
      training::adam_step(adam_disc, d.disc, cfg.learning_rate);
      sum += loss.item();
      ++counted;
    }
    const double mean = sum / static_cast<double>(std::max<std::size_t>(1, counted));
    d.history.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
    if (mean < best_loss) {
      best_loss = mean;
      best.encoder = d.encoder.clone();
      best.disc = d.disc.clone();
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  best.history = d.history;
  best.encoder.params.set_trainable("", true);
  return best;
}

training::FitResult dgi_downstream(const Dgi& d, const graph::BipartiteGraph& g, const graph::EdgeSplit& split,
                                   const training::TrainingConfig& cfg, const training::FitOptions& opts) {
  auto o = opts;
  o.freeze_encoder = true;
  auto r = training::fit(d.encoder.clone(), g, split, cfg, o);
  r.model.tag = "dgi";
  return r;
}

}  // namespace txnlink::baselines
