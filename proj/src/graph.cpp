#include "txnlink/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "txnlink/errors.hpp"

namespace txnlink::graph {

NodeType receiver_type(Relation r) {
  return (r == Relation::out_fwd || r == Relation::in_rev) ? NodeType::transaction : NodeType::customer;
}

NodeType sender_type(Relation r) {
  return receiver_type(r) == NodeType::customer ? NodeType::transaction : NodeType::customer;
}

Direction direction_of(Relation r) {
  return (r == Relation::out_fwd || r == Relation::out_rev) ? Direction::outgoing : Direction::incoming;
}

const char* to_string(Relation r) {
  switch (r) {
    case Relation::out_fwd: return "out_fwd";
    case Relation::out_rev: return "out_rev";
    case Relation::in_fwd: return "in_fwd";
    case Relation::in_rev: return "in_rev";
  }
  return "?";
}

const char* to_string(Direction d) { return d == Direction::outgoing ? "outgoing" : "incoming"; }

Direction parse_direction(const std::string& s) {
  if (s == "outgoing") return Direction::outgoing;
  if (s == "incoming") return Direction::incoming;
  throw IngestionError("unknown direction '" + s + "'");
}

FeatureScaler FeatureScaler::fit(std::span<const std::vector<double>> rows, std::size_t dim) {
  FeatureScaler s;
  s.mean.assign(dim, 0.0);
  s.stddev.assign(dim, 1.0);
  if (rows.empty()) return s;
  for (const auto& r : rows)
    for (std::size_t j = 0; j < dim; ++j) s.mean[j] += r[j];
  for (auto& m : s.mean) m /= static_cast<double>(rows.size());
  std::vector<double> var(dim, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < dim; ++j) var[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
  for (std::size_t j = 0; j < dim; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(rows.size()));
    s.stddev[j] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

std::vector<double> FeatureScaler::apply(std::span<const double> row) const {
  if (row.size() != mean.size())
    throw IngestionError("feature vector of length " + std::to_string(row.size()) + ", expected " +
                         std::to_string(mean.size()));
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / stddev[j];
  return out;
}

namespace {

void check_dims(std::span<const RawTransaction> txns, std::span<const CustomerProfile> profiles) {
  if (profiles.empty()) throw IngestionError("no customer profiles");
  if (txns.empty()) throw IngestionError("no transactions");
  const auto dc = profiles[0].features.size();
  const auto dt = txns[0].features.size();
  if (dc == 0 || dt == 0) throw IngestionError("empty feature vectors");
  for (const auto& p : profiles)
    if (p.features.size() != dc) throw IngestionError("profile " + p.customer_id + " has inconsistent feature length");
  for (const auto& t : txns)
    if (t.features.size() != dt) throw IngestionError("transaction " + t.txn_id + " has inconsistent feature length");
}

nd::Tensor stack_rows(const std::vector<std::vector<double>>& rows, std::size_t dim) {
  std::vector<double> flat;
  flat.reserve(rows.size() * dim);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return nd::Tensor::from({rows.size(), dim}, std::move(flat));
}

Csr csr_from_lists(const std::vector<std::vector<Index>>& lists) {
  Csr c;
  c.offsets.reserve(lists.size() + 1);
  for (const auto& l : lists) {
    c.senders.insert(c.senders.end(), l.begin(), l.end());
    c.offsets.push_back(static_cast<Index>(c.senders.size()));
  }
  return c;
}

}  // namespace

BipartiteGraph BipartiteGraph::build(std::span<const RawTransaction> transactions,
                                     std::span<const CustomerProfile> profiles) {
  check_dims(transactions, profiles);
  std::vector<std::vector<double>> crows, trows;
  for (const auto& p : profiles) crows.push_back(p.features);
  for (const auto& t : transactions) trows.push_back(t.features);
  return build(transactions, profiles, FeatureScaler::fit(crows, crows[0].size()),
               FeatureScaler::fit(trows, trows[0].size()));
}

BipartiteGraph BipartiteGraph::build(std::span<const RawTransaction> transactions,
                                     std::span<const CustomerProfile> profiles, const FeatureScaler& customer_scaler,
                                     const FeatureScaler& txn_scaler) {
  check_dims(transactions, profiles);
  BipartiteGraph g;
  g.customer_scaler_ = customer_scaler;
  g.txn_scaler_ = txn_scaler;
  std::vector<std::vector<double>> crows;
  crows.reserve(profiles.size());
  for (const auto& p : profiles) {
    if (p.customer_id == kExternal) throw IngestionError("EXTERNAL is reserved and cannot be a customer id");
    if (!g.customer_index_.emplace(p.customer_id, static_cast<Index>(g.customer_ids_.size())).second)
      throw IngestionError("duplicate customer id " + p.customer_id);
    g.customer_ids_.push_back(p.customer_id);
    crows.push_back(customer_scaler.apply(p.features));
  }
  std::vector<std::vector<double>> trows;
  trows.reserve(transactions.size());
  for (const auto& t : transactions) {
    if (!g.txn_index_.emplace(t.txn_id, static_cast<Index>(g.txn_ids_.size())).second)
      throw IngestionError("duplicate txn_id " + t.txn_id);
    auto resolve = [&](const std::string& id) -> Index {
      if (id == kExternal) return -1;
      auto it = g.customer_index_.find(id);
      if (it == g.customer_index_.end())
        throw IngestionError("transaction " + t.txn_id + " references customer " + id + " without a profile");
      return it->second;
    };
    const Index s = resolve(t.source), d = resolve(t.dest);
    if (s < 0 && d < 0) throw IngestionError("transaction " + t.txn_id + " has no known customer");
    g.txn_ids_.push_back(t.txn_id);
    g.txn_source_.push_back(s);
    g.txn_dest_.push_back(d);
    trows.push_back(txn_scaler.apply(t.features));
  }
  g.customer_x_ = stack_rows(crows, customer_scaler.mean.size());
  g.txn_x_ = stack_rows(trows, txn_scaler.mean.size());
  g.rebuild_relations(g.txn_source_, g.txn_dest_);
  return g;
}

void BipartiteGraph::rebuild_relations(const std::vector<Index>& src, const std::vector<Index>& dst) {
  const std::size_t nt = src.size(), nc = customer_ids_.size();
  std::vector<std::vector<Index>> out_fwd(nt), in_rev(nt), out_rev(nc), in_fwd(nc);
  for (std::size_t t = 0; t < nt; ++t) {
    if (src[t] >= 0) {
      out_fwd[t].push_back(src[t]);
      out_rev[src[t]].push_back(static_cast<Index>(t));
    }
    if (dst[t] >= 0) {
      in_rev[t].push_back(dst[t]);
      in_fwd[dst[t]].push_back(static_cast<Index>(t));
    }
  }
  relations_[static_cast<std::size_t>(Relation::out_fwd)] = csr_from_lists(out_fwd);
  relations_[static_cast<std::size_t>(Relation::out_rev)] = csr_from_lists(out_rev);
  relations_[static_cast<std::size_t>(Relation::in_fwd)] = csr_from_lists(in_fwd);
  relations_[static_cast<std::size_t>(Relation::in_rev)] = csr_from_lists(in_rev);
}

Index BipartiteGraph::customer_of(Index txn, Direction d) const {
  return d == Direction::outgoing ? txn_source_[txn] : txn_dest_[txn];
}

std::size_t BipartiteGraph::num_edges(Direction d) const {
  const auto& v = d == Direction::outgoing ? txn_source_ : txn_dest_;
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](Index c) { return c >= 0; }));
}

std::vector<EdgeRef> BipartiteGraph::edges(Direction d) const {
  std::vector<EdgeRef> out;
  for (std::size_t t = 0; t < num_transactions(); ++t) {
    const Index c = customer_of(static_cast<Index>(t), d);
    if (c >= 0) out.push_back({d, static_cast<Index>(t), c});
  }
  return out;
}

Index BipartiteGraph::find_customer(const std::string& id) const {
  auto it = customer_index_.find(id);
  return it == customer_index_.end() ? -1 : it->second;
}

Index BipartiteGraph::find_transaction(const std::string& id) const {
  auto it = txn_index_.find(id);
  return it == txn_index_.end() ? -1 : it->second;
}

BipartiteGraph BipartiteGraph::with_transactions(std::span<const RawTransaction> extra) const {
  BipartiteGraph g = *this;
  if (extra.empty()) return g;
  std::vector<double> flat(txn_x_.data().begin(), txn_x_.data().end());
  for (const auto& t : extra) {
    if (!g.txn_index_.emplace(t.txn_id, static_cast<Index>(g.txn_ids_.size())).second)
      throw IngestionError("duplicate txn_id " + t.txn_id);
    auto resolve = [&](const std::string& id) -> Index {
      if (id == kExternal) return -1;
      const Index c = find_customer(id);
      if (c < 0) throw IngestionError("transaction " + t.txn_id + " references unknown customer " + id);
      return c;
    };
    const Index s = resolve(t.source), d = resolve(t.dest);
    if (s < 0 && d < 0) throw IngestionError("transaction " + t.txn_id + " has no known customer");
    g.txn_ids_.push_back(t.txn_id);
    g.txn_source_.push_back(s);
    g.txn_dest_.push_back(d);
    const auto row = txn_scaler_.apply(t.features);
    flat.insert(flat.end(), row.begin(), row.end());
  }
  g.txn_x_ = nd::Tensor::from({g.txn_ids_.size(), txn_dim()}, std::move(flat));
  g.rebuild_relations(g.txn_source_, g.txn_dest_);
  return g;
}

void BipartiteGraph::validate() const {
  const std::size_t nc = num_customers(), nt = num_transactions();
  const auto& of = relation(Relation::out_fwd);
  const auto& orv = relation(Relation::out_rev);
  const auto& inf = relation(Relation::in_fwd);
  const auto& irv = relation(Relation::in_rev);
  if (of.num_nodes() != nt || irv.num_nodes() != nt || orv.num_nodes() != nc || inf.num_nodes() != nc)
    throw IngestionError("relation node counts are inconsistent");
  auto check_pair = [&](const Csr& txn_side, const Csr& cust_side, const char* name) {
    std::size_t forward = 0;
    for (std::size_t t = 0; t < nt; ++t) {
      const auto s = txn_side.of(static_cast<Index>(t));
      if (s.size() > 1) throw IngestionError(std::string(name) + ": transaction with more than one edge");
      for (Index c : s) {
        if (c < 0 || static_cast<std::size_t>(c) >= nc) throw IngestionError(std::string(name) + ": non-customer sender");
        const auto back = cust_side.of(c);
        if (std::find(back.begin(), back.end(), static_cast<Index>(t)) == back.end())
          throw IngestionError(std::string(name) + ": reverse relation is missing an edge");
        ++forward;
      }
    }
    if (forward != cust_side.senders.size()) throw IngestionError(std::string(name) + ": reverse relation has extra edges");
    for (Index t : cust_side.senders)
      if (t < 0 || static_cast<std::size_t>(t) >= nt) throw IngestionError(std::string(name) + ": non-transaction sender");
  };
  check_pair(of, orv, "outgoing");
  check_pair(irv, inf, "incoming");
}

namespace {
constexpr char kGraphMagic[4] = {'T', 'X', 'L', 'G'};

void write_csr(std::ostream& out, const Csr& c) {
  nd::write_u64(out, c.offsets.size());
  out.write(reinterpret_cast<const char*>(c.offsets.data()), static_cast<std::streamsize>(c.offsets.size() * sizeof(Index)));
  nd::write_u64(out, c.senders.size());
  out.write(reinterpret_cast<const char*>(c.senders.data()), static_cast<std::streamsize>(c.senders.size() * sizeof(Index)));
}

Csr read_csr(std::istream& in) {
  Csr c;
  c.offsets.resize(nd::read_u64(in));
  in.read(reinterpret_cast<char*>(c.offsets.data()), static_cast<std::streamsize>(c.offsets.size() * sizeof(Index)));
  c.senders.resize(nd::read_u64(in));
  in.read(reinterpret_cast<char*>(c.senders.data()), static_cast<std::streamsize>(c.senders.size() * sizeof(Index)));
  if (!in) throw IngestionError("truncated graph snapshot");
  return c;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  nd::write_u64(out, v.size());
  for (double x : v) nd::write_f64(out, x);
}

std::vector<double> read_doubles(std::istream& in) {
  std::vector<double> v(nd::read_u64(in));
  for (auto& x : v) x = nd::read_f64(in);
  return v;
}
}  // namespace

void BipartiteGraph::save(std::ostream& out) const {
  out.write(kGraphMagic, 4);
  nd::write_u32(out, kGraphSnapshotVersion);
  nd::write_u64(out, num_customers());
  nd::write_u64(out, num_transactions());
  nd::write_u64(out, customer_dim());
  nd::write_u64(out, txn_dim());
  for (const auto& id : customer_ids_) nd::write_string(out, id);
  for (const auto& id : txn_ids_) nd::write_string(out, id);
  write_doubles(out, customer_scaler_.mean);
  write_doubles(out, customer_scaler_.stddev);
  write_doubles(out, txn_scaler_.mean);
  write_doubles(out, txn_scaler_.stddev);
  nd::write_tensor(out, customer_x_);
  nd::write_tensor(out, txn_x_);
  for (const auto& r : relations_) write_csr(out, r);
}

BipartiteGraph BipartiteGraph::load(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kGraphMagic)) throw IngestionError("not a graph snapshot");
  const auto version = nd::read_u32(in);
  if (version != kGraphSnapshotVersion) throw IngestionError("unsupported graph snapshot version " + std::to_string(version));
  BipartiteGraph g;
  const auto nc = nd::read_u64(in), nt = nd::read_u64(in), dc = nd::read_u64(in), dt = nd::read_u64(in);
  for (std::uint64_t i = 0; i < nc; ++i) g.customer_ids_.push_back(nd::read_string(in));
  for (std::uint64_t i = 0; i < nt; ++i) g.txn_ids_.push_back(nd::read_string(in));
  g.customer_scaler_.mean = read_doubles(in);
  g.customer_scaler_.stddev = read_doubles(in);
  g.txn_scaler_.mean = read_doubles(in);
  g.txn_scaler_.stddev = read_doubles(in);
  g.customer_x_ = nd::read_tensor(in);
  g.txn_x_ = nd::read_tensor(in);
  if (g.customer_x_.shape() != nd::Shape{nc, dc} || g.txn_x_.shape() != nd::Shape{nt, dt} ||
      g.customer_scaler_.mean.size() != dc || g.txn_scaler_.mean.size() != dt)
    throw IngestionError("graph snapshot header does not match its payload");
  for (auto& r : g.relations_) r = read_csr(in);
  g.index_ids();
  g.txn_source_.assign(nt, -1);
  g.txn_dest_.assign(nt, -1);
  const auto& of = g.relation(Relation::out_fwd);
  const auto& irv = g.relation(Relation::in_rev);
  if (of.num_nodes() != nt || irv.num_nodes() != nt) throw IngestionError("graph snapshot adjacency size mismatch");
  for (std::size_t t = 0; t < nt; ++t) {
    for (Index c : of.of(static_cast<Index>(t))) g.txn_source_[t] = c;
    for (Index c : irv.of(static_cast<Index>(t))) g.txn_dest_[t] = c;
  }
  g.validate();
  return g;
}

void BipartiteGraph::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path);
  save(out);
}

BipartiteGraph BipartiteGraph::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path);
  return load(in);
}

void BipartiteGraph::index_ids() {
  customer_index_.clear();
  txn_index_.clear();
  for (std::size_t i = 0; i < customer_ids_.size(); ++i) customer_index_.emplace(customer_ids_[i], static_cast<Index>(i));
  for (std::size_t i = 0; i < txn_ids_.size(); ++i) txn_index_.emplace(txn_ids_[i], static_cast<Index>(i));
}

// ---------------------------------------------------------------------------

std::vector<EdgeRef> EdgeSplit::supervision_in(Direction d) const {
  std::vector<EdgeRef> out;
  std::copy_if(supervision.begin(), supervision.end(), std::back_inserter(out), [d](const EdgeRef& e) { return e.dir == d; });
  return out;
}

std::vector<EdgeRef> EdgeSplit::validation_in(Direction d) const {
  std::vector<EdgeRef> out;
  std::copy_if(validation.begin(), validation.end(), std::back_inserter(out), [d](const EdgeRef& e) { return e.dir == d; });
  return out;
}

EdgeSplit split_edges(const BipartiteGraph& g, const SplitRatios& r, std::uint64_t seed) {
  if (r.message < 0 || r.supervision < 0 || r.validation < 0) throw ConfigError("split ratios must be non-negative");
  if (std::abs(r.message + r.supervision + r.validation - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  EdgeSplit split;
  for (Direction d : {Direction::outgoing, Direction::incoming}) {
    auto edges = g.edges(d);
    std::mt19937_64 rng(seed * 2 + static_cast<std::uint64_t>(d));
    std::shuffle(edges.begin(), edges.end(), rng);
    const auto n = edges.size();
    const auto n_sup = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.supervision));
    const auto n_val = std::min(n - n_sup, static_cast<std::size_t>(std::llround(static_cast<double>(n) * r.validation)));
    auto it = edges.begin();
    split.supervision.insert(split.supervision.end(), it, it + static_cast<std::ptrdiff_t>(n_sup));
    it += static_cast<std::ptrdiff_t>(n_sup);
    split.validation.insert(split.validation.end(), it, it + static_cast<std::ptrdiff_t>(n_val));
    it += static_cast<std::ptrdiff_t>(n_val);
    split.message.insert(split.message.end(), it, edges.end());
  }
  return split;
}

// ---------------------------------------------------------------------------

Index Subgraph::seed_row(NodeType t, Index global) const {
  const auto& v = nodes(0, t);
  auto it = std::find(v.begin(), v.end(), global);
  return it == v.end() ? -1 : static_cast<Index>(it - v.begin());
}

namespace {

struct LayerBuilder {
  std::vector<Index> nodes;
  std::vector<Index> local;  // global -> local, -1 if absent

  explicit LayerBuilder(std::size_t n) : local(n, -1) {}
  Index add(Index global) {
    if (local[global] < 0) {
      local[global] = static_cast<Index>(nodes.size());
      nodes.push_back(global);
    }
    return local[global];
  }
  void reset() {
    for (Index g : nodes) local[g] = -1;
    nodes.clear();
  }
};

bool edge_visible(const BipartiteGraph& g, Relation r, Index receiver, Index sender, const SampleOptions& o) {
  const Index txn = receiver_type(r) == NodeType::transaction ? receiver : sender;
  if (o.severed && o.severed->contains(direction_of(r), txn)) return false;
  if (o.transient_from >= 0 && receiver_type(r) == NodeType::customer && sender >= o.transient_from) return false;
  (void)g;
  return true;
}

void sort_hop(HopEdges& h) {
  std::vector<std::size_t> order(h.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return h.dst[a] != h.dst[b] ? h.dst[a] < h.dst[b] : h.src[a] < h.src[b];
  });
  HopEdges s;
  for (auto i : order) {
    s.src.push_back(h.src[i]);
    s.dst.push_back(h.dst[i]);
    s.txn.push_back(h.txn[i]);
  }
  h = std::move(s);
}

}  // namespace

Subgraph sample_neighborhood(const BipartiteGraph& g, std::span<const Index> seed_customers,
                             std::span<const Index> seed_transactions, const SampleOptions& opts) {
  if (opts.fanout == 0) throw ConfigError("fanout must be >= 1");
  if (opts.layers == 0) throw ConfigError("number of layers must be >= 1");
  std::mt19937_64 rng(opts.seed);
  LayerBuilder cust(g.num_customers()), txn(g.num_transactions());
  Subgraph sub;
  for (Index c : seed_customers) cust.add(c);
  for (Index t : seed_transactions) txn.add(t);
  sub.customers.push_back(cust.nodes);
  sub.transactions.push_back(txn.nodes);

  std::vector<Index> candidates;
  for (std::size_t l = 0; l < opts.layers; ++l) {
    std::array<HopEdges, 4> hop;
    // Layer l+1 keeps layer l as its prefix; the builders already hold it.
    for (Relation r : kRelations) {
      const auto& adj = g.relation(r);
      const bool to_customer = receiver_type(r) == NodeType::customer;
      const auto& receivers = to_customer ? sub.customers[l] : sub.transactions[l];
      LayerBuilder& senders = to_customer ? txn : cust;
      HopEdges& h = hop[static_cast<std::size_t>(r)];
      for (std::size_t i = 0; i < receivers.size(); ++i) {
        const Index v = receivers[i];
        candidates.clear();
        for (Index u : adj.of(v))
          if (edge_visible(g, r, v, u, opts)) candidates.push_back(u);
        std::size_t take = candidates.size();
        if (take > opts.fanout) {
          for (std::size_t k = 0; k < opts.fanout; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, candidates.size() - 1);
            std::swap(candidates[k], candidates[pick(rng)]);
          }
          take = opts.fanout;
        }
        for (std::size_t k = 0; k < take; ++k) {
          const Index u = candidates[k];
          h.src.push_back(senders.add(u));
          h.dst.push_back(static_cast<Index>(i));
          h.txn.push_back(to_customer ? u : v);
        }
      }
    }
    for (auto& h : hop) sort_hop(h);
    sub.hops.push_back(std::move(hop));
    sub.customers.push_back(cust.nodes);
    sub.transactions.push_back(txn.nodes);
  }
  return sub;
}

Subgraph sample_neighborhood(const BipartiteGraph& g, std::span<const EdgeRef> seed_edges, const SampleOptions& opts) {
  std::vector<Index> cs, ts;
  for (const auto& e : seed_edges) {
    cs.push_back(e.customer);
    ts.push_back(e.txn);
  }
  return sample_neighborhood(g, cs, ts, opts);
}

Subgraph full_neighborhood(const BipartiteGraph& g, std::size_t layers, const SeveredEdges* severed) {
  std::vector<Index> cs(g.num_customers()), ts(g.num_transactions());
  for (std::size_t i = 0; i < cs.size(); ++i) cs[i] = static_cast<Index>(i);
  for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = static_cast<Index>(i);
  SampleOptions o;
  o.layers = layers;
  o.fanout = std::max<std::size_t>(1, std::max(g.num_customers(), g.num_transactions()));
  o.severed = severed;
  return sample_neighborhood(g, cs, ts, o);
}

Subgraph sever_edges(const Subgraph& sub, std::span<const EdgeRef> edges, Direction d) {
  std::unordered_set<Index> txns;
  for (const auto& e : edges)
    if (e.dir == d) txns.insert(e.txn);
  Subgraph out = sub;
  for (auto& hop : out.hops)
    for (Relation r : kRelations) {
      if (direction_of(r) != d) continue;
      HopEdges& h = hop[static_cast<std::size_t>(r)];
      HopEdges kept;
      for (std::size_t i = 0; i < h.size(); ++i) {
        if (txns.count(h.txn[i])) continue;
        kept.src.push_back(h.src[i]);
        kept.dst.push_back(h.dst[i]);
        kept.txn.push_back(h.txn[i]);
      }
      h = std::move(kept);
    }
  return out;
}

std::vector<EdgeRef> sample_negatives(const BipartiteGraph& g, std::size_t count, Direction d, std::uint64_t seed) {
  if (count == 0) throw ConfigError("negative sample count must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> pick_c(0, static_cast<Index>(g.num_customers()) - 1);
  std::uniform_int_distribution<Index> pick_t(0, static_cast<Index>(g.num_transactions()) - 1);
  std::vector<EdgeRef> out;
  out.reserve(count);
  const std::size_t budget = 100 * count;
  std::size_t attempts = 0;
  while (out.size() < count) {
    if (attempts++ >= budget) throw SamplingError("could not find enough non-edges after " + std::to_string(budget) + " attempts");
    const Index c = pick_c(rng);
    const Index t = pick_t(rng);
    if (g.customer_of(t, d) == c) continue;
    out.push_back({d, t, c});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <class F>
void for_each_json_line(const std::string& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<RawTransaction> read_transactions(const std::string& path) {
  std::vector<RawTransaction> out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    RawTransaction t;
    t.txn_id = j.at("txn_id").get<std::string>();
    t.source = j.at("source").get<std::string>();
    t.dest = j.at("dest").get<std::string>();
    t.timestamp = j.at("timestamp").get<std::int64_t>();
    t.features = j.at("features").get<std::vector<double>>();
    out.push_back(std::move(t));
  });
  return out;
}

std::vector<CustomerProfile> read_profiles(const std::string& path) {
  std::vector<CustomerProfile> out;
  for_each_json_line(path, [&](const nlohmann::json& j) {
    out.push_back({j.at("customer_id").get<std::string>(), j.at("features").get<std::vector<double>>()});
  });
  return out;
}

void write_transactions(const std::string& path, std::span<const RawTransaction> txns) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path);
  for (const auto& t : txns) {
    nlohmann::json j{{"txn_id", t.txn_id}, {"source", t.source}, {"dest", t.dest}, {"timestamp", t.timestamp},
                     {"features", t.features}};
    out << j.dump() << '\n';
  }
}

void write_profiles(const std::string& path, std::span<const CustomerProfile> profiles) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path);
  for (const auto& p : profiles) {
    nlohmann::json j{{"customer_id", p.customer_id}, {"features", p.features}};
    out << j.dump() << '\n';
  }
}

}  // namespace txnlink::graph
