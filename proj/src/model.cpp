#include "txnlink/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "txnlink/errors.hpp"

namespace txnlink::model {

const char* to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::gat: return "gat";
    case EncoderKind::sage: return "sage";
    case EncoderKind::gin: return "gin";
  }
  return "?";
}

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "gat") return EncoderKind::gat;
  if (s == "sage") return EncoderKind::sage;
  if (s == "gin") return EncoderKind::gin;
  throw ConfigError("unknown encoder kind '" + s + "'");
}

void ModelConfig::validate() const {
  if (layers == 0) throw ConfigError("model needs at least one layer");
  if (hidden == 0) throw ConfigError("hidden size must be positive");
  if (customer_dim == 0 || txn_dim == 0) throw ConfigError("feature dimensions must be positive");
  if (kind == EncoderKind::gat && (heads == 0 || hidden % heads != 0))
    throw ConfigError("hidden size " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) + " heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
}

nd::Tensor& ParamStore::add(const std::string& name, nd::Shape shape, std::vector<double> values) {
  if (index_.count(name)) throw UsageError("duplicate parameter " + name);
  index_.emplace(name, items_.size());
  items_.emplace_back(name, nd::Tensor::parameter(std::move(shape), std::move(values)));
  return items_.back().second;
}

const nd::Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ModelError("missing parameter " + name);
  return items_[it->second].second;
}

nd::Tensor& ParamStore::get(const std::string& name) {
  return const_cast<nd::Tensor&>(static_cast<const ParamStore&>(*this).get(name));
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

void ParamStore::set_trainable(const std::string& prefix, bool on) {
  for (auto& [name, t] : items_)
    if (name.rfind(prefix, 0) == 0) t.set_requires_grad(on);
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  out.items_.reserve(items_.size());
  for (const auto& [name, t] : items_) out.items_.emplace_back(name, t.clone());
  out.index_ = index_;
  return out;
}

std::vector<double> glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t count, std::uint64_t seed) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> v(count);
  for (auto& x : v) x = u(rng);
  return v;
}

namespace {

const char* type_name(NodeType t) { return t == NodeType::customer ? "customer" : "transaction"; }

std::string pname(std::size_t layer, const std::string& rest) { return "enc." + std::to_string(layer) + "." + rest; }

std::vector<Index> iota_index(std::size_t n, Index offset = 0) {
  std::vector<Index> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<Index>(i) + offset;
  return v;
}

void check_inputs(const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop, const Embeddings& in) {
  if (hop >= sub.depth()) throw ModelError("subgraph has no hop " + std::to_string(hop));
  for (NodeType t : {NodeType::customer, NodeType::transaction}) {
    const auto& x = in.of(t);
    if (x.rows() != sub.nodes(hop + 1, t).size())
      throw ModelError(std::string("layer input rows do not match subgraph layer for ") + type_name(t));
    if (x.cols() != m.in_dim(layer, t))
      throw ModelError(std::string("layer input width ") + std::to_string(x.cols()) + " for " + type_name(t) +
                       ", expected " + std::to_string(m.in_dim(layer, t)));
  }
}

nd::Tensor accumulate(nd::Tape& tape, const nd::Tensor& acc, const nd::Tensor& term) {
  return acc.defined() ? nd::add(tape, acc, term) : term;
}

}  // namespace

std::size_t Model::in_dim(std::size_t layer, NodeType t) const {
  if (layer > 0) return config.hidden;
  return t == NodeType::customer ? config.customer_dim : config.txn_dim;
}

Model Model::clone() const {
  Model m;
  m.config = config;
  m.params = params.clone();
  m.norms = norms;
  m.tag = tag;
  return m;
}

Model make_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  std::uint64_t counter = 0;
  auto next_seed = [&] { return seed * 1000003ULL + (++counter); };
  auto matrix = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    m.params.add(name, {rows, cols}, glorot_uniform(rows, cols, rows * cols, next_seed()));
  };
  const std::size_t h = config.hidden;
  for (std::size_t l = 0; l < config.layers; ++l) {
    for (NodeType t : {NodeType::customer, NodeType::transaction})
      matrix(pname(l, std::string("self.") + type_name(t) + ".w"), m.in_dim(l, t), h);
    for (Relation r : graph::kRelations) {
      const std::string base = pname(l, graph::to_string(r));
      matrix(base + ".w", m.in_dim(l, graph::sender_type(r)), h);
      if (config.kind == EncoderKind::gat) {
        const std::size_t d = config.head_dim();
        m.params.add(base + ".att_dst", {1, h}, glorot_uniform(2 * d, 1, h, next_seed()));
        m.params.add(base + ".att_src", {1, h}, glorot_uniform(2 * d, 1, h, next_seed()));
      } else if (config.kind == EncoderKind::gin) {
        matrix(base + ".mlp1.w", h, h);
        m.params.add(base + ".mlp1.b", {1, h}, std::vector<double>(h, 0.0));
        matrix(base + ".mlp2.w", h, h);
        m.params.add(base + ".mlp2.b", {1, h}, std::vector<double>(h, 0.0));
      }
    }
    if (config.batch_norm && l + 1 < config.layers) {
      for (NodeType t : {NodeType::customer, NodeType::transaction}) {
        m.params.add(pname(l, std::string("bn.") + type_name(t) + ".gamma"), {1, h}, std::vector<double>(h, 1.0));
        m.params.add(pname(l, std::string("bn.") + type_name(t) + ".beta"), {1, h}, std::vector<double>(h, 0.0));
      }
    }
  }
  m.norms.assign(config.layers * 2, nd::BatchNormState(h));
  m.params.add("dec.w", {1, h}, glorot_uniform(h, 1, h, next_seed()));
  return m;
}

namespace {

struct GatTerms {
  Attention att;
  nd::Tensor values;         // [v_self ; v_src]
  std::vector<Index> source;  // row of `values` feeding each attention row
};

nd::Tensor self_projection(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub,
                           std::size_t hop, const Embeddings& in, NodeType recv) {
  const auto self_x = nd::slice_rows(tape, in.of(recv), sub.nodes(hop, recv).size());
  return nd::matmul(tape, self_x, m.params.get(pname(layer, std::string("self.") + type_name(recv) + ".w")));
}

// alpha_ij = softmax_j( LeakyReLU(a_dst · W_self z_i + a_src · W_r z_j) ) per head, where the
// self term j = i uses W_self on both sides and shares the receiver's segment.
GatTerms gat_terms(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                   const Embeddings& in, Relation r, const nd::Tensor& v_self) {
  const std::size_t heads = m.config.heads;
  const std::size_t n = v_self.rows();
  const std::string base = pname(layer, graph::to_string(r));
  const auto& edges = sub.edges(hop, r);
  const auto v_src = nd::matmul(tape, in.of(graph::sender_type(r)), m.params.get(base + ".w"));
  const auto& a_dst = m.params.get(base + ".att_dst");
  const auto& a_src = m.params.get(base + ".att_src");

  const auto e_dst = nd::head_dot(tape, v_self, a_dst, heads);
  const auto e_self = nd::add(tape, e_dst, nd::head_dot(tape, v_self, a_src, heads));
  const auto e_nb = nd::add(tape, nd::gather_rows(tape, e_dst, edges.dst),
                            nd::gather_rows(tape, nd::head_dot(tape, v_src, a_src, heads), edges.src));
  const auto logits = nd::leaky_relu(tape, nd::concat(tape, {e_self, e_nb}, 0), 0.2);

  GatTerms g;
  g.att.segment = iota_index(n);
  g.att.segment.insert(g.att.segment.end(), edges.dst.begin(), edges.dst.end());
  g.att.alpha = nd::segment_softmax(tape, logits, g.att.segment, n);
  g.values = nd::concat(tape, {v_self, v_src}, 0);
  g.source = iota_index(n);
  for (Index s : edges.src) g.source.push_back(s + static_cast<Index>(n));
  return g;
}

}  // namespace

Attention gat_attention(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                        const Embeddings& in, Relation r) {
  check_inputs(m, layer, sub, hop, in);
  if (m.config.kind != EncoderKind::gat) throw ModelError("attention requested from a non-GAT model");
  const auto v_self = self_projection(tape, m, layer, sub, hop, in, graph::receiver_type(r));
  return gat_terms(tape, m, layer, sub, hop, in, r, v_self).att;
}

Embeddings gat_layer(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                     const Embeddings& in) {
  check_inputs(m, layer, sub, hop, in);
  Embeddings out;
  for (NodeType recv : {NodeType::customer, NodeType::transaction}) {
    const std::size_t n = sub.nodes(hop, recv).size();
    const auto v_self = self_projection(tape, m, layer, sub, hop, in, recv);
    nd::Tensor acc;
    for (Relation r : graph::kRelations) {
      if (graph::receiver_type(r) != recv) continue;
      const auto g = gat_terms(tape, m, layer, sub, hop, in, r, v_self);
      acc = accumulate(tape, acc, nd::edge_weighted_sum(tape, g.att.alpha, g.values, g.source, g.att.segment, n));
    }
    (recv == NodeType::customer ? out.customers : out.transactions) = acc;
  }
  return out;
}

Embeddings sage_layer(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                      const Embeddings& in) {
  check_inputs(m, layer, sub, hop, in);
  Embeddings out;
  for (NodeType recv : {NodeType::customer, NodeType::transaction}) {
    const std::size_t n = sub.nodes(hop, recv).size();
    nd::Tensor acc = self_projection(tape, m, layer, sub, hop, in, recv);
    for (Relation r : graph::kRelations) {
      if (graph::receiver_type(r) != recv) continue;
      const auto& edges = sub.edges(hop, r);
      std::vector<double> inv_deg(n, 0.0);
      for (Index d : edges.dst) inv_deg[d] += 1.0;
      for (auto& v : inv_deg) v = v > 0.0 ? 1.0 / v : 0.0;
      const auto summed =
          nd::scatter_add_rows(tape, nd::gather_rows(tape, in.of(graph::sender_type(r)), edges.src), edges.dst, n);
      const auto mean = nd::scale_rows(tape, summed, nd::Tensor::from({n}, std::move(inv_deg)));
      acc = nd::add(tape, acc, nd::matmul(tape, mean, m.params.get(pname(layer, graph::to_string(r)) + ".w")));
    }
    (recv == NodeType::customer ? out.customers : out.transactions) = acc;
  }
  return out;
}

Embeddings gin_layer(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                     const Embeddings& in) {
  check_inputs(m, layer, sub, hop, in);
  Embeddings out;
  for (NodeType recv : {NodeType::customer, NodeType::transaction}) {
    const std::size_t n = sub.nodes(hop, recv).size();
    const auto self_proj = self_projection(tape, m, layer, sub, hop, in, recv);
    nd::Tensor acc;
    for (Relation r : graph::kRelations) {
      if (graph::receiver_type(r) != recv) continue;
      const std::string base = pname(layer, graph::to_string(r));
      const auto& edges = sub.edges(hop, r);
      const auto proj = nd::matmul(tape, in.of(graph::sender_type(r)), m.params.get(base + ".w"));
      // GIN-0: (1 + 0)·self + Σ neighbours
      const auto pre = nd::add(tape, self_proj, nd::scatter_add_rows(tape, nd::gather_rows(tape, proj, edges.src), edges.dst, n));
      const auto h1 = nd::relu(tape, nd::add_row(tape, nd::matmul(tape, pre, m.params.get(base + ".mlp1.w")),
                                                 m.params.get(base + ".mlp1.b")));
      const auto h2 = nd::add_row(tape, nd::matmul(tape, h1, m.params.get(base + ".mlp2.w")), m.params.get(base + ".mlp2.b"));
      acc = accumulate(tape, acc, h2);
    }
    (recv == NodeType::customer ? out.customers : out.transactions) = acc;
  }
  return out;
}

Embeddings apply_layer(nd::Tape& tape, Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                       const Embeddings& in, nd::Mode mode, std::uint64_t seed) {
  Embeddings out;
  switch (m.config.kind) {
    case EncoderKind::gat: out = gat_layer(tape, m, layer, sub, hop, in); break;
    case EncoderKind::sage: out = sage_layer(tape, m, layer, sub, hop, in); break;
    case EncoderKind::gin: out = gin_layer(tape, m, layer, sub, hop, in); break;
  }
  if (layer + 1 == m.config.layers) return out;
  for (NodeType t : {NodeType::customer, NodeType::transaction}) {
    nd::Tensor& x = t == NodeType::customer ? out.customers : out.transactions;
    x = nd::relu(tape, x);
    if (m.config.batch_norm && x.rows() > 0) {
      const std::string base = pname(layer, std::string("bn.") + type_name(t));
      x = nd::batch_norm(tape, x, m.params.get(base + ".gamma"), m.params.get(base + ".beta"), m.norm(layer, t), mode);
    }
    if (m.config.dropout > 0.0)
      x = nd::dropout(tape, x, m.config.dropout, seed * 131 + layer * 2 + static_cast<std::uint64_t>(t), mode);
  }
  return out;
}

Embeddings input_features(const graph::Subgraph& sub, const nd::Tensor& customer_x, const nd::Tensor& txn_x) {
  nd::Tape untracked(false);
  const std::size_t deepest = sub.depth();
  return {nd::gather_rows(untracked, customer_x, sub.customers[deepest]),
          nd::gather_rows(untracked, txn_x, sub.transactions[deepest])};
}

std::vector<Embeddings> encode_layers(nd::Tape& tape, Model& m, const graph::Subgraph& sub, const nd::Tensor& customer_x,
                                      const nd::Tensor& txn_x, nd::Mode mode, std::uint64_t seed) {
  const std::size_t L = m.config.layers;
  if (sub.depth() < L)
    throw ModelError("subgraph depth " + std::to_string(sub.depth()) + " is shallower than " + std::to_string(L) + " layers");
  // A deeper subgraph is used from depth L upward.
  graph::Subgraph view;
  const graph::Subgraph* s = &sub;
  if (sub.depth() > L) {
    view.customers.assign(sub.customers.begin(), sub.customers.begin() + static_cast<std::ptrdiff_t>(L + 1));
    view.transactions.assign(sub.transactions.begin(), sub.transactions.begin() + static_cast<std::ptrdiff_t>(L + 1));
    view.hops.assign(sub.hops.begin(), sub.hops.begin() + static_cast<std::ptrdiff_t>(L));
    s = &view;
  }
  std::vector<Embeddings> outputs;
  Embeddings h = input_features(*s, customer_x, txn_x);
  for (std::size_t l = 0; l < L; ++l) {
    h = apply_layer(tape, m, l, *s, L - 1 - l, h, mode, seed);
    outputs.push_back(h);
  }
  return outputs;
}

Embeddings encode(nd::Tape& tape, Model& m, const graph::Subgraph& sub, const nd::Tensor& customer_x,
                  const nd::Tensor& txn_x, nd::Mode mode, std::uint64_t seed) {
  return encode_layers(tape, m, sub, customer_x, txn_x, mode, seed).back();
}

nd::Tensor decode(nd::Tape& tape, const nd::Tensor& w_dec, const nd::Tensor& zc, const nd::Tensor& zt) {
  if (zc.shape() != zt.shape()) throw ModelError("decoder inputs differ in shape");
  if (zc.cols() != w_dec.size()) throw ModelError("decoder weight width does not match embeddings");
  return nd::sigmoid(tape, nd::head_dot(tape, nd::hadamard(tape, zc, zt), w_dec, 1));
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kModelMagic[4] = {'T', 'X', 'L', 'M'};
}

void write_checkpoint(std::ostream& out, const CheckpointHeader& h, const ParamStore& params,
                      const std::vector<nd::BatchNormState>& norms) {
  out.write(kModelMagic, 4);
  nd::write_u32(out, kCheckpointVersion);
  nd::write_string(out, h.kind);
  nd::write_string(out, h.tag);
  nd::write_u64(out, h.layers);
  nd::write_u64(out, h.customer_dim);
  nd::write_u64(out, h.txn_dim);
  nd::write_u64(out, h.hidden);
  nd::write_u64(out, h.heads);
  nd::write_u32(out, h.batch_norm ? 1 : 0);
  nd::write_f64(out, h.dropout);
  nd::write_u64(out, params.size());
  for (const auto& [name, t] : params.items()) {
    nd::write_string(out, name);
    nd::write_tensor(out, t);
  }
  nd::write_u64(out, norms.size());
  for (const auto& s : norms) {
    nd::write_u64(out, s.running_mean.size());
    for (double v : s.running_mean) nd::write_f64(out, v);
    for (double v : s.running_var) nd::write_f64(out, v);
  }
}

void read_checkpoint(std::istream& in, CheckpointHeader& h, ParamStore& params, std::vector<nd::BatchNormState>& norms) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kModelMagic)) throw IngestionError("not a model checkpoint");
  const auto version = nd::read_u32(in);
  if (version != kCheckpointVersion) throw IngestionError("unsupported checkpoint version " + std::to_string(version));
  h.kind = nd::read_string(in);
  h.tag = nd::read_string(in);
  h.layers = nd::read_u64(in);
  h.customer_dim = nd::read_u64(in);
  h.txn_dim = nd::read_u64(in);
  h.hidden = nd::read_u64(in);
  h.heads = nd::read_u64(in);
  h.batch_norm = nd::read_u32(in) != 0;
  h.dropout = nd::read_f64(in);
  const auto n = nd::read_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto name = nd::read_string(in);
    auto t = nd::read_tensor(in);
    auto shape = t.shape();
    params.add(name, shape, std::vector<double>(t.data().begin(), t.data().end()));
  }
  norms.clear();
  const auto nn = nd::read_u64(in);
  for (std::uint64_t i = 0; i < nn; ++i) {
    nd::BatchNormState s(nd::read_u64(in));
    for (auto& v : s.running_mean) v = nd::read_f64(in);
    for (auto& v : s.running_var) v = nd::read_f64(in);
    norms.push_back(std::move(s));
  }
}

CheckpointHeader peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path);
  CheckpointHeader h;
  ParamStore p;
  std::vector<nd::BatchNormState> n;
  read_checkpoint(in, h, p, n);
  return h;
}

void save_model(const Model& m, std::ostream& out) {
  CheckpointHeader h;
  h.kind = to_string(m.config.kind);
  h.tag = m.tag;
  h.layers = m.config.layers;
  h.customer_dim = m.config.customer_dim;
  h.txn_dim = m.config.txn_dim;
  h.hidden = m.config.hidden;
  h.heads = m.config.heads;
  h.batch_norm = m.config.batch_norm;
  h.dropout = m.config.dropout;
  write_checkpoint(out, h, m.params, m.norms);
}

Model load_model(std::istream& in) {
  CheckpointHeader h;
  Model m;
  read_checkpoint(in, h, m.params, m.norms);
  if (h.kind == "mlp") throw ModelError("checkpoint holds an MLP baseline, not a graph model");
  m.config.kind = parse_encoder_kind(h.kind);
  m.tag = h.tag;
  m.config.layers = h.layers;
  m.config.customer_dim = h.customer_dim;
  m.config.txn_dim = h.txn_dim;
  m.config.hidden = h.hidden;
  m.config.heads = h.heads;
  m.config.batch_norm = h.batch_norm;
  m.config.dropout = h.dropout;
  m.config.validate();
  // Structural check against a freshly initialized model of the same config.
  const Model ref = make_model(m.config, 0);
  if (ref.params.size() != m.params.size() || ref.norms.size() != m.norms.size())
    throw ModelError("checkpoint parameters do not match its header");
  for (std::size_t i = 0; i < ref.params.size(); ++i) {
    const auto& [rn, rt] = ref.params.items()[i];
    const auto& [n, t] = m.params.items()[i];
    if (rn != n || rt.shape() != t.shape()) throw ModelError("checkpoint parameter " + n + " does not match its header");
  }
  return m;
}

void save_model(const Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path);
  save_model(m, out);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path);
  return load_model(in);
}

}  // namespace txnlink::model
