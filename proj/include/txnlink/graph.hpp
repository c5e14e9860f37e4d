#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "txnlink/tensor.hpp"

namespace txnlink::graph {

using Index = std::int64_t;

inline constexpr const char* kExternal = "EXTERNAL";
inline constexpr std::size_t kDefaultCustomerDim = 66;
inline constexpr std::size_t kDefaultTransactionDim = 12;

struct RawTransaction {
  std::string txn_id;
  std::string source;  // customer id or EXTERNAL
  std::string dest;    // customer id or EXTERNAL
  std::int64_t timestamp = 0;
  std::vector<double> features;
};

struct CustomerProfile {
  std::string customer_id;
  std::vector<double> features;
};

/// Outgoing edges run customer -> transaction, incoming edges transaction -> customer.
enum class Direction : std::uint8_t { outgoing = 0, incoming = 1 };

/// Message-passing relations, each keyed by the node that receives the message.
///   out_fwd: c -> t over outgoing edges   (receiver: transaction)
///   out_rev: t -> c, reverse of out_fwd   (receiver: customer)
///   in_fwd:  t -> c over incoming edges   (receiver: customer)
///   in_rev:  c -> t, reverse of in_fwd    (receiver: transaction)
enum class Relation : std::uint8_t { out_fwd = 0, out_rev = 1, in_fwd = 2, in_rev = 3 };
inline constexpr std::array<Relation, 4> kRelations = {Relation::out_fwd, Relation::out_rev, Relation::in_fwd,
                                                       Relation::in_rev};

enum class NodeType : std::uint8_t { customer = 0, transaction = 1 };

NodeType receiver_type(Relation r);
NodeType sender_type(Relation r);
Direction direction_of(Relation r);
const char* to_string(Relation r);
const char* to_string(Direction d);
Direction parse_direction(const std::string& s);

/// Compressed adjacency: for each receiving node, its message senders.
struct Csr {
  std::vector<Index> offsets{0};
  std::vector<Index> senders;

  std::size_t num_nodes() const { return offsets.size() - 1; }
  std::span<const Index> of(Index node) const {
    return {senders.data() + offsets[node], static_cast<std::size_t>(offsets[node + 1] - offsets[node])};
  }
  std::size_t degree(Index node) const { return static_cast<std::size_t>(offsets[node + 1] - offsets[node]); }
};

/// Per-column standardization fitted on the graph the model is trained on.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> stddev;

  static FeatureScaler fit(std::span<const std::vector<double>> rows, std::size_t dim);
  std::vector<double> apply(std::span<const double> row) const;
};

/// A single edge. Each transaction has at most one edge per direction, so
/// (direction, transaction) identifies it.
struct EdgeRef {
  Direction dir = Direction::outgoing;
  Index txn = 0;
  Index customer = 0;
  bool operator==(const EdgeRef&) const = default;
};

class BipartiteGraph {
 public:
  BipartiteGraph() = default;

  /// Builds the graph and fits feature scalers on these records.
  static BipartiteGraph build(std::span<const RawTransaction> transactions, std::span<const CustomerProfile> profiles);
  /// Builds with existing scalers, e.g. to score against a reference graph.
  static BipartiteGraph build(std::span<const RawTransaction> transactions, std::span<const CustomerProfile> profiles,
                              const FeatureScaler& customer_scaler, const FeatureScaler& txn_scaler);

  std::size_t num_customers() const { return customer_ids_.size(); }
  std::size_t num_transactions() const { return txn_ids_.size(); }
  std::size_t customer_dim() const { return customer_scaler_.mean.size(); }
  std::size_t txn_dim() const { return txn_scaler_.mean.size(); }

  /// Standardized feature matrices.
  const nd::Tensor& customer_features() const { return customer_x_; }
  const nd::Tensor& txn_features() const { return txn_x_; }
  const nd::Tensor& features(NodeType t) const { return t == NodeType::customer ? customer_x_ : txn_x_; }

  const Csr& relation(Relation r) const { return relations_[static_cast<std::size_t>(r)]; }

  /// Customer on the given side of a transaction, or -1 when EXTERNAL.
  Index customer_of(Index txn, Direction d) const;
  std::size_t num_edges(Direction d) const;
  /// All edges of one direction in transaction order.
  std::vector<EdgeRef> edges(Direction d) const;

  const std::vector<std::string>& customer_ids() const { return customer_ids_; }
  const std::vector<std::string>& txn_ids() const { return txn_ids_; }
  Index find_customer(const std::string& id) const;  // -1 if absent
  Index find_transaction(const std::string& id) const;

  const FeatureScaler& customer_scaler() const { return customer_scaler_; }
  const FeatureScaler& txn_scaler() const { return txn_scaler_; }

  /// Copy with extra transaction nodes appended (ids num_transactions()..).
  /// Existing node ids are unchanged; new records are standardized with this
  /// graph's scalers and must reference known customers or EXTERNAL.
  BipartiteGraph with_transactions(std::span<const RawTransaction> extra) const;

  /// Throws if bipartiteness, the per-transaction degree bound or FWD/REV
  /// transpose consistency is violated.
  void validate() const;

  void save(std::ostream& out) const;
  static BipartiteGraph load(std::istream& in);
  void save(const std::string& path) const;
  static BipartiteGraph load(const std::string& path);

 private:
  void index_ids();
  void rebuild_relations(const std::vector<Index>& src, const std::vector<Index>& dst);

  std::vector<std::string> customer_ids_;
  std::vector<std::string> txn_ids_;
  std::unordered_map<std::string, Index> customer_index_;
  std::unordered_map<std::string, Index> txn_index_;
  FeatureScaler customer_scaler_;
  FeatureScaler txn_scaler_;
  nd::Tensor customer_x_;
  nd::Tensor txn_x_;
  std::vector<Index> txn_source_;  // -1 for EXTERNAL
  std::vector<Index> txn_dest_;
  std::array<Csr, 4> relations_;
};

inline constexpr std::uint32_t kGraphSnapshotVersion = 1;

// ---------------------------------------------------------------------------
// Edge split

struct SplitRatios {
  double message = 0.5;
  double supervision = 0.3;
  double validation = 0.2;
};

struct EdgeSplit {
  std::vector<EdgeRef> message;
  std::vector<EdgeRef> supervision;
  std::vector<EdgeRef> validation;

  std::vector<EdgeRef> supervision_in(Direction d) const;
  std::vector<EdgeRef> validation_in(Direction d) const;
};

/// Uniform random partition of each direction's edges, deterministic per seed.
EdgeSplit split_edges(const BipartiteGraph& g, const SplitRatios& ratios, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Severing and sampling

/// Edges hidden from message passing, keyed by (direction, transaction).
class SeveredEdges {
 public:
  void add(Direction d, Index txn) { set(d).insert(txn); }
  void add(const EdgeRef& e) { add(e.dir, e.txn); }
  bool contains(Direction d, Index txn) const {
    const auto& s = d == Direction::outgoing ? outgoing_ : incoming_;
    return s.count(txn) != 0;
  }
  bool empty() const { return outgoing_.empty() && incoming_.empty(); }

 private:
  std::unordered_set<Index>& set(Direction d) { return d == Direction::outgoing ? outgoing_ : incoming_; }
  std::unordered_set<Index> outgoing_;
  std::unordered_set<Index> incoming_;
};

/// Edges from layer l+1 senders into layer l receivers for one relation.
/// Indices are local to the respective layer's node list.
struct HopEdges {
  std::vector<Index> src;
  std::vector<Index> dst;
  std::vector<Index> txn;  // global transaction endpoint of each edge

  std::size_t size() const { return src.size(); }
};

/// Layered sample around a set of seed nodes. Layer l+1 node lists start
/// with the layer l list (so receivers' own rows come first); the remaining
/// entries are sampled senders of layer-l nodes.
struct Subgraph {
  std::vector<std::vector<Index>> customers;     // [layer][local] -> global
  std::vector<std::vector<Index>> transactions;  // [layer][local] -> global
  std::vector<std::array<HopEdges, 4>> hops;     // hops[l] feeds layer l from layer l+1

  std::size_t depth() const { return hops.size(); }
  const std::vector<Index>& nodes(std::size_t layer, NodeType t) const {
    return t == NodeType::customer ? customers[layer] : transactions[layer];
  }
  const HopEdges& edges(std::size_t hop, Relation r) const { return hops[hop][static_cast<std::size_t>(r)]; }
  /// Local row of a global node in layer 0, or -1.
  Index seed_row(NodeType t, Index global) const;
};

struct SampleOptions {
  std::size_t fanout = 32;
  std::size_t layers = 3;
  std::uint64_t seed = 0;
  const SeveredEdges* severed = nullptr;
  /// Transactions with id >= this are reachable only as seeds, never as
  /// sampled senders. -1 disables.
  Index transient_from = -1;
};

/// Breadth-wise expansion: at each hop every node of the current layer gets
/// min(degree, fanout) senders per relation, uniformly without replacement.
Subgraph sample_neighborhood(const BipartiteGraph& g, std::span<const Index> seed_customers,
                             std::span<const Index> seed_transactions, const SampleOptions& opts);

/// Seeds are the endpoints of the given (customer, transaction) pairs.
Subgraph sample_neighborhood(const BipartiteGraph& g, std::span<const EdgeRef> seed_edges, const SampleOptions& opts);

/// Every node and every (non-severed) edge at every layer.
Subgraph full_neighborhood(const BipartiteGraph& g, std::size_t layers, const SeveredEdges* severed = nullptr);

/// Removes the listed edges of one direction (both FWD and REV forms).
Subgraph sever_edges(const Subgraph& sub, std::span<const EdgeRef> edges, Direction d);

/// Uniform (customer, transaction) pairs that are not real edges of the
/// given direction. Each pair is resampled on collision; gives up after
/// 100·count attempts.
std::vector<EdgeRef> sample_negatives(const BipartiteGraph& g, std::size_t count, Direction d, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Line-delimited JSON ingestion

std::vector<RawTransaction> read_transactions(const std::string& path);
std::vector<CustomerProfile> read_profiles(const std::string& path);
void write_transactions(const std::string& path, std::span<const RawTransaction> txns);
void write_profiles(const std::string& path, std::span<const CustomerProfile> profiles);

}  // namespace txnlink::graph
