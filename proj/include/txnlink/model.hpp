#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "txnlink/graph.hpp"
#include "txnlink/ops.hpp"

namespace txnlink::model {

using graph::Index;
using graph::NodeType;
using graph::Relation;

enum class EncoderKind { gat, sage, gin };

const char* to_string(EncoderKind k);
EncoderKind parse_encoder_kind(const std::string& s);

struct ModelConfig {
  EncoderKind kind = EncoderKind::gat;
  std::size_t layers = 3;
  std::size_t hidden = 32;  // width of every layer output (all heads together for GAT)
  std::size_t heads = 4;    // GAT only; hidden must be divisible by heads
  bool batch_norm = true;
  double dropout = 0.0;
  std::size_t customer_dim = graph::kDefaultCustomerDim;
  std::size_t txn_dim = graph::kDefaultTransactionDim;

  std::size_t head_dim() const { return hidden / heads; }
  void validate() const;
};

/// Ordered, named parameter tensors. Order is declaration order and is the
/// order used by checkpoints and the optimizer.
class ParamStore {
 public:
  nd::Tensor& add(const std::string& name, nd::Shape shape, std::vector<double> values);
  const nd::Tensor& get(const std::string& name) const;
  nd::Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return items_.size(); }
  std::vector<std::pair<std::string, nd::Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, nd::Tensor>>& items() const { return items_; }

  void zero_grad();
  /// Applies to every parameter whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool on);
  ParamStore clone() const;

 private:
  std::vector<std::pair<std::string, nd::Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform init in ±sqrt(6/(fan_in+fan_out)).
std::vector<double> glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t count, std::uint64_t seed);

/// Encoder + decoder. Parameter names:
///   enc.<l>.self.<type>.w, enc.<l>.<rel>.w, enc.<l>.<rel>.att_dst / att_src (GAT),
///   enc.<l>.<rel>.mlp1.w/b, mlp2.w/b (GIN), enc.<l>.bn.<type>.gamma/beta,
///   dec.w
struct Model {
  ModelConfig config;
  ParamStore params;
  std::vector<nd::BatchNormState> norms;  // [hidden layer * 2 + node type]
  std::string tag = "link";               // "link" for joint training, "dgi" for the two-stage baseline

  std::size_t out_dim() const { return config.hidden; }
  std::size_t in_dim(std::size_t layer, NodeType t) const;
  nd::BatchNormState& norm(std::size_t layer, NodeType t) { return norms[layer * 2 + static_cast<std::size_t>(t)]; }
  Model clone() const;
};

Model make_model(const ModelConfig& config, std::uint64_t seed);

/// Per-type node embeddings; rows follow a Subgraph layer's node order.
struct Embeddings {
  nd::Tensor customers;
  nd::Tensor transactions;
  const nd::Tensor& of(NodeType t) const { return t == NodeType::customer ? customers : transactions; }
};

/// Attention of one relation at one layer, rows ordered as
/// [self terms of the n receivers ; hop edges]. Shape [(n+E) × K].
struct Attention {
  nd::Tensor alpha;
  std::vector<Index> segment;  // receiver of each row
};

/// GAT attention coefficients for `relation` at encoder layer `layer`, fed by
/// hop `hop` of the subgraph. `in` holds layer inputs at depth hop+1.
Attention gat_attention(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                        const Embeddings& in, Relation relation);

/// Pre-activation outputs of one convolution for the receivers at depth
/// `hop`, from inputs at depth hop+1. Contributions of the relations that
/// share a receiver type are summed.
Embeddings gat_layer(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                     const Embeddings& in);
Embeddings sage_layer(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                      const Embeddings& in);
Embeddings gin_layer(nd::Tape& tape, const Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                     const Embeddings& in);

/// Full layer: convolution, then ReLU, batch norm and dropout on hidden layers.
Embeddings apply_layer(nd::Tape& tape, Model& m, std::size_t layer, const graph::Subgraph& sub, std::size_t hop,
                       const Embeddings& in, nd::Mode mode, std::uint64_t seed);

/// Layer-1 inputs are raw features of the deepest subgraph layer.
Embeddings input_features(const graph::Subgraph& sub, const nd::Tensor& customer_x, const nd::Tensor& txn_x);

/// Outputs of every layer; element l-1 is layer l, with rows for the nodes at
/// subgraph depth L-l. The last element holds the embeddings of the seeds.
std::vector<Embeddings> encode_layers(nd::Tape& tape, Model& m, const graph::Subgraph& sub,
                                      const nd::Tensor& customer_x, const nd::Tensor& txn_x, nd::Mode mode,
                                      std::uint64_t seed);

Embeddings encode(nd::Tape& tape, Model& m, const graph::Subgraph& sub, const nd::Tensor& customer_x,
                  const nd::Tensor& txn_x, nd::Mode mode, std::uint64_t seed);

/// sigmoid(w · (zc ⊙ zt)) per row -> [B×1]
nd::Tensor decode(nd::Tape& tape, const nd::Tensor& w_dec, const nd::Tensor& zc, const nd::Tensor& zt);

inline double anomaly_score(double likelihood) { return 1.0 - likelihood; }

// Checkpoints --------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string kind;  // gat | sage | gin | mlp
  std::string tag;   // link | dgi | mlp
  std::uint64_t layers = 0;
  std::uint64_t customer_dim = 0;
  std::uint64_t txn_dim = 0;
  std::uint64_t hidden = 0;
  std::uint64_t heads = 0;
  bool batch_norm = false;
  double dropout = 0.0;
};

void write_checkpoint(std::ostream& out, const CheckpointHeader& h, const ParamStore& params,
                      const std::vector<nd::BatchNormState>& norms);
void read_checkpoint(std::istream& in, CheckpointHeader& h, ParamStore& params, std::vector<nd::BatchNormState>& norms);
CheckpointHeader peek_checkpoint(const std::string& path);

void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);
void save_model(const Model& m, std::ostream& out);
Model load_model(std::istream& in);

}  // namespace txnlink::model
