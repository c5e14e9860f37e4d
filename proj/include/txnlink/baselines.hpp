#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "txnlink/graph.hpp"
#include "txnlink/model.hpp"
#include "txnlink/training.hpp"

namespace txnlink::baselines {

using graph::Index;

// ---------------------------------------------------------------------------
// Raw-feature MLP over (source customer, destination customer, transaction)

struct MlpConfig {
  std::vector<std::size_t> widths{128, 64, 32, 16, 1};
  double dropout = 0.1;
  bool batch_norm = true;
  double learning_rate = 0.01;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 50;
  std::size_t patience = 6;
  double validation_fraction = 0.2;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Mlp {
  std::size_t customer_dim = 0;
  std::size_t txn_dim = 0;
  std::vector<std::size_t> widths;
  double dropout = 0.0;
  bool batch_norm = true;
  model::ParamStore params;  // mlp.<i>.w, mlp.<i>.b, mlp.<i>.bn.gamma/beta
  std::vector<nd::BatchNormState> norms;

  std::size_t in_dim() const { return 2 * customer_dim + txn_dim; }
  Mlp clone() const;
};

Mlp make_mlp(std::size_t customer_dim, std::size_t txn_dim, const MlpConfig& cfg, std::uint64_t seed);

/// x is [B × (2·d_c + d_t)], columns src | dst | txn. Returns [B×1].
nd::Tensor mlp_forward(nd::Tape& tape, Mlp& m, const nd::Tensor& x, nd::Mode mode, std::uint64_t seed);

/// Single prediction; an empty span stands for an EXTERNAL side.
double mlp_predict(Mlp& m, std::span<const double> f_src, std::span<const double> f_dst, std::span<const double> f_txn);

/// Indices into customer and transaction feature matrices; -1 is EXTERNAL.
struct Triple {
  Index src = -1;
  Index dst = -1;
  Index txn = 0;
};

/// Rows src | dst | txn with EXTERNAL sides as zero vectors.
nd::Tensor mlp_inputs(const nd::Tensor& customer_x, const nd::Tensor& txn_x, std::span<const Triple> triples);

struct MlpDataset {
  std::vector<Triple> examples;
  std::vector<double> labels;
};

/// Every transaction as a positive plus as many random (source, destination,
/// transaction) triples as negatives. Random sides are EXTERNAL with the
/// rate observed among the positives of that side.
MlpDataset mlp_dataset(const graph::BipartiteGraph& g, std::uint64_t seed);

struct MlpFitResult {
  Mlp model;
  std::vector<training::EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
};

MlpFitResult mlp_fit(const graph::BipartiteGraph& g, const MlpConfig& cfg,
                     const std::function<void(const training::EpochMetrics&)>& on_epoch = {});
/// Trains on an explicit dataset against the given feature matrices.
MlpFitResult mlp_fit(const nd::Tensor& customer_x, const nd::Tensor& txn_x, const MlpDataset& data,
                     const MlpConfig& cfg, const std::function<void(const training::EpochMetrics&)>& on_epoch = {});

/// Batched inference (infer mode).
std::vector<double> mlp_predict_batch(Mlp& m, const nd::Tensor& customer_x, const nd::Tensor& txn_x,
                                      std::span<const Triple> triples);

/// Scores (new transaction, direction, reference customer) queries the way
/// the graph scorer does: the query customer takes the queried side and the
/// other side keeps the transaction's real counterpart.
std::vector<double> mlp_score_pairs(Mlp& m, const graph::BipartiteGraph& reference,
                                    std::span<const graph::RawTransaction> txns,
                                    std::span<const training::PairQuery> queries);

void save_mlp(const Mlp& m, const std::string& path);
void save_mlp(const Mlp& m, std::ostream& out);
Mlp load_mlp(const std::string& path);
Mlp load_mlp(std::istream& in);

// ---------------------------------------------------------------------------
// Deep Graph Infomax pretraining, one objective per node type

struct DgiConfig {
  training::TrainingConfig encoder = training::TrainingConfig::defaults_for(model::EncoderKind::gat);
  std::size_t seeds_per_type = 256;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  double learning_rate = 0.001;
};

struct Dgi {
  model::Model encoder;     // tagged "dgi"
  model::ParamStore disc;   // dgi.customer.w, dgi.transaction.w  [h×h]
  std::vector<double> history;  // mean loss per epoch
};

/// Feature matrix with rows permuted by `perm` (row i takes row perm[i]).
nd::Tensor shuffle_rows(const nd::Tensor& x, std::span<const Index> perm);

/// σ(z_i · (s W)) for every row of z, s = σ(mean of z_summary rows).
nd::Tensor dgi_discriminate(nd::Tape& tape, const nd::Tensor& w, const nd::Tensor& z, const nd::Tensor& summary);

/// BCE of clean rows against 1 and corrupted rows against 0 (each a mean).
nd::Tensor dgi_loss(nd::Tape& tape, const nd::Tensor& w, const nd::Tensor& clean, const nd::Tensor& corrupted);

/// One objective instance for a subgraph: clean encode, then one encode per
/// node type with that type's feature rows shuffled. Returns the summed loss.
nd::Tensor dgi_objective(nd::Tape& tape, Dgi& d, const graph::BipartiteGraph& g, const graph::Subgraph& sub,
                         std::uint64_t seed, nd::Mode mode);

/// Self-supervised encoder pretraining. Edges in `hidden` stay invisible.
Dgi dgi_pretrain(const graph::BipartiteGraph& g, const DgiConfig& cfg, const graph::SeveredEdges& hidden = {},
                 const std::function<void(std::size_t, double)>& on_epoch = {});

/// Decoder training on the supervision edges with the encoder frozen.
training::FitResult dgi_downstream(const Dgi& d, const graph::BipartiteGraph& g, const graph::EdgeSplit& split,
                                   const training::TrainingConfig& cfg, const training::FitOptions& opts = {});

}  // namespace txnlink::baselines
