#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "txnlink/graph.hpp"
#include "txnlink/model.hpp"

namespace txnlink::training {

using graph::Direction;
using graph::EdgeRef;
using graph::Index;

struct TrainingConfig {
  model::EncoderKind kind = model::EncoderKind::gat;
  std::size_t layers = 3;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  bool batch_norm = true;
  double dropout = 0.0;
  double learning_rate = 0.001;
  std::size_t batch_size = 32;
  std::size_t negatives = 1;  // M
  std::size_t fanout = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 6;
  std::uint64_t seed = 7;
  graph::SplitRatios split;

  /// Defaults per encoder kind (SAGE uses 256-wide layers).
  static TrainingConfig defaults_for(model::EncoderKind kind);
  model::ModelConfig model_config(std::size_t customer_dim, std::size_t txn_dim) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
/// Missing keys keep their defaults for the configured encoder kind.
TrainingConfig training_config_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------

/// mean over the batch of [ -log p_pos - Σ_m log(1 - p_neg) ].
/// pos is [B] or [B×1]; neg holds B·M values, negatives of positive b at
/// rows b·M .. b·M+M-1.
nd::Tensor link_loss(nd::Tape& tape, const nd::Tensor& pos, const nd::Tensor& neg, std::size_t negatives_per_positive);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam over every parameter that requires a gradient.
void adam_step(AdamState& state, model::ParamStore& params, double lr);

// ---------------------------------------------------------------------------

/// Edges plus the hidden-edge set that defines the message-passing view.
struct LinkBatch {
  std::vector<EdgeRef> positives;  // all one direction
  std::vector<EdgeRef> negatives;  // B·M pairs, same direction
};

/// Forward pass for a batch of labelled pairs: severs the real edges of the
/// batch's direction for every transaction in the batch, samples the
/// neighbourhood, encodes and decodes. Returns [pos preds ; neg preds].
nd::Tensor forward_pairs(nd::Tape& tape, model::Model& m, const graph::BipartiteGraph& g,
                         std::span<const EdgeRef> pairs, const graph::SeveredEdges& hidden, std::size_t fanout,
                         std::uint64_t seed, nd::Mode mode);

/// Prediction for a single pair under the same severing rule, in infer mode.
double predict_link(model::Model& m, const graph::BipartiteGraph& g, const EdgeRef& pair,
                    const graph::SeveredEdges& hidden, std::size_t fanout, std::uint64_t seed);

struct StepResult {
  double loss = 0.0;
  std::size_t batch = 0;
};

/// One optimisation step over an explicit batch.
StepResult train_step(model::Model& m, AdamState& adam, const graph::BipartiteGraph& g, const LinkBatch& batch,
                      const graph::SeveredEdges& hidden, const TrainingConfig& cfg, std::uint64_t step_seed);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct FitResult {
  model::Model model;  // best-validation checkpoint
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_validation_loss = 0.0;
};

struct FitOptions {
  /// Keep encoder parameters and batch-norm statistics fixed; only the
  /// decoder is trained.
  bool freeze_encoder = false;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Training view hides validation edges; validation view shows all edges.
/// Epochs alternate direction batch by batch over the supervision edges.
FitResult fit(const graph::BipartiteGraph& g, const graph::EdgeSplit& split, const TrainingConfig& cfg,
              const FitOptions& opts = {});
/// Continues from an existing model (used for frozen-encoder training).
FitResult fit(model::Model initial, const graph::BipartiteGraph& g, const graph::EdgeSplit& split,
              const TrainingConfig& cfg, const FitOptions& opts = {});

/// Size-weighted mean link loss over the validation edges, with negatives
/// drawn from a fixed seed derived from cfg.seed.
double validation_loss(model::Model& m, const graph::BipartiteGraph& g, const graph::EdgeSplit& split,
                       const TrainingConfig& cfg);

// ---------------------------------------------------------------------------
// Production scoring

struct AnomalyResult {
  std::string txn_id;
  Direction dir = Direction::outgoing;
  std::string customer_id;
  bool cold_start = false;
  std::optional<double> likelihood;  // ŷ, absent on cold start
  std::optional<double> anomaly_score;
};

void to_json(nlohmann::json& j, const AnomalyResult& r);

/// A (new transaction, direction, reference customer) pair to score.
struct PairQuery {
  std::size_t txn = 0;  // index into the new-transaction list
  Direction dir = Direction::outgoing;
  Index customer = 0;   // reference-graph customer id
};

struct ScoringOptions {
  std::size_t fanout = 32;
  std::uint64_t seed = 11;
  std::size_t chunk = 1024;  // new transactions encoded per subgraph
};

/// Scores new transactions against a reference graph. Customer embeddings
/// are computed once from the reference graph; each new transaction is
/// inserted transiently with its predicted-direction edge severed. New
/// transactions never see one another.
class Scorer {
 public:
  Scorer(model::Model m, const graph::BipartiteGraph& reference, ScoringOptions opts = {});

  const nd::Tensor& customer_embeddings() const { return customer_z_; }

  std::vector<AnomalyResult> score(std::span<const graph::RawTransaction> txns);
  std::vector<double> score_pairs(std::span<const graph::RawTransaction> txns, std::span<const PairQuery> queries);

  /// Embeddings of the new transactions with the edges of `dir` severed.
  nd::Tensor transaction_embeddings(std::span<const graph::RawTransaction> txns, Direction dir);

 private:
  std::vector<graph::RawTransaction> sanitize(std::span<const graph::RawTransaction> txns) const;

  model::Model model_;
  const graph::BipartiteGraph& reference_;
  ScoringOptions opts_;
  nd::Tensor customer_z_;
};

/// Real queries for each known side of each new transaction plus one
/// negative per real query (a uniformly drawn different customer).
struct HoldoutQueries {
  std::vector<PairQuery> queries;
  std::vector<int> labels;
};
HoldoutQueries holdout_queries(const graph::BipartiteGraph& reference, std::span<const graph::RawTransaction> txns,
                               std::uint64_t seed);

void write_results(const std::string& path, std::span<const AnomalyResult> results);
std::vector<AnomalyResult> read_results(const std::string& path);

}  // namespace txnlink::training
