#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "txnlink/graph.hpp"

namespace txnlink::datagen {

struct SyntheticConfig {
  std::size_t n_customers = 500;
  std::size_t n_communities = 8;
  double transactions_per_customer = 5.0;  // emitted window only
  std::size_t customer_dim = graph::kDefaultCustomerDim;
  std::size_t txn_dim = graph::kDefaultTransactionDim;
  double anomaly_rate = 0.02;
  double external_rate = 0.1;
  std::int64_t start_time = 1'600'000'000;  // first emitted second
  std::int64_t days = 210;                  // emitted span
  std::int64_t warmup_days = 60;            // feeds the profiles only
  std::size_t preferred_counterparts = 4;
  double preferred_rate = 0.6;      // share of in-community transactions sent to a preferred counterpart
  double background_cross_rate = 0.03;  // unflagged cross-community traffic
  double profile_noise = 2.5;       // spread of customer attributes around the community centre
  double amount_spread = 0.9;       // per-transaction log-amount noise
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

struct Labels {
  std::vector<std::string> customer_ids;
  std::vector<std::size_t> community;       // per customer
  std::vector<std::string> anomalous_txns;  // flagged, all cross-community
};

struct SyntheticDataset {
  std::vector<graph::CustomerProfile> profiles;
  std::vector<graph::RawTransaction> transactions;  // sorted by timestamp
  Labels labels;
};

SyntheticDataset generate(const SyntheticConfig& cfg);

/// Transactions with timestamp < boundary go to train, the rest to test.
struct Holdout {
  std::vector<graph::RawTransaction> train;
  std::vector<graph::RawTransaction> test;
};
Holdout holdout_split(std::span<const graph::RawTransaction> txns, std::int64_t boundary);

void write_labels(const std::string& path, const Labels& labels);
Labels read_labels(const std::string& path);

}  // namespace txnlink::datagen
