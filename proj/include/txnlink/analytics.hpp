#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "txnlink/graph.hpp"
#include "txnlink/model.hpp"

namespace txnlink::analytics {

using graph::Index;
using graph::NodeType;

double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Node embeddings of one type from encoder layer `layer` (1..L, 0 means L),
/// computed over the full neighbourhood of every node. Rows follow node ids.
nd::Tensor export_embeddings(model::Model& m, const graph::BipartiteGraph& g, NodeType type, std::size_t layer = 0);

/// Delimited text: header `id,e0,e1,...`, one row per node, round-trip precision.
void write_embeddings(const std::string& path, std::span<const std::string> ids, const nd::Tensor& z);

struct SnapshotEmbeddings {
  std::string snapshot;
  std::vector<std::string> ids;
  nd::Tensor z;

  /// Row of a customer id, or -1.
  Index find(const std::string& id) const;
};

SnapshotEmbeddings snapshot_embeddings(model::Model& m, const graph::BipartiteGraph& g, std::string snapshot,
                                       std::size_t layer = 0);

struct DivergenceReport {
  std::string customer;
  std::vector<std::string> snapshots;       // those containing the customer, in input order
  std::vector<std::vector<double>> matrix;  // pairwise cosine similarity
  double threshold = 0.8;
  bool diverging = false;
};

DivergenceReport divergence_report(std::span<const SnapshotEmbeddings> snapshots, const std::string& customer,
                                   double threshold = 0.8);
void to_json(nlohmann::json& j, const DivergenceReport& r);

struct Clustering {
  std::vector<std::size_t> assignment;
  nd::Tensor centroids;  // [k × d]
  double inertia = 0.0;
  double seeded_inertia = 0.0;        // after k-means++ seeding, before any Lloyd step
  std::vector<double> inertia_trace;  // after each Lloyd step
  std::size_t iterations = 0;
};

/// k-means++ seeding then Lloyd iterations (at most 100, or until no
/// centroid moves by 1e-6 or more).
Clustering kmeans(const nd::Tensor& points, std::size_t k, std::uint64_t seed);

/// Rows of `txn_z` for transactions linked to the customer in either direction.
std::vector<Index> customer_transactions(const graph::BipartiteGraph& g, Index customer);

}  // namespace txnlink::analytics
