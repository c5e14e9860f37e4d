#include "txnlink/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

#include "txnlink/errors.hpp"

namespace txnlink::analytics {

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw DimensionError("cosine similarity of vectors with " + std::to_string(u.size()) + " and " +
                         std::to_string(v.size()) + " entries");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw MetricError("cosine similarity is undefined for a zero vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

nd::Tensor export_embeddings(model::Model& m, const graph::BipartiteGraph& g, NodeType type, std::size_t layer) {
  const std::size_t L = m.config.layers;
  if (layer == 0) layer = L;
  if (layer > L) throw UsageError("layer " + std::to_string(layer) + " outside 1.." + std::to_string(L));
  const auto sub = graph::full_neighborhood(g, L);
  nd::Tape tape(false);
  const auto layers = model::encode_layers(tape, m, sub, g.customer_features(), g.txn_features(), nd::Mode::infer, 0);
  const std::size_t n = type == NodeType::customer ? g.num_customers() : g.num_transactions();
  return nd::slice_rows(tape, layers[layer - 1].of(type), n);
}

void write_embeddings(const std::string& path, std::span<const std::string> ids, const nd::Tensor& z) {
  if (ids.size() != z.rows()) throw DimensionError("embedding export: id count does not match rows");
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path);
  out << "id";
  for (std::size_t j = 0; j < z.cols(); ++j) out << ",e" << j;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < z.rows(); ++i) {
    out << ids[i];
    for (std::size_t j = 0; j < z.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", z.at(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
}

Index SnapshotEmbeddings::find(const std::string& id) const {
  const auto it = std::find(ids.begin(), ids.end(), id);
  return it == ids.end() ? -1 : static_cast<Index>(it - ids.begin());
}

SnapshotEmbeddings snapshot_embeddings(model::Model& m, const graph::BipartiteGraph& g, std::string snapshot,
                                       std::size_t layer) {
  SnapshotEmbeddings s;
  s.snapshot = std::move(snapshot);
  s.ids = g.customer_ids();
  s.z = export_embeddings(m, g, NodeType::customer, layer);
  return s;
}

DivergenceReport divergence_report(std::span<const SnapshotEmbeddings> snapshots, const std::string& customer,
                                   double threshold) {
  DivergenceReport r;
  r.customer = customer;
  r.threshold = threshold;
  std::vector<std::span<const double>> rows;
  for (const auto& s : snapshots) {
    const Index i = s.find(customer);
    if (i < 0) continue;
    const auto z = s.z.data();
    rows.push_back(z.subspan(static_cast<std::size_t>(i) * s.z.cols(), s.z.cols()));
    r.snapshots.push_back(s.snapshot);
  }
  if (rows.empty()) throw LookupError("customer '" + customer + "' is absent from every snapshot");
  if (rows.size() < 2) throw LookupError("customer '" + customer + "' appears in only one snapshot");
  const std::size_t n = rows.size();
  r.matrix.assign(n, std::vector<double>(n, 1.0));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double c = cosine_similarity(rows[a], rows[b]);
      r.matrix[a][b] = r.matrix[b][a] = c;
      if (c < threshold) r.diverging = true;
    }
  }
  return r;
}

void to_json(nlohmann::json& j, const DivergenceReport& r) {
  j = nlohmann::json{{"customer_id", r.customer},
                     {"snapshots", r.snapshots},
                     {"cosine_similarity", r.matrix},
                     {"threshold", r.threshold},
                     {"diverging", r.diverging}};
}

namespace {

double sqdist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

Clustering kmeans(const nd::Tensor& points, std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.rows(), d = points.cols();
  if (k == 0) throw ConfigError("k must be >= 1");
  if (k > n) throw ConfigError("k=" + std::to_string(k) + " exceeds the " + std::to_string(n) + " points");
  const double* x = points.data().data();
  std::vector<double> c(k * d);
  std::mt19937_64 rng(seed);

  // k-means++ seeding
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::copy_n(x + first * d, d, c.data());
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], sqdist(x + i * d, c.data() + (j - 1) * d, d));
      total += best[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= best[pick];
        if (r < 0.0 && best[pick] > 0.0) break;
      }
      while (best[pick] == 0.0) pick = (pick + 1) % n;
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    std::copy_n(x + pick * d, d, c.data() + j * d);
  }

  Clustering out;
  out.assignment.assign(n, 0);
  auto assign = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double dd = sqdist(x + i * d, c.data() + j * d, d);
        if (dd < bd) {
          bd = dd;
          out.assignment[i] = j;
        }
      }
      inertia += bd;
    }
    return inertia;
  };
  out.seeded_inertia = assign();
  out.inertia = out.seeded_inertia;
  for (std::size_t it = 0; it < 100; ++it) {
    std::vector<double> next(k * d, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[out.assignment[i]];
      for (std::size_t t = 0; t < d; ++t) next[out.assignment[i] * d + t] += x[i * d + t];
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] == 0) {
        std::copy_n(c.data() + j * d, d, next.data() + j * d);  // empty cluster keeps its centroid
        continue;
      }
      for (std::size_t t = 0; t < d; ++t) next[j * d + t] /= static_cast<double>(count[j]);
      shift = std::max(shift, std::sqrt(sqdist(next.data() + j * d, c.data() + j * d, d)));
    }
    c = std::move(next);
    out.inertia = assign();
    out.inertia_trace.push_back(out.inertia);
    out.iterations = it + 1;
    if (shift < 1e-6) break;
  }
  out.centroids = nd::Tensor::from({k, d}, std::move(c));
  return out;
}

std::vector<Index> customer_transactions(const graph::BipartiteGraph& g, Index customer) {
  if (customer < 0 || static_cast<std::size_t>(customer) >= g.num_customers())
    throw LookupError("customer index out of range");
  std::vector<Index> out;
  for (graph::Relation r : {graph::Relation::out_rev, graph::Relation::in_fwd})
    for (Index t : g.relation(r).of(customer)) out.push_back(t);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace txnlink::analytics
