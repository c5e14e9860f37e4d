#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "txnlink/graph.hpp"
#include "txnlink/ops.hpp"
#include "txnlink/tensor.hpp"

namespace support {

using txnlink::nd::Tensor;

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline Tensor random_param(txnlink::nd::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return Tensor::parameter(std::move(shape), random_values(n, seed, lo, hi));
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
};

/// Compares the analytic gradient of `loss` for every tensor in `params`
/// against central differences. `loss` must build a fresh tape each call.
inline GradCheck check_gradients(std::vector<std::pair<std::string, Tensor>> params,
                                 const std::function<Tensor(txnlink::nd::Tape&)>& loss, double h = 1e-5,
                                 double floor = 1e-7) {
  txnlink::nd::Tape tape;
  auto l = loss(tape);
  tape.backward(l);
  std::vector<std::vector<double>> analytic;
  for (auto& [_, p] : params) analytic.emplace_back(p.grad().begin(), p.grad().end());
  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].second;
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      txnlink::nd::Tape t1(false);
      const double up = loss(t1).item();
      w[i] = orig - h;
      txnlink::nd::Tape t2(false);
      const double down = loss(t2).item();
      w[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k][i];
      const double scale = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / scale;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = params[k].first + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return out;
}

inline std::vector<double> features(std::size_t d, std::uint64_t seed) { return random_values(d, seed, -2.0, 2.0); }

/// Random small graph: `nc` customers, `nt` transactions, each transaction
/// has a source and destination drawn at random with the given EXTERNAL rate.
struct ToyData {
  std::vector<txnlink::graph::RawTransaction> txns;
  std::vector<txnlink::graph::CustomerProfile> profiles;
};

inline ToyData toy_data(std::size_t nc, std::size_t nt, std::uint64_t seed, double external = 0.15,
                        std::size_t dc = 5, std::size_t dt = 3) {
  ToyData d;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, nc - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t c = 0; c < nc; ++c) d.profiles.push_back({"c" + std::to_string(c), features(dc, seed * 7919 + c)});
  for (std::size_t t = 0; t < nt; ++t) {
    txnlink::graph::RawTransaction r;
    r.txn_id = "t" + std::to_string(t);
    r.source = "c" + std::to_string(pick(rng));
    r.dest = "c" + std::to_string(pick(rng));
    if (u(rng) < external) (u(rng) < 0.5 ? r.source : r.dest) = txnlink::graph::kExternal;
    r.timestamp = static_cast<std::int64_t>(t);
    r.features = features(dt, seed * 104729 + t);
    d.txns.push_back(std::move(r));
  }
  return d;
}

inline txnlink::graph::BipartiteGraph toy_graph(std::size_t nc, std::size_t nt, std::uint64_t seed,
                                                double external = 0.15, std::size_t dc = 5, std::size_t dt = 3) {
  const auto d = toy_data(nc, nt, seed, external, dc, dt);
  return txnlink::graph::BipartiteGraph::build(d.txns, d.profiles);
}

}  // namespace support
