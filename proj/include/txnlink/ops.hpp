#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "txnlink/tensor.hpp"

namespace txnlink::nd {

using Index = std::int64_t;

enum class Mode { train, infer };

/// [m×k]·[k×n] -> [m×n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
/// x[m×n] + row[n] broadcast over rows.
Tensor add_row(Tape& tape, const Tensor& x, const Tensor& row);
/// x[m×n] * w[m] broadcast over columns.
Tensor scale_rows(Tape& tape, const Tensor& x, const Tensor& w);

Tensor relu(Tape& tape, const Tensor& x);
Tensor leaky_relu(Tape& tape, const Tensor& x, double slope = 0.2);
Tensor sigmoid(Tape& tape, const Tensor& x);
/// log(clamp(x, eps, inf))
Tensor log(Tape& tape, const Tensor& x, double eps = 1e-7);
/// 1 - x
Tensor one_minus(Tape& tape, const Tensor& x);

/// Inverted dropout: surviving entries are scaled by 1/(1-p) in train mode;
/// exact identity in infer mode.
Tensor dropout(Tape& tape, const Tensor& x, double p, std::uint64_t seed, Mode mode);

/// Concatenate 2-D tensors along rows (axis 0) or columns (axis 1). 1-D
/// tensors concatenate end to end for axis 0.
Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis);
Tensor concat(Tape& tape, std::initializer_list<Tensor> parts, int axis);

/// First `count` rows.
Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t count);
/// out[i] = x[idx[i]]
Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const Index> idx);
/// out[idx[i]] += x[i], out has `n` rows.
Tensor scatter_add_rows(Tape& tape, const Tensor& x, std::span<const Index> idx, std::size_t n);

/// x[n × K·d] and a[1 × K·d] -> [n × K], column k is the dot product of
/// the k-th d-block of each row with the k-th block of a.
Tensor head_dot(Tape& tape, const Tensor& x, const Tensor& a, std::size_t heads);

/// Softmax within segments. logits is [E] or [E × K]; each column is
/// normalized independently over the entries that share a segment id.
Tensor segment_softmax(Tape& tape, const Tensor& logits, std::span<const Index> segment,
                       std::size_t num_segments);

/// Multi-head weighted aggregation:
///   out[dst[e], block k] += alpha[e, k] * values[src[e], block k]
/// alpha is [E × K], values is [n_src × K·d], out is [n_dst × K·d].
Tensor edge_weighted_sum(Tape& tape, const Tensor& alpha, const Tensor& values,
                         std::span<const Index> src, std::span<const Index> dst, std::size_t n_dst);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);
/// Column means of [m×n] -> [1×n].
Tensor mean_rows(Tape& tape, const Tensor& x);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t dim = 0) : running_mean(dim, 0.0), running_var(dim, 1.0) {}
};

/// Normalizes columns of x[B×d] and applies gamma/beta ([1×d] each).
/// Train mode uses batch statistics (biased variance) and updates `state`
/// (running variance uses the unbiased estimate); infer mode uses the
/// running statistics.
Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode);

/// Mean binary cross-entropy, predictions clamped to [1e-7, 1-1e-7].
Tensor bce(Tape& tape, const Tensor& pred, std::span<const double> target);

inline constexpr double kProbEps = 1e-7;

/// Throws NumericalError if any entry is NaN or infinite.
void check_finite(const Tensor& t, const char* what);

}  // namespace txnlink::nd
