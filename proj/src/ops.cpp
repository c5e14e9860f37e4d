#include "txnlink/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <random>

#include <cblas.h>

#include "txnlink/errors.hpp"

namespace txnlink::nd {

namespace {

bool tracks(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

Tensor make_output(Shape shape, std::vector<double> values, bool track) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  out.set_requires_grad(track);
  return out;
}

std::vector<double>& grad_of(const Tensor& t) { return t.node().grad; }

/// C[r×c] = op(A) op(B) + beta·C, row-major, inner dimension `inner`.
void gemm(bool ta, bool tb, std::size_t r, std::size_t c, std::size_t inner, const double* A, const double* B,
          double beta, double* C) {
  // Multi-threaded BLAS may change the summation order between runs.
  static std::once_flag single_thread;
  std::call_once(single_thread, [] { openblas_set_num_threads(1); });
  if (r == 0 || c == 0) return;
  if (inner == 0) {
    if (beta == 0.0) std::fill(C, C + r * c, 0.0);
    return;
  }
  const auto ri = static_cast<int>(r), ci = static_cast<int>(c), ii = static_cast<int>(inner);
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, ri, ci, ii, 1.0, A,
              ta ? ri : ii, B, tb ? ii : ci, beta, C, ci);
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class F, class G>
Tensor unary(Tape& tape, const Tensor& x, F forward, G derivative) {
  const bool track = tracks(tape, {&x});
  const auto in = x.data();
  std::vector<double> v(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) v[i] = forward(in[i]);
  Tensor out = make_output(x.shape(), std::move(v), track);
  if (track) {
    tape.record({x}, out, [x, out, derivative] {
      auto& gx = grad_of(x);
      const auto& g = grad_of(out);
      const auto xin = x.data();
      const auto y = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xin[i], y[i]);
    });
  }
  return out;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw DimensionError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const bool track = tracks(tape, {&a, &b});
  std::vector<double> c(m * n, 0.0);
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), 0.0, c.data());
  Tensor out = make_output({m, n}, std::move(c), track);
  if (track) {
    tape.record({a, b}, out, [a, b, out, m, k, n] {
      const double* G = grad_of(out).data();
      // dA += G Bᵀ, dB += Aᵀ G
      if (a.requires_grad()) gemm(false, true, m, k, n, G, b.data().data(), 1.0, grad_of(a).data());
      if (b.requires_grad()) gemm(true, false, k, n, m, a.data().data(), G, 1.0, grad_of(b).data());
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool track = tracks(tape, {&a, &b});
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
  Tensor out = make_output(a.shape(), std::move(v), track);
  if (track) {
    tape.record({a, b}, out, [a, b, out] {
      const auto& g = grad_of(out);
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto& gt = grad_of(*t);
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool track = tracks(tape, {&a, &b});
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
  Tensor out = make_output(a.shape(), std::move(v), track);
  if (track) {
    tape.record({a, b}, out, [a, b, out] {
      const auto& g = grad_of(out);
      if (a.requires_grad()) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  const bool track = tracks(tape, {&a, &b});
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
  Tensor out = make_output(a.shape(), std::move(v), track);
  if (track) {
    tape.record({a, b}, out, [a, b, out] {
      const auto& g = grad_of(out);
      if (a.requires_grad()) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.at(i);
      }
      if (b.requires_grad()) {
        auto& gb = grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.at(i);
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  return unary(
      tape, a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_row(Tape& tape, const Tensor& x, const Tensor& row) {
  require_2d(x, "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (row.size() != n) throw DimensionError("add_row: row of " + std::to_string(row.size()) + " for " + shape_str(x.shape()));
  const bool track = tracks(tape, {&x, &row});
  std::vector<double> v(x.data().begin(), x.data().end());
  const auto r = row.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] += r[j];
  Tensor out = make_output(x.shape(), std::move(v), track);
  if (track) {
    tape.record({x, row}, out, [x, row, out, m, n] {
      const auto& g = grad_of(out);
      if (x.requires_grad()) {
        auto& gx = grad_of(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (row.requires_grad()) {
        auto& gr = grad_of(row);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
      }
    });
  }
  return out;
}

Tensor scale_rows(Tape& tape, const Tensor& x, const Tensor& w) {
  require_2d(x, "scale_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (w.size() != m) throw DimensionError("scale_rows: " + std::to_string(w.size()) + " weights for " + shape_str(x.shape()));
  const bool track = tracks(tape, {&x, &w});
  std::vector<double> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = x.at(i * n + j) * w.at(i);
  Tensor out = make_output(x.shape(), std::move(v), track);
  if (track) {
    tape.record({x, w}, out, [x, w, out, m, n] {
      const auto& g = grad_of(out);
      if (x.requires_grad()) {
        auto& gx = grad_of(x);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * w.at(i);
      }
      if (w.requires_grad()) {
        auto& gw = grad_of(w);
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * x.at(i * n + j);
          gw[i] += acc;
        }
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
  return unary(
      tape, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary(
      tape, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(Tape& tape, const Tensor& x, double eps) {
  return unary(
      tape, x, [eps](double v) { return std::log(std::max(v, eps)); },
      [eps](double v, double) { return v > eps ? 1.0 / v : 0.0; });
}

Tensor one_minus(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

Tensor dropout(Tape& tape, const Tensor& x, double p, std::uint64_t seed, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) throw UsageError("dropout probability must be in [0,1)");
  if (mode == Mode::infer || p == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  const double inv = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (auto& m : *mask) m = keep(rng) ? inv : 0.0;
  const bool track = tracks(tape, {&x});
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) * (*mask)[i];
  Tensor out = make_output(x.shape(), std::move(v), track);
  if (track) {
    tape.record({x}, out, [x, out, mask] {
      auto& gx = grad_of(x);
      const auto& g = grad_of(out);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

Tensor concat(Tape& tape, std::initializer_list<Tensor> parts, int axis) {
  return concat(tape, std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw UsageError("concat axis must be 0 or 1");
  const bool one_d = parts[0].ndim() == 1;
  std::vector<Tensor> ins(parts.begin(), parts.end());
  bool track = false;
  for (const auto& t : ins) track = track || (tape.recording() && t.requires_grad());

  if (axis == 0) {
    std::size_t rows = 0;
    const std::size_t n = parts[0].cols();
    for (const auto& t : ins) {
      if ((t.ndim() == 1) != one_d || (!one_d && t.cols() != n))
        throw DimensionError("concat axis 0: incompatible " + shape_str(t.shape()));
      rows += t.rows();
    }
    std::vector<double> v;
    v.reserve(rows * n);
    for (const auto& t : ins) v.insert(v.end(), t.data().begin(), t.data().end());
    Tensor out = make_output(one_d ? Shape{rows} : Shape{rows, n}, std::move(v), track);
    if (track) {
      tape.record(ins, out, [ins, out] {
        const auto& g = grad_of(out);
        std::size_t off = 0;
        for (const auto& t : ins) {
          if (t.requires_grad()) {
            auto& gt = grad_of(t);
            for (std::size_t i = 0; i < t.size(); ++i) gt[i] += g[off + i];
          }
          off += t.size();
        }
      });
    }
    return out;
  }

  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& t : ins) {
    if (t.ndim() != 2 || t.rows() != m) throw DimensionError("concat axis 1: incompatible " + shape_str(t.shape()));
    n += t.cols();
  }
  std::vector<double> v(m * n);
  std::size_t col = 0;
  for (const auto& t : ins) {
    const std::size_t c = t.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(t.data().data() + i * c, c, v.data() + i * n + col);
    col += c;
  }
  Tensor out = make_output({m, n}, std::move(v), track);
  if (track) {
    tape.record(ins, out, [ins, out, m, n] {
      const auto& g = grad_of(out);
      std::size_t col = 0;
      for (const auto& t : ins) {
        const std::size_t c = t.cols();
        if (t.requires_grad()) {
          auto& gt = grad_of(t);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) gt[i * c + j] += g[i * n + col + j];
        }
        col += c;
      }
    });
  }
  return out;
}

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t count) {
  if (count > x.rows()) throw DimensionError("slice_rows beyond " + shape_str(x.shape()));
  if (count == x.rows()) return x;
  const std::size_t n = x.cols();
  const bool track = tracks(tape, {&x});
  std::vector<double> v(x.data().begin(), x.data().begin() + static_cast<std::ptrdiff_t>(count * n));
  Shape shape = x.shape();
  shape[0] = count;
  Tensor out = make_output(shape, std::move(v), track);
  if (track) {
    tape.record({x}, out, [x, out] {
      auto& gx = grad_of(x);
      const auto& g = grad_of(out);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const Index> idx) {
  const std::size_t n = x.cols(), rows = x.rows();
  const bool track = tracks(tape, {&x});
  std::vector<double> v(idx.size() * n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows) throw DimensionError("gather_rows index out of range");
    std::copy_n(x.data().data() + idx[i] * n, n, v.data() + i * n);
  }
  Shape shape = x.shape();
  shape[0] = idx.size();
  Tensor out = make_output(shape, std::move(v), track);
  if (track) {
    auto ids = std::make_shared<std::vector<Index>>(idx.begin(), idx.end());
    tape.record({x}, out, [x, out, ids, n] {
      auto& gx = grad_of(x);
      const auto& g = grad_of(out);
      for (std::size_t i = 0; i < ids->size(); ++i) {
        double* dst = gx.data() + (*ids)[i] * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += g[i * n + j];
      }
    });
  }
  return out;
}

Tensor scatter_add_rows(Tape& tape, const Tensor& x, std::span<const Index> idx, std::size_t n_out) {
  if (idx.size() != x.rows()) throw DimensionError("scatter_add_rows: index count does not match rows");
  const std::size_t n = x.cols();
  const bool track = tracks(tape, {&x});
  std::vector<double> v(n_out * n, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= n_out) throw DimensionError("scatter_add_rows index out of range");
    double* dst = v.data() + idx[i] * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] += x.at(i * n + j);
  }
  Shape shape = x.shape();
  shape[0] = n_out;
  Tensor out = make_output(shape, std::move(v), track);
  if (track) {
    auto ids = std::make_shared<std::vector<Index>>(idx.begin(), idx.end());
    tape.record({x}, out, [x, out, ids, n] {
      auto& gx = grad_of(x);
      const auto& g = grad_of(out);
      for (std::size_t i = 0; i < ids->size(); ++i) {
        const double* src = g.data() + (*ids)[i] * n;
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += src[j];
      }
    });
  }
  return out;
}

Tensor head_dot(Tape& tape, const Tensor& x, const Tensor& a, std::size_t heads) {
  require_2d(x, "head_dot");
  const std::size_t m = x.rows(), width = x.cols();
  if (heads == 0 || width % heads != 0 || a.size() != width)
    throw DimensionError("head_dot: " + shape_str(x.shape()) + " with attention vector of " + std::to_string(a.size()));
  const std::size_t d = width / heads;
  const bool track = tracks(tape, {&x, &a});
  std::vector<double> v(m * heads, 0.0);
  const double* X = x.data().data();
  const double* A = a.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < heads; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += X[i * width + k * d + j] * A[k * d + j];
      v[i * heads + k] = acc;
    }
  Tensor out = make_output({m, heads}, std::move(v), track);
  if (track) {
    tape.record({x, a}, out, [x, a, out, m, heads, d, width] {
      const auto& g = grad_of(out);
      const double* X = x.data().data();
      const double* A = a.data().data();
      if (x.requires_grad()) {
        auto& gx = grad_of(x);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < heads; ++k) {
            const double gik = g[i * heads + k];
            for (std::size_t j = 0; j < d; ++j) gx[i * width + k * d + j] += gik * A[k * d + j];
          }
      }
      if (a.requires_grad()) {
        auto& ga = grad_of(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < heads; ++k) {
            const double gik = g[i * heads + k];
            for (std::size_t j = 0; j < d; ++j) ga[k * d + j] += gik * X[i * width + k * d + j];
          }
      }
    });
  }
  return out;
}

Tensor segment_softmax(Tape& tape, const Tensor& logits, std::span<const Index> segment, std::size_t num_segments) {
  const std::size_t e = logits.rows();
  const std::size_t k = logits.cols();
  if (segment.size() != e) throw DimensionError("segment_softmax: segment ids do not match entries");
  for (auto s : segment)
    if (s < 0 || static_cast<std::size_t>(s) >= num_segments) throw DimensionError("segment_softmax: segment id out of range");
  const bool track = tracks(tape, {&logits});
  const double* x = logits.data().data();
  std::vector<double> mx(num_segments * k, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t h = 0; h < k; ++h) {
      double& m = mx[segment[i] * k + h];
      m = std::max(m, x[i * k + h]);
    }
  std::vector<double> v(e * k);
  std::vector<double> denom(num_segments * k, 0.0);
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t h = 0; h < k; ++h) {
      const double ex = std::exp(x[i * k + h] - mx[segment[i] * k + h]);
      v[i * k + h] = ex;
      denom[segment[i] * k + h] += ex;
    }
  for (std::size_t i = 0; i < e; ++i)
    for (std::size_t h = 0; h < k; ++h) v[i * k + h] /= denom[segment[i] * k + h];
  Tensor out = make_output(logits.shape(), std::move(v), track);
  if (track) {
    auto seg = std::make_shared<std::vector<Index>>(segment.begin(), segment.end());
    tape.record({logits}, out, [logits, out, seg, num_segments, e, k] {
      const auto& g = grad_of(out);
      const auto y = out.data();
      std::vector<double> dot(num_segments * k, 0.0);
      for (std::size_t i = 0; i < e; ++i)
        for (std::size_t h = 0; h < k; ++h) dot[(*seg)[i] * k + h] += y[i * k + h] * g[i * k + h];
      auto& gx = grad_of(logits);
      for (std::size_t i = 0; i < e; ++i)
        for (std::size_t h = 0; h < k; ++h)
          gx[i * k + h] += y[i * k + h] * (g[i * k + h] - dot[(*seg)[i] * k + h]);
    });
  }
  return out;
}

Tensor edge_weighted_sum(Tape& tape, const Tensor& alpha, const Tensor& values, std::span<const Index> src,
                         std::span<const Index> dst, std::size_t n_dst) {
  require_2d(values, "edge_weighted_sum");
  const std::size_t e = alpha.rows(), heads = alpha.cols(), width = values.cols();
  if (src.size() != e || dst.size() != e) throw DimensionError("edge_weighted_sum: index count mismatch");
  if (heads == 0 || width % heads != 0) throw DimensionError("edge_weighted_sum: width not divisible by heads");
  const std::size_t d = width / heads;
  for (std::size_t i = 0; i < e; ++i) {
    if (src[i] < 0 || static_cast<std::size_t>(src[i]) >= values.rows()) throw DimensionError("edge_weighted_sum: src out of range");
    if (dst[i] < 0 || static_cast<std::size_t>(dst[i]) >= n_dst) throw DimensionError("edge_weighted_sum: dst out of range");
  }
  const bool track = tracks(tape, {&alpha, &values});
  std::vector<double> v(n_dst * width, 0.0);
  const double* A = alpha.data().data();
  const double* V = values.data().data();
  for (std::size_t i = 0; i < e; ++i) {
    double* o = v.data() + dst[i] * width;
    const double* s = V + src[i] * width;
    for (std::size_t h = 0; h < heads; ++h) {
      const double w = A[i * heads + h];
      for (std::size_t j = 0; j < d; ++j) o[h * d + j] += w * s[h * d + j];
    }
  }
  Tensor out = make_output({n_dst, width}, std::move(v), track);
  if (track) {
    auto s_ids = std::make_shared<std::vector<Index>>(src.begin(), src.end());
    auto d_ids = std::make_shared<std::vector<Index>>(dst.begin(), dst.end());
    tape.record({alpha, values}, out, [alpha, values, out, s_ids, d_ids, e, heads, d, width] {
      const auto& g = grad_of(out);
      const double* A = alpha.data().data();
      const double* V = values.data().data();
      const bool ga_on = alpha.requires_grad(), gv_on = values.requires_grad();
      double* GA = ga_on ? grad_of(alpha).data() : nullptr;
      double* GV = gv_on ? grad_of(values).data() : nullptr;
      for (std::size_t i = 0; i < e; ++i) {
        const double* gi = g.data() + (*d_ids)[i] * width;
        const std::size_t srow = static_cast<std::size_t>((*s_ids)[i]) * width;
        for (std::size_t h = 0; h < heads; ++h) {
          if (ga_on) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += gi[h * d + j] * V[srow + h * d + j];
            GA[i * heads + h] += acc;
          }
          if (gv_on) {
            const double w = A[i * heads + h];
            for (std::size_t j = 0; j < d; ++j) GV[srow + h * d + j] += w * gi[h * d + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  const bool track = tracks(tape, {&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = make_output({1}, {s}, track);
  if (track) {
    tape.record({x}, out, [x, out] {
      const double g = grad_of(out)[0];
      for (auto& gx : grad_of(x)) gx += g;
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& x) { return scale(tape, sum(tape, x), 1.0 / static_cast<double>(x.size())); }

Tensor mean_rows(Tape& tape, const Tensor& x) {
  require_2d(x, "mean_rows");
  const std::size_t m = x.rows(), n = x.cols();
  const bool track = tracks(tape, {&x});
  std::vector<double> v(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[j] += x.at(i * n + j);
  for (auto& c : v) c /= static_cast<double>(m);
  Tensor out = make_output({1, n}, std::move(v), track);
  if (track) {
    tape.record({x}, out, [x, out, m, n] {
      const auto& g = grad_of(out);
      auto& gx = grad_of(x);
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] * inv;
    });
  }
  return out;
}

Tensor batch_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  Mode mode) {
  require_2d(x, "batch_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.size() != n || beta.size() != n || state.running_mean.size() != n)
    throw DimensionError("batch_norm: parameter width does not match " + shape_str(x.shape()));
  const double* X = x.data().data();
  const double* G = gamma.data().data();
  const double* Bt = beta.data().data();

  if (mode == Mode::infer) {
    std::vector<double> scale_c(n), shift_c(n);
    for (std::size_t j = 0; j < n; ++j) {
      scale_c[j] = G[j] / std::sqrt(state.running_var[j] + state.eps);
      shift_c[j] = Bt[j] - state.running_mean[j] * scale_c[j];
    }
    const bool track = tracks(tape, {&x, &gamma, &beta});
    std::vector<double> v(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) v[i * n + j] = X[i * n + j] * scale_c[j] + shift_c[j];
    Tensor out = make_output(x.shape(), std::move(v), track);
    if (track) {
      const std::vector<double> rmean = state.running_mean, rvar = state.running_var;
      const double eps = state.eps;
      tape.record({x, gamma, beta}, out, [x, gamma, beta, out, m, n, rmean, rvar, eps] {
        const auto& g = grad_of(out);
        for (std::size_t j = 0; j < n; ++j) {
          const double inv_std = 1.0 / std::sqrt(rvar[j] + eps);
          double gsum = 0.0, gxhat = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            gsum += g[i * n + j];
            gxhat += g[i * n + j] * (x.at(i * n + j) - rmean[j]) * inv_std;
          }
          if (x.requires_grad()) {
            auto& gx = grad_of(x);
            for (std::size_t i = 0; i < m; ++i) gx[i * n + j] += g[i * n + j] * gamma.at(j) * inv_std;
          }
          if (gamma.requires_grad()) grad_of(gamma)[j] += gxhat;
          if (beta.requires_grad()) grad_of(beta)[j] += gsum;
        }
      });
    }
    return out;
  }

  if (m < 2) throw BatchSizeError("batch_norm in train mode needs at least 2 rows, got " + std::to_string(m));
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  std::vector<double> v(m * n);
  for (std::size_t j = 0; j < n; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += X[i * n + j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double dlt = X[i * n + j] - mu;
      var += dlt * dlt;
    }
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[j] = is;
    for (std::size_t i = 0; i < m; ++i) {
      const double xh = (X[i * n + j] - mu) * is;
      (*xhat)[i * n + j] = xh;
      v[i * n + j] = xh * G[j] + Bt[j];
    }
    const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
    state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mu;
    state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
  }
  const bool track = tracks(tape, {&x, &gamma, &beta});
  Tensor out = make_output(x.shape(), std::move(v), track);
  if (track) {
    tape.record({x, gamma, beta}, out, [x, gamma, beta, out, xhat, inv_std, m, n] {
      const auto& g = grad_of(out);
      const double inv_m = 1.0 / static_cast<double>(m);
      for (std::size_t j = 0; j < n; ++j) {
        double gsum = 0.0, gxhat = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          gsum += g[i * n + j];
          gxhat += g[i * n + j] * (*xhat)[i * n + j];
        }
        if (gamma.requires_grad()) grad_of(gamma)[j] += gxhat;
        if (beta.requires_grad()) grad_of(beta)[j] += gsum;
        if (x.requires_grad()) {
          auto& gx = grad_of(x);
          const double gj = gamma.at(j) * (*inv_std)[j];
          for (std::size_t i = 0; i < m; ++i)
            gx[i * n + j] += gj * (g[i * n + j] - inv_m * gsum - (*xhat)[i * n + j] * inv_m * gxhat);
        }
      }
    });
  }
  return out;
}

Tensor bce(Tape& tape, const Tensor& pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw DimensionError("bce: prediction/target size mismatch");
  const std::size_t n = pred.size();
  const bool track = tracks(tape, {&pred});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(pred.at(i), kProbEps, 1.0 - kProbEps);
    total -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  Tensor out = make_output({1}, {total / static_cast<double>(n)}, track);
  if (track) {
    auto t = std::make_shared<std::vector<double>>(target.begin(), target.end());
    tape.record({pred}, out, [pred, out, t, n] {
      const double g = grad_of(out)[0] / static_cast<double>(n);
      auto& gp = grad_of(pred);
      for (std::size_t i = 0; i < n; ++i) {
        const double raw = pred.at(i);
        if (raw < kProbEps || raw > 1.0 - kProbEps) continue;
        gp[i] += g * (-(*t)[i] / raw + (1.0 - (*t)[i]) / (1.0 - raw));
      }
    });
  }
  return out;
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value in ") + what);
}

}  // namespace txnlink::nd
