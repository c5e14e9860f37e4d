#include "txnlink/tensor.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_set>

#include "txnlink/errors.hpp"

namespace txnlink::nd {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {
void check_shape(const Shape& shape, std::size_t n) {
  if (shape.empty()) throw DimensionError("tensor rank must be >= 1");
  if (shape_size(shape) != n)
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(n) + " values");
}
}  // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double fill) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, fill));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  check_shape(shape, values.size());
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->value = std::move(values);
  return Tensor(std::move(d));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return impl_ ? impl_->shape : empty;
}

std::size_t Tensor::rows() const { return shape().empty() ? 0 : shape()[0]; }

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.empty()) return 0;
  return s.size() == 1 ? 1 : s[1];
}

std::span<const double> Tensor::data() const { return impl_->value; }
std::span<double> Tensor::mutable_data() { return impl_->value; }

std::span<const double> Tensor::grad() const {
  if (impl_->grad.size() != impl_->value.size()) impl_->grad.assign(impl_->value.size(), 0.0);
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.size() != impl_->value.size()) impl_->grad.assign(impl_->value.size(), 0.0);
  return impl_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return impl_->value[0];
}

void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

void Tensor::zero_grad() { impl_->grad.assign(impl_->value.size(), 0.0); }

Tensor Tensor::clone() const {
  Tensor t = from(impl_->shape, impl_->value);
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> rule) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(rule)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) throw UsageError("backward requires a scalar loss");
  if (!loss.requires_grad()) throw UsageError("backward on a tensor that was not recorded");

  std::unordered_set<const TensorData*> seen;
  auto reset = [&](const Tensor& t) {
    if (t.requires_grad() && seen.insert(&t.node()).second) t.node().grad.assign(t.size(), 0.0);
  };
  for (const auto& e : entries_) {
    for (const auto& in : e.inputs) reset(in);
    reset(e.output);
  }
  reset(loss);
  loss.node().grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->rule();
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

namespace {
template <class T>
T read_pod(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IngestionError("unexpected end of binary stream");
  return v;
}
}  // namespace

std::uint32_t read_u32(std::istream& in) { return read_pod<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_pod<std::uint64_t>(in); }
double read_f64(std::istream& in) { return read_pod<double>(in); }

std::string read_string(std::istream& in) {
  const auto n = read_u32(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw IngestionError("unexpected end of binary stream");
  return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u32(out, static_cast<std::uint32_t>(t.ndim()));
  for (auto e : t.shape()) write_u64(out, e);
  out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
  const auto rank = read_u32(in);
  if (rank == 0 || rank > 8) throw IngestionError("bad tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = read_u64(in);
  std::vector<double> values(shape_size(shape));
  if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
    throw IngestionError("truncated tensor payload");
  return Tensor::from(std::move(shape), std::move(values));
}

}  // namespace txnlink::nd
