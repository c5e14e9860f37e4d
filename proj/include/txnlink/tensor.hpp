#pragma once

// Dense row-major float64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Every differentiable op
// takes the Tape it records onto as its first argument; ops whose inputs do
// not require gradients are evaluated but not recorded.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace txnlink::nd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double fill);
  static Tensor from(Shape shape, std::vector<double> values);
  /// Leaf tensor that collects gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t size() const { return impl_ ? impl_->value.size() : 0; }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Writable view for optimizers and initializers. Never call on a tensor
  /// that a live tape still references.
  std::span<double> mutable_data();
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on);
  void zero_grad();
  /// Deep copy with no gradient history.
  Tensor clone() const;

  TensorData& node() const { return *impl_; }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorData> impl_;
};

/// Ordered record of differentiable operations.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> rule);

  /// Reverse sweep from a scalar loss. Gradients of every tensor referenced
  /// on the tape are zeroed first, then accumulated.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> rule;
  };
  bool recording_;
  std::vector<Entry> entries_;
};

// Serialization: u32 rank, u64 extents, then float64 values, all little-endian.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_string(std::ostream& out, const std::string& s);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in);

}  // namespace txnlink::nd
