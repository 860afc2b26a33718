#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace weatherseg {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const Tape* tape = nullptr;

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Dense row-major tensor of doubles.
///
/// A Tensor is a shared handle: copies alias the same storage and gradient
/// buffer, which is what lets parameters be updated in place after backward.
/// Use clone() for an independent copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  // Direct write access for optimizer and EMA updates; never recorded.
  std::span<double> mutable_values() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  // Empty for tensors that do not require grad.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;
  bool shares_storage_with(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Define-by-run record of differentiable operations.
///
/// Constructing a Tape makes it the active recorder for the current thread
/// until it is destroyed; nested tapes shadow outer ones. Operations executed
/// while no tape is active produce constants.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Propagates d(loss)/d(.) in strict reverse creation order. Leaf gradients
  // accumulate; intermediate gradients are reset on every call.
  void backward(const Tensor& loss);

  // Zeroes every gradient buffer the tape has touched. Values are untouched.
  void zero_grad();

  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
  void record(const std::shared_ptr<detail::Node>& node);

  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<std::shared_ptr<detail::Node>> leaves_;
  Tape* previous_;
};

/// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

// Builds an op output. Records it on the active tape when any input requires
// grad; `backward` then receives the output node and must accumulate into the
// parents that require grad.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);

// x [..×D] + bias [D]
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& x, Shape shape);

// Along the last axis, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

// Per-row normalisation over the last axis with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t width);
// Stacks 2-D tensors with equal column counts.
Tensor concat_rows(const std::vector<Tensor>& parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// [B×C] -> [B*times × C], row b repeated `times` consecutive times.
Tensor repeat_rows(const Tensor& x, std::size_t times);
// [B*G × D] -> [B×D], mean over each run of G consecutive rows.
Tensor segment_mean(const Tensor& x, std::size_t group);

// Zero-padded 3×3 neighbourhood mix over a [B×H×W×D] map with one kernel per
// feature (kernel [D×9], row-major taps). The kernel is a constant.
Tensor spatial_mix(const Tensor& map, const Tensor& kernel);

// Mean of -logp[i, labels[i]] over rows whose label != ignore_label. Returns a
// zero scalar when no row qualifies.
Tensor masked_nll(const Tensor& logp, std::span<const int> labels, int ignore_label);

}  // namespace weatherseg
