#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrvit {

using Shape = std::vector<std::int64_t>;

/// Raised when operand extents are incompatible.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid hyper-parameters or configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A softmax row whose entries are all -inf (a fully masked window).
class DegenerateRowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A graph or window layout that cannot arise from a valid configuration.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major N-D array of doubles with an optional recorded graph for
/// reverse-mode differentiation. Copies share the underlying node.
class Tensor {
 public:
  struct Node;
  using BackwardFn = std::function<void(Node&)>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  /// Extent of axis `axis`; negative values count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  std::span<const double> data() const;
  /// Direct write access, used by initializers and the gradient checker.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse sweep from this tensor; a scalar output is seeded with 1.
  void backward() const;
  void backward(std::span<const double> seed) const;

  /// Same values, no graph history.
  Tensor detach() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(Shape, std::vector<double>,
                               std::initializer_list<Tensor>, BackwardFn);
  friend Tensor make_op_result(Shape, std::vector<double>,
                               const std::vector<Tensor>&, BackwardFn);

  std::shared_ptr<Node> node_;
};

struct Tensor::Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward_fn;

  /// Gradient buffer, zero-filled on first use.
  std::vector<double>& grad_buffer();
};

/// Builds an op output. History is recorded only when gradients are enabled
/// and at least one input requires them.
Tensor make_op_result(Shape shape, std::vector<double> values,
                      std::initializer_list<Tensor> inputs,
                      Tensor::BackwardFn backward);
Tensor make_op_result(Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs,
                      Tensor::BackwardFn backward);

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Operation tallies collected while a CountingScope is active.
struct OpCounter {
  std::int64_t macs = 0;
  std::int64_t elementwise = 0;
};

/// Routes MAC / elementwise tallies of ops on this thread into `counter`.
class CountingScope {
 public:
  explicit CountingScope(OpCounter& counter);
  ~CountingScope();
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  OpCounter* previous_;
};

void count_macs(std::int64_t n);
void count_elementwise(std::int64_t n);

}  // namespace hrvit
