#pragma once

// Dense float64 tensors with a reverse-mode gradient tape.
//
// Every op that sees an input requiring grad (while grad mode is on) records
// itself on the tape with a monotonically increasing sequence number. The
// sequence order is a topological order of the graph, so backward() simply
// replays the reachable part of the tape in reverse. Leaf gradients
// accumulate across backward() calls until zero_grad().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace duet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& out)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized like data iff requires_grad
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;  // empty for leaves

  bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  std::span<const double> grad() const;
  std::span<double> mutable_grad();

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  void zero_grad();

  double item() const;
  // Copy of the values without graph history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& impl() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the result of a differentiable op. The node is put on the tape only
// when grad mode is on and some input requires grad; `fn` receives the
// output node and must add into the grads of those parents that have one.
Tensor make_op(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
               detail::BackwardFn fn);
Tensor make_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
               detail::BackwardFn fn);

// Reverse sweep from a scalar loss. Throws std::invalid_argument for a
// non-scalar loss.
void backward(const Tensor& loss);

}  // namespace duet
