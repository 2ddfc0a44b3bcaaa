#include "duet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace duet {

namespace {

std::atomic<std::uint64_t> next_seq{1};
thread_local bool grad_mode = true;

detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw std::logic_error("use of an undefined tensor");
  return *node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->seq = next_seq.fetch_add(1, std::memory_order_relaxed);
  set_requires_grad(requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(int axis) const {
  const auto r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() { return checked(node_).data; }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

std::span<double> Tensor::mutable_grad() { return checked(node_).grad; }

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  auto& n = checked(node_);
  if (on && !n.is_leaf()) throw std::logic_error("requires_grad can only be set on leaf tensors");
  n.requires_grad = on;
  if (on) {
    if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
  } else {
    n.grad.clear();
    n.grad.shrink_to_fit();
  }
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty() || numel() == 0; }

void Tensor::zero_grad() {
  auto& n = checked(node_);
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(n.shape, n.data, false);
}

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

Tensor make_op(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
               detail::BackwardFn fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->seq = next_seq.fetch_add(1, std::memory_order_relaxed);
  bool needs = false;
  if (grad_mode) {
    for (const auto& in : inputs) needs = needs || checked(in.impl()).requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.impl());
    node->backward_fn = std::move(fn);
  }
  return Tensor(std::move(node));
}

Tensor make_op(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
               detail::BackwardFn fn) {
  return make_op(std::move(shape), std::move(data), std::vector<Tensor>(inputs), std::move(fn));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on an undefined tensor");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  detail::Node* root = loss.impl().get();
  if (!root->requires_grad) return;

  std::vector<detail::Node*> reachable;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    reachable.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(reachable.begin(), reachable.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  for (detail::Node* n : reachable) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  root->grad[0] += 1.0;
  for (detail::Node* n : reachable) {
    if (!n->is_leaf()) n->backward_fn(*n);
  }
}

}  // namespace duet
