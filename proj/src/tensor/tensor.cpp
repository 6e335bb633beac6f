#include "store/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace store {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty() || shape.size() > 3) {
    throw std::invalid_argument("tensor: rank must be 1, 2 or 3, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw std::logic_error("tensor: use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return from_values({1}, {value}); }

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from_values({n, n}, std::move(v));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw std::out_of_range("tensor: axis out of range");
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::span<const double> Tensor::values() const { return checked(node_).value; }

std::span<double> Tensor::mutable_values() {
  if (!checked(node_).leaf) throw std::logic_error("tensor: only leaves may be written in place");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("tensor: item() on a non-scalar " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }
bool Tensor::is_leaf() const { return checked(node_).leaf; }
const char* Tensor::op_name() const { return checked(node_).op; }

Tensor Tensor::detach(bool requires_grad) const {
  return Tensor(make_leaf(shape(), std::vector<double>(values().begin(), values().end()), requires_grad));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::initializer_list<Tensor> parents, BackwardFn backward) {
  for (double v : value) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite value");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  node->op = op;
  for (const Tensor& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("grad: loss must be scalar, got " + shape_str(loss.shape()));
  }
  for (const Tensor& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw std::invalid_argument("grad: parameters must be leaves with requires_grad");
    }
  }

  // Post-order DFS over nodes that require gradients.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  if (loss.requires_grad()) {
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  for (const Tensor& p : params) {
    if (!seen.count(p.node().get())) {
      throw std::invalid_argument("grad: parameter " + shape_str(p.shape()) +
                                  " is not part of the loss graph");
    }
  }

  for (detail::Node* node : order) node->grad.assign(node->value.size(), 0.0);
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }

  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.push_back(Tensor::from_values(p.shape(), p.node()->grad));
  return out;
}

std::vector<Tensor> grad(const Tensor& loss, std::initializer_list<Tensor> params) {
  return grad(loss, std::span<const Tensor>(params.begin(), params.size()));
}

}  // namespace store
