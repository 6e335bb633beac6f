#pragma once

// Dense tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Every operation below builds a
// new node that remembers its parents when any input requires a gradient; the
// graph lives exactly as long as the tensors that reference it. Only rank 1-3
// tensors are used and there is no implicit broadcasting: row-wise bias,
// per-token reductions and head splitting are explicit operations.
//
// Values are stored and reduced in double precision. Every operation checks
// its output for NaN/Inf and throws std::domain_error naming the operation.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace store {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor eye(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Writable storage; only permitted on leaves (parameters and inputs).
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat) const { return values()[flat]; }

  bool requires_grad() const;
  bool is_leaf() const;
  const char* op_name() const;

  // Leaf copy of the current values, disconnected from any graph.
  Tensor detach(bool requires_grad = false) const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Gradients of a scalar `loss` with respect to each leaf in `params`.
//
// Intermediate gradient buffers are zeroed at the start of every call, so the
// same graph may be differentiated repeatedly (e.g. for different parameter
// sets); it is released when the last Tensor referencing it goes away.
// Throws std::invalid_argument for a non-scalar loss, for a param that is not
// a requires_grad leaf, and for a param the loss does not depend on.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params);
std::vector<Tensor> grad(const Tensor& loss, std::initializer_list<Tensor> params);

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor square(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// x[..., n] + b[n], b broadcast over all leading positions.
Tensor add_bias(const Tensor& x, const Tensor& b);

// Forward identity; contributes exactly zero gradient to `x`.
Tensor stop_gradient(const Tensor& x);

// ---- linear algebra --------------------------------------------------------

// a[..., k] x b[k, n] -> [..., n]; leading dims of `a` are flattened.
Tensor matmul(const Tensor& a, const Tensor& b);
// a[g, m, k] x b[g, k, n] (or b[g, n, k] when transpose_b) -> [g, m, n].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// x[n, h, d] -> [n, d], mean over the middle axis.
Tensor mean_tokens(const Tensor& x);
// x[..., n] -> [...], sum over the last axis.
Tensor sum_last(const Tensor& x);

// ---- normalization ---------------------------------------------------------

// Softmax over the last axis.
Tensor softmax(const Tensor& x);
inline constexpr double kLayerNormEps = 1e-5;
// Per-row normalization over the last axis followed by gamma/beta affine.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);
// Rows of x[r, n] divided by their L2 norm; a zero row is an error.
Tensor normalize_rows(const Tensor& x);

// ---- structure -------------------------------------------------------------

// Concatenation along the last axis; all other dims must agree.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
// Stack rank-2 [n, d] tensors into [n, parts, d].
Tensor stack_tokens(std::span<const Tensor> parts);
Tensor slice_last(const Tensor& x, std::size_t offset, std::size_t length);
// table[v, d] gathered at `rows` -> [rows.size(), d].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
// x[n, h, heads * dh] -> [n * heads, h, dh] and back.
Tensor split_heads(const Tensor& x, std::size_t heads);
Tensor merge_heads(const Tensor& x, std::size_t heads);

// ---- losses ----------------------------------------------------------------

inline constexpr double kProbClip = 1e-7;
// Mean of -[y ln p + (1 - y) ln(1 - p)] with p clipped to [1e-7, 1 - 1e-7].
Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> labels);

// ---- extension point -------------------------------------------------------

using BackwardFn = std::function<void(detail::Node&)>;
// Builds a result node; parents are recorded (and `backward` kept) only when
// one of them requires a gradient. Used by fused ops in other modules.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::initializer_list<Tensor> parents, BackwardFn backward);

}  // namespace store
