#pragma once

// Dense row-major tensors with tape-free reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a shared node. Operations whose inputs
// require gradients record their parents and a backward closure; backward()
// walks the resulting DAG once in reverse topological order. Nothing is
// recorded when no input requires gradients, so read-only inference on a
// frozen model allocates only output buffers and is safe to run from several
// threads at once.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace uat {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Two-dimensional view helpers; a 1-D tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return node_->data; }
  // Only for leaves (parameters updated by an optimizer, test perturbations).
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Deep copy of the values as a fresh leaf.
  Tensor detach(bool requires_grad = false) const;

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

// Populates grad buffers of every requires_grad tensor reachable from loss.
// loss must hold exactly one element.
template <typename T>
void backward(const Tensor<T>& loss);

// ---- operations -----------------------------------------------------------
// All operations interpret tensors as matrices (rows x cols); 1-D tensors are
// row vectors. Shape violations throw uat::Error with ErrorCode::kShapeMismatch.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);  // [m,k]x[k,n]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);  // [m,k]x[n,k]^T
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
// a [m,n] + bias [n] broadcast over rows.
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);
// Row-wise softmax, max-subtracted.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double epsilon);
// Gathers rows of table at ids; also used for embedding lookup.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t count);
template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
// Mean over rows of -log softmax(logits)[row, target[row]], via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);

// Converts precision; the result is a fresh leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t, bool requires_grad = false) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(out), requires_grad);
}

}  // namespace uat
