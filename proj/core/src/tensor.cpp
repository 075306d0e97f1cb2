#include "uat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "uat/error.hpp"

namespace uat {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + detail);
}

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

// Creates the output node; wires autodiff only when some input needs it.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any = false;
  for (const Tensor<T>* in : inputs) any = any || in->requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const Tensor<T>* in : inputs) node->parents.push_back(in->node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
bool needs(const detail::Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
  if (shape_numel(shape) != data.size()) {
    shape_error("tensor", "shape " + shape_str(shape) + " holds " +
                              std::to_string(shape_numel(shape)) +
                              " elements but data has " + std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::size_t rows, std::size_t cols, std::vector<T> data,
                            bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(data), requires_grad);
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  const Shape& s = node_->shape;
  if (s.empty()) return 1;
  if (s.size() == 1) return 1;
  return shape_numel(s) / s.back();
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  const Shape& s = node_->shape;
  return s.empty() ? 1 : s.back();
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) shape_error("item", "tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach(bool requires_grad) const {
  return Tensor(node_->shape, node_->data, requires_grad);
}

// ---- backward -------------------------------------------------------------

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorCode::kShapeMismatch,
                "backward: loss must be a scalar, got " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order; each node once.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<const detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.contains(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>& node = **it;
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
  }
}

// ---- ops ------------------------------------------------------------------

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstView = Eigen::Map<const RowMajor<T>>;
template <typename T>
using View = Eigen::Map<RowMajor<T>>;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    shape_error("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  View<T>(out.data(), m, n).noalias() = ConstView<T>(a.data().data(), m, k) * ConstView<T>(b.data().data(), k, n);
  return make_result<T>(Shape{m, n}, std::move(out), {&a, &b},
                        [m, k, n](detail::Node<T>& self) {
    const ConstView<T> G(self.grad.data(), m, n);
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (needs(self, 0)) {
      View<T>(pa->grad_buffer().data(), m, k).noalias() += G * ConstView<T>(pb->data.data(), k, n).transpose();
    }
    if (needs(self, 1)) {
      View<T>(pb->grad_buffer().data(), k, n).noalias() += ConstView<T>(pa->data.data(), m, k).transpose() * G;
    }
  });
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    shape_error("matmul_nt", "inner dimensions differ: " + shape_str(a.shape()) + " x " +
                                 shape_str(b.shape()) + "^T");
  }
  std::vector<T> out(m * n);
  View<T>(out.data(), m, n).noalias() =
      ConstView<T>(a.data().data(), m, k) * ConstView<T>(b.data().data(), n, k).transpose();
  return make_result<T>(Shape{m, n}, std::move(out), {&a, &b},
                        [m, k, n](detail::Node<T>& self) {
    const ConstView<T> G(self.grad.data(), m, n);
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    if (needs(self, 0)) {
      View<T>(pa->grad_buffer().data(), m, k).noalias() += G * ConstView<T>(pb->data.data(), n, k);
    }
    if (needs(self, 1)) {
      View<T>(pb->grad_buffer().data(), n, k).noalias() += G.transpose() * ConstView<T>(pa->data.data(), m, k);
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    shape_error("add", "operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!needs(self, p)) continue;
      auto& g = self.parents[p]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.numel() != n) {
    shape_error("add_row", "bias " + shape_str(bias.shape()) + " does not match " +
                               std::to_string(n) + " columns");
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] + bias.data()[j];
  return make_result<T>(a.shape(), std::move(out), {&a, &bias},
                        [m, n](detail::Node<T>& self) {
    if (needs(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (needs(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    shape_error("mul", "operands " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](detail::Node<T>& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    if (needs(self, 0)) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B[i];
    }
    if (needs(self, 1)) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {&a}, [factor](detail::Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  // Exact form x * Phi(x).
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.data()[i];
    out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  return make_result<T>(a.shape(), std::move(out), {&a}, [inv_sqrt2](detail::Node<T>& self) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const auto& X = self.parents[0]->data;
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = X[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
      g[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.data().data() + i * n;
    T* y = out.data() + i * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  return make_result<T>(a.shape(), std::move(out), {&a}, [m, n](detail::Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      const T* y = self.data.data() + i * n;
      const T* dy = self.grad.data() + i * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double epsilon) {
  const std::size_t m = a.rows(), n = a.cols();
  if (gamma.numel() != n || beta.numel() != n) {
    shape_error("layer_norm", "affine terms " + shape_str(gamma.shape()) + "/" +
                                  shape_str(beta.shape()) + " do not match " +
                                  std::to_string(n) + " features");
  }
  std::vector<T> out(a.numel());
  // Saved per-row normalized values and inverse std for backward.
  auto xhat = std::make_shared<std::vector<T>>(a.numel());
  auto inv_std = std::make_shared<std::vector<T>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.data().data() + i * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + T(epsilon));
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (x[j] - mu) * is;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gamma.data()[j] + beta.data()[j];
    }
  }
  return make_result<T>(a.shape(), std::move(out), {&a, &gamma, &beta},
                        [m, n, xhat, inv_std](detail::Node<T>& self) {
    const T* dy = self.grad.data();
    const auto& G = self.parents[1]->data;
    if (needs(self, 1)) {
      auto& gg = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gg[j] += dy[i * n + j] * (*xhat)[i * n + j];
    }
    if (needs(self, 2)) {
      auto& gb = self.parents[2]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
    }
    if (needs(self, 0)) {
      auto& gx = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        T mean_d = 0, mean_dx = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T d = dy[i * n + j] * G[j];
          mean_d += d;
          mean_dx += d * (*xhat)[i * n + j];
        }
        mean_d /= T(n);
        mean_dx /= T(n);
        for (std::size_t j = 0; j < n; ++j) {
          const T d = dy[i * n + j] * G[j];
          gx[i * n + j] += (*inv_std)[i] * (d - mean_d - (*xhat)[i * n + j] * mean_dx);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::size_t> ids) {
  const std::size_t rows = table.rows(), n = table.cols();
  std::vector<T> out(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      shape_error("gather_rows", "index " + std::to_string(ids[i]) + " out of range for " +
                                     std::to_string(rows) + " rows");
    }
    std::copy_n(table.data().data() + ids[i] * n, n, out.data() + i * n);
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return make_result<T>(Shape{ids.size(), n}, std::move(out), {&table},
                        [n, saved = std::move(saved)](detail::Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < saved.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) g[saved[i] * n + j] += self.grad[i * n + j];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t count) {
  const std::size_t m = a.rows(), n = a.cols();
  if (begin + count > n) {
    shape_error("slice_cols", "range [" + std::to_string(begin) + "," +
                                  std::to_string(begin + count) + ") exceeds " +
                                  std::to_string(n) + " columns");
  }
  std::vector<T> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.data().data() + i * n + begin, count, out.data() + i * count);
  return make_result<T>(Shape{m, count}, std::move(out), {&a},
                        [m, n, begin, count](detail::Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + begin + j] += self.grad[i * count + j];
  });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) shape_error("concat_cols", "no operands");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      shape_error("concat_cols", "row counts differ: " + std::to_string(m) + " vs " +
                                     std::to_string(p.rows()));
    }
    n += p.cols();
  }
  std::vector<T> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.data().data() + i * c, c, out.data() + i * n + offset);
    offset += c;
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = Shape{m, n};
  node->data = std::move(out);
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward_fn = [m, n](detail::Node<T>& self) {
      std::size_t off = 0;
      for (auto& parent : self.parents) {
        const std::size_t c = parent->shape.back();
        if (parent->requires_grad) {
          auto& g = parent->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * n + off + j];
        }
        off += c;
      }
    };
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) {
    shape_error("cross_entropy", std::to_string(targets.size()) + " targets for " +
                                     std::to_string(m) + " rows");
  }
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  T total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) {
      shape_error("cross_entropy", "target " + std::to_string(targets[i]) + " out of range for " +
                                       std::to_string(n) + " classes");
    }
    const T* x = logits.data().data() + i * n;
    const T mx = *std::max_element(x, x + n);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const T e = std::exp(x[j] - mx);
      (*probs)[i * n + j] = e;
      s += e;
    }
    for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] /= s;
    total += mx + std::log(s) - x[targets[i]];
  }
  std::vector<std::size_t> saved(targets.begin(), targets.end());
  return make_result<T>(Shape{1}, std::vector<T>{total / T(m)}, {&logits},
                        [m, n, probs, saved = std::move(saved)](detail::Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T scale_by = self.grad[0] / T(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T onehot = j == saved[i] ? T(1) : T(0);
        g[i * n + j] += scale_by * ((*probs)[i * n + j] - onehot);
      }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  return make_result<T>(Shape{1}, std::vector<T>{total}, {&a}, [](detail::Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / T(a.numel()));
}

#define UAT_INSTANTIATE(T)                                                              \
  template class Tensor<T>;                                                             \
  template void backward<T>(const Tensor<T>&);                                          \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> add_row<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                     \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                         \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                   double);                                             \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);    \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> concat_cols<T>(std::span<const Tensor<T>>);                        \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::size_t>);  \
  template Tensor<T> sum<T>(const Tensor<T>&);                                          \
  template Tensor<T> mean<T>(const Tensor<T>&);

UAT_INSTANTIATE(float)
UAT_INSTANTIATE(double)

#undef UAT_INSTANTIATE

}  // namespace uat
