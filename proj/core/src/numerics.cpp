#include "unist/numerics.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace unist::nn {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::size_t rows_of(const Shape& s) {
  if (s.size() < 2) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

std::size_t cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw std::invalid_argument(std::string(op) + ": " + what);
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                " does not match " +
                                std::to_string(data.size()) + " values");
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> data, bool requires_grad) {
  return from({rows, cols}, std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::size_t Tensor::rows() const { return rows_of(node_->shape); }
std::size_t Tensor::cols() const { return cols_of(node_->shape); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

double Tensor::item() const {
  if (size() != 1)
    throw std::invalid_argument("Tensor::item on shape " + shape_str(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::row(std::size_t r) const {
  const auto c = cols();
  return {node_->value.begin() + static_cast<std::ptrdiff_t>(r * c),
          node_->value.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  auto t = detach();
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

void Tensor::backward() const {
  if (size() != 1)
    throw std::invalid_argument("backward() needs a single-element root, got " +
                                shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  std::vector<double*> sinks;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (!node->backward) continue;
    sinks.clear();
    for (auto& p : node->parents) {
      if (p->requires_grad) {
        p->ensure_grad();
        sinks.push_back(p->grad.data());
      } else {
        sinks.push_back(nullptr);
      }
    }
    node->ensure_grad();
    node->backward(node->grad, sinks);
  }
}

Tensor make_op(Shape shape, std::vector<double> value,
               std::span<const Tensor> inputs, BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
      return t.node_->requires_grad;
    });
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto& t : inputs) node->parents.push_back(t.node_);
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- operations -----------------------------------------------------------

namespace {

// C[m×n] += A[m×k] · B[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul",
          "inner dimensions differ: " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  const Tensor inputs[] = {a, b};
  return make_op(matrix_shape(m, n), std::move(out), inputs,
                 [a, b, m, k, n](std::span<const double> g, std::span<double* const> gi) {
                   if (gi[0]) gemm_nt(g.data(), b.data().data(), gi[0], m, n, k);
                   if (gi[1]) gemm_tn(a.data().data(), g.data(), gi[1], k, m, n);
                 });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  require(b.cols() == k, "matmul_nt",
          "inner dimensions differ: " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()) + "^T");
  std::vector<double> out(m * n, 0.0);
  gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  const Tensor inputs[] = {a, b};
  return make_op(matrix_shape(m, n), std::move(out), inputs,
                 [a, b, m, k, n](std::span<const double> g, std::span<double* const> gi) {
                   // dA = G·B, dB = Gᵀ·A
                   if (gi[0]) gemm_nn(g.data(), b.data().data(), gi[0], m, n, k);
                   if (gi[1]) gemm_tn(g.data(), a.data().data(), gi[1], n, m, k);
                 });
}

Tensor transpose(const Tensor& a) {
  const auto r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const Tensor inputs[] = {a};
  return make_op(matrix_shape(c, r), std::move(out), inputs,
                 [r, c](std::span<const double> g, std::span<double* const> gi) {
                   for (std::size_t i = 0; i < r; ++i)
                     for (std::size_t j = 0; j < c; ++j) gi[0][i * c + j] += g[j * r + i];
                 });
}

namespace {

Tensor elementwise(const Tensor& a, const Tensor& b, const char* name, int kind) {
  require(a.shape() == b.shape(), name,
          "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = kind == 0 ? x[i] + y[i] : kind == 1 ? x[i] - y[i] : x[i] * y[i];
  }
  const Tensor inputs[] = {a, b};
  return make_op(a.shape(), std::move(out), inputs,
                 [a, b, kind](std::span<const double> g, std::span<double* const> gi) {
                   const auto n = g.size();
                   if (kind == 2) {
                     const auto x = a.data(), y = b.data();
                     if (gi[0]) for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[i] * y[i];
                     if (gi[1]) for (std::size_t i = 0; i < n; ++i) gi[1][i] += g[i] * x[i];
                     return;
                   }
                   const double sign = kind == 1 ? -1.0 : 1.0;
                   if (gi[0]) for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[i];
                   if (gi[1]) for (std::size_t i = 0; i < n; ++i) gi[1][i] += sign * g[i];
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, "add", 0); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, "sub", 1); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, "mul", 2); }

Tensor add_row(const Tensor& a, const Tensor& row) {
  const auto r = a.rows(), c = a.cols();
  require(row.size() == c, "add_row",
          "row of " + std::to_string(row.size()) + " for " + std::to_string(c) +
              " columns");
  const auto x = a.data(), v = row.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + v[j];
  const Tensor inputs[] = {a, row};
  return make_op(a.shape(), std::move(out), inputs,
                 [r, c](std::span<const double> g, std::span<double* const> gi) {
                   if (gi[0]) for (std::size_t i = 0; i < r * c; ++i) gi[0][i] += g[i];
                   if (gi[1])
                     for (std::size_t i = 0; i < r; ++i)
                       for (std::size_t j = 0; j < c; ++j) gi[1][j] += g[i * c + j];
                 });
}

Tensor scale(const Tensor& a, double factor) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  const Tensor inputs[] = {a};
  return make_op(a.shape(), std::move(out), inputs,
                 [factor](std::span<const double> g, std::span<double* const> gi) {
                   for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * factor;
                 });
}

Tensor relu(const Tensor& a) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  const Tensor inputs[] = {a};
  return make_op(a.shape(), std::move(out), inputs,
                 [a](std::span<const double> g, std::span<double* const> gi) {
                   const auto x = a.data();
                   for (std::size_t i = 0; i < g.size(); ++i)
                     if (x[i] > 0.0) gi[0][i] += g[i];
                 });
}

Tensor gelu(const Tensor& a) {
  const auto x = a.data();
  std::vector<double> out(x.size()), slope(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-x[i] * std::numbers::sqrt2 / 2.0);
    const double pdf = std::exp(-0.5 * x[i] * x[i]) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    out[i] = x[i] * cdf;
    slope[i] = cdf + x[i] * pdf;
  }
  const Tensor inputs[] = {a};
  return make_op(a.shape(), std::move(out), inputs,
                 [slope = std::move(slope)](std::span<const double> g, std::span<double* const> gi) {
                   for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * slope[i];
                 });
}

Tensor softmax_rows(const Tensor& x) {
  const auto r = x.rows(), c = x.cols();
  require(c >= 1, "softmax_rows", "empty last dimension");
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double* o = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  auto probs = std::make_shared<std::vector<double>>(out);
  const Tensor inputs[] = {x};
  return make_op(x.shape(), std::move(out), inputs,
                 [probs, r, c](std::span<const double> g, std::span<double* const> gi) {
                   const auto& p = *probs;
                   for (std::size_t i = 0; i < r; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * p[i * c + j];
                     for (std::size_t j = 0; j < c; ++j)
                       gi[0][i * c + j] += p[i * c + j] * (g[i * c + j] - dot);
                   }
                 });
}

Tensor log_softmax_rows(const Tensor& x) {
  const auto r = x.rows(), c = x.cols();
  require(c >= 1, "log_softmax_rows", "empty last dimension");
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double* o = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) o[j] = row[j] - lz;
  }
  auto logp = std::make_shared<std::vector<double>>(out);
  const Tensor inputs[] = {x};
  return make_op(x.shape(), std::move(out), inputs,
                 [logp, r, c](std::span<const double> g, std::span<double* const> gi) {
                   const auto& lp = *logp;
                   for (std::size_t i = 0; i < r; ++i) {
                     double gs = 0.0;
                     for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
                     for (std::size_t j = 0; j < c; ++j)
                       gi[0][i * c + j] += g[i * c + j] - std::exp(lp[i * c + j]) * gs;
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const auto r = x.rows(), c = x.cols();
  require(gain.size() == c && bias.size() == c, "layer_norm",
          "gain/bias must have " + std::to_string(c) + " entries");
  const auto in = x.data(), gv = gain.data(), bv = bias.data();
  std::vector<double> out(in.size());
  auto xhat = std::make_shared<std::vector<double>>(in.size());
  auto inv_std = std::make_shared<std::vector<double>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * gv[j] + bv[j];
    }
  }
  const Tensor inputs[] = {x, gain, bias};
  return make_op(x.shape(), std::move(out), inputs,
                 [gain, xhat, inv_std, r, c](std::span<const double> g,
                                             std::span<double* const> gi) {
                   const auto gv = gain.data();
                   const auto& h = *xhat;
                   const double n = static_cast<double>(c);
                   for (std::size_t i = 0; i < r; ++i) {
                     const double* gr = g.data() + i * c;
                     const double* hr = h.data() + i * c;
                     if (gi[1]) for (std::size_t j = 0; j < c; ++j) gi[1][j] += gr[j] * hr[j];
                     if (gi[2]) for (std::size_t j = 0; j < c; ++j) gi[2][j] += gr[j];
                     if (!gi[0]) continue;
                     double s1 = 0.0, s2 = 0.0;
                     for (std::size_t j = 0; j < c; ++j) {
                       const double dh = gr[j] * gv[j];
                       s1 += dh;
                       s2 += dh * hr[j];
                     }
                     const double is = (*inv_std)[i];
                     for (std::size_t j = 0; j < c; ++j) {
                       const double dh = gr[j] * gv[j];
                       gi[0][i * c + j] += is * (dh - s1 / n - hr[j] * s2 / n);
                     }
                   }
                 });
}

std::size_t conv1d_output_length(std::size_t length, std::size_t stride) {
  return (length + stride - 1) / stride;
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride) {
  require(stride >= 1, "conv1d", "stride must be >= 1");
  const auto t_in = x.rows(), c_in = x.cols();
  const auto c_out = weight.cols();
  require(weight.rows() % c_in == 0, "conv1d",
          "weight rows " + std::to_string(weight.rows()) +
              " not a multiple of input channels " + std::to_string(c_in));
  const auto k = weight.rows() / c_in;
  require(k % 2 == 1, "conv1d", "kernel width must be odd");
  require(bias.size() == c_out, "conv1d", "bias size mismatch");
  const auto t_out = conv1d_output_length(t_in, stride);
  // Padding chosen so that output frame i is centred on input frame i·stride.
  const auto half = static_cast<std::ptrdiff_t>(k / 2);

  // Unfolded input: t_out × (k·c_in).
  auto cols = std::make_shared<std::vector<double>>(t_out * k * c_in, 0.0);
  const auto xv = x.data();
  for (std::size_t i = 0; i < t_out; ++i) {
    for (std::size_t tap = 0; tap < k; ++tap) {
      const auto src = static_cast<std::ptrdiff_t>(i * stride) +
                       static_cast<std::ptrdiff_t>(tap) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
      std::copy_n(xv.data() + static_cast<std::size_t>(src) * c_in, c_in,
                  cols->data() + (i * k + tap) * c_in);
    }
  }
  std::vector<double> out(t_out * c_out, 0.0);
  gemm_nn(cols->data(), weight.data().data(), out.data(), t_out, k * c_in, c_out);
  const auto bv = bias.data();
  for (std::size_t i = 0; i < t_out; ++i)
    for (std::size_t j = 0; j < c_out; ++j) out[i * c_out + j] += bv[j];

  const Tensor inputs[] = {x, weight, bias};
  return make_op(matrix_shape(t_out, c_out), std::move(out), inputs,
                 [weight, cols, t_in, t_out, c_in, c_out, k, stride, half](
                     std::span<const double> g, std::span<double* const> gi) {
                   const auto kc = k * c_in;
                   if (gi[1]) gemm_tn(cols->data(), g.data(), gi[1], kc, t_out, c_out);
                   if (gi[2])
                     for (std::size_t i = 0; i < t_out; ++i)
                       for (std::size_t j = 0; j < c_out; ++j) gi[2][j] += g[i * c_out + j];
                   if (!gi[0]) return;
                   std::vector<double> dcols(t_out * kc, 0.0);
                   gemm_nt(g.data(), weight.data().data(), dcols.data(), t_out, c_out, kc);
                   for (std::size_t i = 0; i < t_out; ++i) {
                     for (std::size_t tap = 0; tap < k; ++tap) {
                       const auto src = static_cast<std::ptrdiff_t>(i * stride) +
                                        static_cast<std::ptrdiff_t>(tap) - half;
                       if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_in)) continue;
                       double* dst = gi[0] + static_cast<std::size_t>(src) * c_in;
                       const double* from = dcols.data() + (i * k + tap) * c_in;
                       for (std::size_t c = 0; c < c_in; ++c) dst[c] += from[c];
                     }
                   }
                 });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  const auto v = table.rows(), d = table.cols();
  std::vector<int> idx(ids.begin(), ids.end());
  for (int id : idx)
    require(id >= 0 && static_cast<std::size_t>(id) < v, "gather_rows",
            "id " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
  std::vector<double> out(idx.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
  const Tensor inputs[] = {table};
  const auto n = idx.size();
  return make_op(matrix_shape(n, d), std::move(out), inputs,
                 [idx = std::move(idx), d](std::span<const double> g,
                                           std::span<double* const> gi) {
                   for (std::size_t i = 0; i < idx.size(); ++i) {
                     double* dst = gi[0] + static_cast<std::size_t>(idx[i]) * d;
                     for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
                   }
                 });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  const auto r = x.rows(), c = x.cols();
  require(begin <= end && end <= c, "slice_cols", "range out of bounds");
  const auto w = end - begin;
  std::vector<double> out(r * w);
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xv.data() + i * c + begin, w, out.data() + i * w);
  const Tensor inputs[] = {x};
  return make_op(matrix_shape(r, w), std::move(out), inputs,
                 [r, c, w, begin](std::span<const double> g, std::span<double* const> gi) {
                   for (std::size_t i = 0; i < r; ++i)
                     for (std::size_t j = 0; j < w; ++j) gi[0][i * c + begin + j] += g[i * w + j];
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  const auto r = x.rows(), c = x.cols();
  require(begin <= end && end <= r, "slice_rows", "range out of bounds");
  const auto xv = x.data();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          xv.begin() + static_cast<std::ptrdiff_t>(end * c));
  const Tensor inputs[] = {x};
  return make_op(matrix_shape(end - begin, c), std::move(out), inputs,
                 [begin, c](std::span<const double> g, std::span<double* const> gi) {
                   for (std::size_t i = 0; i < g.size(); ++i) gi[0][begin * c + i] += g[i];
                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const auto r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rows() == r, "concat_cols", "row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pv.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  return make_op(matrix_shape(r, total), std::move(out), parts,
                 [widths, r, total](std::span<const double> g, std::span<double* const> gi) {
                   std::size_t offset = 0;
                   for (std::size_t k = 0; k < widths.size(); ++k) {
                     if (gi[k])
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < widths[k]; ++j)
                           gi[k][i * widths[k] + j] += g[i * total + offset + j];
                     offset += widths[k];
                   }
                 });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const Tensor inputs[] = {x};
  return make_op({}, {s}, inputs,
                 [n = x.size()](std::span<const double> g, std::span<double* const> gi) {
                   for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[0];
                 });
}

Tensor mean(const Tensor& x) {
  require(x.size() > 0, "mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  require(p < 1.0, "dropout", "rate must be < 1");
  std::vector<double> mask(x.size());
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = rng.bernoulli(p) ? 0.0 : keep;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

// ---- ParameterStore -------------------------------------------------------

Tensor& ParameterStore::add(std::string name, Tensor value) {
  if (index_.count(name))
    throw std::invalid_argument("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) > 0;
}

const Tensor& ParameterStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end())
    throw std::out_of_range("unknown parameter: " + std::string(name));
  return entries_[it->second].second;
}

Tensor& ParameterStore::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& [name, t] : entries_) out.add(name, t.clone());
  return out;
}

void ParameterStore::round_to_float() {
  for (auto& [_, t] : entries_)
    for (auto& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
}

bool ParameterStore::same_layout(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second.shape() != other.entries_[i].second.shape()) return false;
  }
  return true;
}

// ---- checkpoint I/O -------------------------------------------------------

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const unsigned char> in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

std::uint32_t crc_of(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const ParameterStore& store) {
  std::vector<unsigned char> out;
  for (const auto& [name, t] : store.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  put_u32(out, crc_of(out));
  return out;
}

ParameterStore deserialize_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4) throw std::runtime_error("checkpoint truncated");
  const auto body = bytes.first(bytes.size() - 4);
  std::size_t tail = bytes.size() - 4;
  if (get_u32(bytes, tail) != crc_of(body))
    throw std::runtime_error("checkpoint CRC mismatch");
  ParameterStore store;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const auto name_len = get_u32(body, pos);
    if (pos + name_len > body.size()) throw std::runtime_error("checkpoint truncated");
    std::string name(reinterpret_cast<const char*>(body.data() + pos), name_len);
    pos += name_len;
    const auto rank = get_u32(body, pos);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(body, pos);
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = std::bit_cast<float>(get_u32(body, pos));
    store.add(std::move(name), Tensor::from(std::move(shape), std::move(values), true));
  }
  return store;
}

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(store);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// ---- initialization and gradient checking ---------------------------------

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform_real(-r, r);
  return Tensor::matrix(fan_in, fan_out, std::move(v), true);
}

std::vector<double> finite_difference_grad(const std::function<double()>& f,
                                           Tensor& wrt, double step) {
  std::vector<std::size_t> all(wrt.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return finite_difference_grad(f, wrt, all, step);
}

std::vector<double> finite_difference_grad(const std::function<double()>& f,
                                           Tensor& wrt,
                                           std::span<const std::size_t> indices,
                                           double step) {
  NoGradGuard guard;
  std::vector<double> out;
  out.reserve(indices.size());
  auto data = wrt.mutable_data();
  for (auto i : indices) {
    const double saved = data[i];
    data[i] = saved + step;
    const double up = f();
    data[i] = saved - step;
    const double down = f();
    data[i] = saved;
    out.push_back((up - down) / (2.0 * step));
  }
  return out;
}

double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor) {
  if (a.size() != b.size())
    throw std::invalid_argument("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace unist::nn
