#pragma once

// Dense tensors with tape-free reverse-mode differentiation. Every tensor that
// was produced by an operation keeps a reference to its inputs and a closure
// that maps the output gradient onto input gradients; backward() walks that
// graph in reverse topological order.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unist/rng.hpp"

namespace unist::nn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

// grad_in[i] is null when input i does not take a gradient.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<double* const> grad_in)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Rank-1 tensors read as a single row; rank-0 as 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data();
  double at(std::size_t r, std::size_t c) const;
  double item() const;
  std::vector<double> row(std::size_t r) const;

  bool requires_grad() const;
  // Empty until a backward pass reached this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Seeds d(self)/d(self) = 1; self must hold exactly one element.
  void backward() const;

  // Same storage, no history. Gradients stop here.
  Tensor detach() const;
  // Independent copy of the values (and requires_grad flag) with no history.
  Tensor clone() const;

  const void* identity() const { return node_.get(); }

 private:
  friend Tensor make_op(Shape, std::vector<double>, std::span<const Tensor>,
                        BackwardFn);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Builds an operation result. When gradient recording is off, or none of the
// inputs requires a gradient, the result is a constant and `backward` is
// dropped.
Tensor make_op(Shape shape, std::vector<double> value,
               std::span<const Tensor> inputs, BackwardFn backward);

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Adds a length-cols vector to every row.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
// x·Φ(x) with the exact normal CDF; smooth everywhere, unlike relu.
Tensor gelu(const Tensor& a);
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// Same-padded 1-D cross-correlation over time. x is T×C_in, weight is
// (K·C_in)×C_out laid out as [tap][in_channel], bias has C_out entries.
// Output length is ceil(T / stride).
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride);
std::size_t conv1d_output_length(std::size_t length, std::size_t stride);
// Rows of `table` selected by `ids`.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

// ---- parameters -----------------------------------------------------------

// Named model weights in insertion order.
class ParameterStore {
 public:
  Tensor& add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  void zero_grad();
  // Deep copy with fresh leaves.
  ParameterStore clone() const;
  // Round every value to the nearest float32, matching what a checkpoint holds.
  void round_to_float();
  bool same_layout(const ParameterStore& other) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binary checkpoint: per entry (u32 name length, name bytes, u32 rank,
// rank × u32 dims, float32 payload), little-endian, then a CRC32 of all
// preceding bytes.
std::vector<unsigned char> serialize_checkpoint(const ParameterStore& store);
ParameterStore deserialize_checkpoint(std::span<const unsigned char> bytes);
void save_checkpoint(const ParameterStore& store,
                     const std::filesystem::path& path);
ParameterStore load_checkpoint(const std::filesystem::path& path);

// Glorot-uniform initialization with r = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Central differences of a scalar function with respect to a leaf tensor.
std::vector<double> finite_difference_grad(const std::function<double()>& f,
                                           Tensor& wrt, double step = 1e-3);
std::vector<double> finite_difference_grad(const std::function<double()>& f,
                                           Tensor& wrt,
                                           std::span<const std::size_t> indices,
                                           double step = 1e-3);
// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6);

}  // namespace unist::nn
