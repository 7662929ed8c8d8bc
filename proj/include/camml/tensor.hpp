#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "camml/errors.hpp"

namespace camml {

struct Node;

// Transient-allocation accounting for tensor payload buffers. Deterministic
// given a deterministic op sequence, which is what the cost benchmark needs.
struct AllocStats {
  uint64_t live_bytes = 0;
  uint64_t peak_bytes = 0;
  uint64_t total_bytes = 0;
  void reset_peak() { peak_bytes = live_bytes; }
};
AllocStats& alloc_stats();

// Dense row-major f64 tensor with reverse-mode autodiff over a dynamically
// recorded graph. Copies share storage; the graph is freed by backward().
struct Tensor {
  std::vector<size_t> shape;
  std::shared_ptr<std::vector<double>> data;
  bool requires_grad = false;
  std::shared_ptr<std::vector<double>> grad;  // same length as data when present
  std::shared_ptr<Node> node;                 // null for leaves

  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<size_t> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<size_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor randn(std::vector<size_t> shape, std::mt19937_64& rng, double stdev,
                      bool requires_grad = false);

  bool defined() const { return static_cast<bool>(data); }
  size_t numel() const;
  size_t rank() const { return shape.size(); }
  // Rank-2 helpers; rank-1 tensors count as a single row.
  size_t rows() const;
  size_t cols() const;

  double& at(size_t i) { return (*data)[i]; }
  double at(size_t i) const { return (*data)[i]; }
  double& at(size_t r, size_t c) { return (*data)[r * cols() + c]; }
  double at(size_t r, size_t c) const { return (*data)[r * cols() + c]; }
  double scalar() const;

  void zero_grad() const;
  void ensure_grad();
};

struct Node {
  std::vector<Tensor> parents;
  std::vector<size_t> out_shape;
  std::shared_ptr<std::vector<double>> out_data;
  std::shared_ptr<std::vector<double>> out_grad;
  std::function<void(Node&)> backprop;
};

// Scoped switch that stops graph recording (inference / frozen paths).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

std::string shape_str(const std::vector<size_t>& shape);

// Core ops. All validate shapes before touching data and record backward
// closures when any input requires grad.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_rowwise(const Tensor& x, const Tensor& bias);
Tensor softmax(const Tensor& x, size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor gelu(const Tensor& x);
Tensor slice_rows(const Tensor& x, size_t begin, size_t count);
Tensor slice_cols(const Tensor& x, size_t begin, size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor sum(const Tensor& x);

// Multi-head scaled dot-product attention, scale 1/sqrt(d/heads). With
// causal=true position i attends only to positions <= i (requires Tq == Tk).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, size_t heads,
                 bool causal);

// Mean negative log-likelihood over positions where mask is true.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<bool>& mask);

// Reverse-mode pass from a scalar loss. Accumulates into leaf grads and
// frees the recorded graph.
void backward(const Tensor& loss);

// Named trainable-or-frozen tensor; name determines checkpoint placement.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

}  // namespace camml
