#include "camml/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace camml {

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<std::vector<double>> make_buffer(size_t n) {
  auto& stats = alloc_stats();
  stats.live_bytes += n * sizeof(double);
  stats.total_bytes += n * sizeof(double);
  stats.peak_bytes = std::max(stats.peak_bytes, stats.live_bytes);
  return std::shared_ptr<std::vector<double>>(new std::vector<double>(n, 0.0),
                                              [n](std::vector<double>* p) {
                                                alloc_stats().live_bytes -= n * sizeof(double);
                                                delete p;
                                              });
}

size_t shape_numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

bool want_grad(const Tensor& t) { return g_grad_enabled && t.requires_grad; }

// Allocates the output tensor and, when tracking, its node with the given
// parents. The node mirrors the output's buffers so backprop closures can
// reach them without creating a reference cycle.
Tensor make_out(std::vector<size_t> shape, std::vector<Tensor> parents,
                std::function<void(Node&)> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || want_grad(p);

  Tensor out;
  out.shape = std::move(shape);
  out.data = make_buffer(shape_numel(out.shape));
  out.requires_grad = rg;
  if (rg) {
    out.grad = make_buffer(out.data->size());
    out.node = std::make_shared<Node>();
    out.node->parents = std::move(parents);
    out.node->out_shape = out.shape;
    out.node->out_data = out.data;
    out.node->out_grad = out.grad;
    out.node->backprop = std::move(backprop);
  }
  return out;
}

void check_rank12(const Tensor& x, const char* op) {
  if (x.rank() == 0 || x.rank() > 2) {
    throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(x.shape));
  }
}

}  // namespace

AllocStats& alloc_stats() {
  thread_local AllocStats stats;
  return stats;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::string shape_str(const std::vector<size_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(std::vector<size_t> shape, bool requires_grad) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = make_buffer(shape_numel(t.shape));
  t.requires_grad = requires_grad;
  if (requires_grad) t.grad = make_buffer(t.data->size());
  return t;
}

Tensor Tensor::full(std::vector<size_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from(std::vector<size_t> shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  std::copy(values.begin(), values.end(), t.data->begin());
  return t;
}

Tensor Tensor::randn(std::vector<size_t> shape, std::mt19937_64& rng, double stdev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, stdev);
  for (auto& v : *t.data) v = dist(rng);
  return t;
}

size_t Tensor::numel() const { return data ? data->size() : 0; }

size_t Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() == 2) return shape[0];
  throw DimensionError("rows(): tensor is not rank 1 or 2: " + shape_str(shape));
}

size_t Tensor::cols() const {
  if (rank() == 1) return shape[0];
  if (rank() == 2) return shape[1];
  throw DimensionError("cols(): tensor is not rank 1 or 2: " + shape_str(shape));
}

double Tensor::scalar() const {
  if (numel() != 1) {
    throw DimensionError("scalar(): tensor has " + std::to_string(numel()) + " elements");
  }
  return (*data)[0];
}

void Tensor::zero_grad() const {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

void Tensor::ensure_grad() {
  if (requires_grad && !grad) grad = make_buffer(data->size());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: expected rank-2 inputs, got " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
  }
  if (a.shape[1] != b.shape[0]) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  }
  const size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = make_out({m, n}, {a, b}, [m, k, n](Node& nd) {
    const Tensor& pa = nd.parents[0];
    const Tensor& pb = nd.parents[1];
    const auto& g = *nd.out_grad;
    if (pa.requires_grad) {
      auto& ga = *pa.grad;
      const auto& bd = *pb.data;
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bd[p * n + j];
        }
    }
    if (pb.requires_grad) {
      auto& gb = *pb.grad;
      const auto& ad = *pa.data;
      for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
          const double aip = ad[i * k + p];
          if (aip == 0.0) continue;
          for (size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });

  const auto& ad = *a.data;
  const auto& bd = *b.data;
  auto& od = *out.data;
  for (size_t i = 0; i < m; ++i) {
    for (size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      if (aip == 0.0) continue;
      const size_t brow = p * n;
      const size_t orow = i * n;
      for (size_t j = 0; j < n; ++j) od[orow + j] += aip * bd[brow + j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) {
    throw DimensionError("transpose: expected rank-2 input, got " + shape_str(x.shape));
  }
  const size_t m = x.shape[0], n = x.shape[1];
  Tensor out = make_out({n, m}, {x}, [m, n](Node& nd) {
    const Tensor& px = nd.parents[0];
    if (!px.requires_grad) return;
    const auto& g = *nd.out_grad;
    auto& gx = *px.grad;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < m; ++j) gx[j * n + i] += g[i * m + j];
  });
  const auto& xd = *x.data;
  auto& od = *out.data;
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) od[j * m + i] = xd[i * n + j];
  return out;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw DimensionError(std::string(op) + ": shape mismatch: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_out(a.shape, {a, b}, [](Node& nd) {
    const auto& g = *nd.out_grad;
    for (int side = 0; side < 2; ++side) {
      const Tensor& p = nd.parents[side];
      if (!p.requires_grad) continue;
      auto& gp = *p.grad;
      for (size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
  });
  const auto& ad = *a.data;
  const auto& bd = *b.data;
  auto& od = *out.data;
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_out(a.shape, {a, b}, [](Node& nd) {
    const auto& g = *nd.out_grad;
    const Tensor& pa = nd.parents[0];
    const Tensor& pb = nd.parents[1];
    if (pa.requires_grad) {
      auto& gp = *pa.grad;
      for (size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    }
    if (pb.requires_grad) {
      auto& gp = *pb.grad;
      for (size_t i = 0; i < g.size(); ++i) gp[i] -= g[i];
    }
  });
  const auto& ad = *a.data;
  const auto& bd = *b.data;
  auto& od = *out.data;
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_out(a.shape, {a, b}, [](Node& nd) {
    const auto& g = *nd.out_grad;
    const Tensor& pa = nd.parents[0];
    const Tensor& pb = nd.parents[1];
    if (pa.requires_grad) {
      auto& gp = *pa.grad;
      const auto& other = *pb.data;
      for (size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * other[i];
    }
    if (pb.requires_grad) {
      auto& gp = *pb.grad;
      const auto& other = *pa.data;
      for (size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * other[i];
    }
  });
  const auto& ad = *a.data;
  const auto& bd = *b.data;
  auto& od = *out.data;
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
  return out;
}

Tensor scale(const Tensor& x, double s) {
  Tensor out = make_out(x.shape, {x}, [s](Node& nd) {
    const Tensor& px = nd.parents[0];
    if (!px.requires_grad) return;
    const auto& g = *nd.out_grad;
    auto& gx = *px.grad;
    for (size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
  const auto& xd = *x.data;
  auto& od = *out.data;
  for (size_t i = 0; i < od.size(); ++i) od[i] = s * xd[i];
  return out;
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  check_rank12(x, "add_rowwise");
  if (bias.rank() != 1 || bias.shape[0] != x.cols()) {
    throw DimensionError("add_rowwise: bias " + shape_str(bias.shape) + " does not match " +
                         shape_str(x.shape));
  }
  const size_t r = x.rows(), c = x.cols();
  Tensor out = make_out(x.shape, {x, bias}, [r, c](Node& nd) {
    const auto& g = *nd.out_grad;
    const Tensor& px = nd.parents[0];
    const Tensor& pb = nd.parents[1];
    if (px.requires_grad) {
      auto& gx = *px.grad;
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (pb.requires_grad) {
      auto& gb = *pb.grad;
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
  const auto& xd = *x.data;
  const auto& bd = *bias.data;
  auto& od = *out.data;
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) od[i * c + j] = xd[i * c + j] + bd[j];
  return out;
}

Tensor softmax(const Tensor& x, size_t axis) {
  check_rank12(x, "softmax");
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape));
  }
  // Normalize treating the tensor as lanes along `axis`.
  const bool along_cols = (x.rank() == 1) || (axis == 1);
  const size_t lanes = along_cols ? x.rows() : x.cols();
  const size_t width = along_cols ? x.cols() : x.rows();
  const size_t lane_stride = along_cols ? x.cols() : 1;
  const size_t elem_stride = along_cols ? 1 : x.cols();

  Tensor out = make_out(x.shape, {x}, [lanes, width, lane_stride, elem_stride](Node& nd) {
    const Tensor& px = nd.parents[0];
    if (!px.requires_grad) return;
    const auto& g = *nd.out_grad;
    const auto& y = *nd.out_data;
    auto& gx = *px.grad;
    for (size_t l = 0; l < lanes; ++l) {
      const size_t base = l * lane_stride;
      double dot = 0.0;
      for (size_t i = 0; i < width; ++i) {
        const size_t idx = base + i * elem_stride;
        dot += g[idx] * y[idx];
      }
      for (size_t i = 0; i < width; ++i) {
        const size_t idx = base + i * elem_stride;
        gx[idx] += y[idx] * (g[idx] - dot);
      }
    }
  });

  const auto& xd = *x.data;
  auto& od = *out.data;
  for (size_t l = 0; l < lanes; ++l) {
    const size_t base = l * lane_stride;
    double mx = xd[base];
    for (size_t i = 1; i < width; ++i) mx = std::max(mx, xd[base + i * elem_stride]);
    double total = 0.0;
    for (size_t i = 0; i < width; ++i) {
      const size_t idx = base + i * elem_stride;
      od[idx] = std::exp(xd[idx] - mx);
      total += od[idx];
    }
    for (size_t i = 0; i < width; ++i) od[base + i * elem_stride] /= total;
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  check_rank12(x, "layer_norm");
  const size_t r = x.rows(), d = x.cols();
  if (gain.rank() != 1 || gain.shape[0] != d || bias.rank() != 1 || bias.shape[0] != d) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape) + " / bias " +
                         shape_str(bias.shape) + " do not match last dim of " +
                         shape_str(x.shape));
  }
  constexpr double eps = 1e-5;

  Tensor out = make_out(x.shape, {x, gain, bias}, [r, d](Node& nd) {
    const Tensor& px = nd.parents[0];
    const Tensor& pg = nd.parents[1];
    const Tensor& pb = nd.parents[2];
    const auto& g = *nd.out_grad;
    const auto& xd = *px.data;
    const auto& gd = *pg.data;
    for (size_t i = 0; i < r; ++i) {
      const size_t base = i * d;
      double mean = 0.0;
      for (size_t j = 0; j < d; ++j) mean += xd[base + j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (size_t j = 0; j < d; ++j) {
        const double c = xd[base + j] - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps);

      if (pg.requires_grad || pb.requires_grad) {
        for (size_t j = 0; j < d; ++j) {
          const double xhat = (xd[base + j] - mean) * inv;
          if (pg.requires_grad) (*pg.grad)[j] += g[base + j] * xhat;
          if (pb.requires_grad) (*pb.grad)[j] += g[base + j];
        }
      }
      if (px.requires_grad) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (size_t j = 0; j < d; ++j) {
          const double dxhat = g[base + j] * gd[j];
          const double xhat = (xd[base + j] - mean) * inv;
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        auto& gx = *px.grad;
        for (size_t j = 0; j < d; ++j) {
          const double dxhat = g[base + j] * gd[j];
          const double xhat = (xd[base + j] - mean) * inv;
          gx[base + j] += inv * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) /
                                              static_cast<double>(d));
        }
      }
    }
  });

  const auto& xd = *x.data;
  const auto& gd = *gain.data;
  const auto& bd = *bias.data;
  auto& od = *out.data;
  for (size_t i = 0; i < r; ++i) {
    const size_t base = i * d;
    double mean = 0.0;
    for (size_t j = 0; j < d; ++j) mean += xd[base + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double c = xd[base + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < d; ++j) od[base + j] = (xd[base + j] - mean) * inv * gd[j] + bd[j];
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = make_out(x.shape, {x}, [](Node& nd) {
    const Tensor& px = nd.parents[0];
    if (!px.requires_grad) return;
    const auto& g = *nd.out_grad;
    const auto& xd = *px.data;
    auto& gx = *px.grad;
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    for (size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xd[i] * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * xd[i] * xd[i]);
      gx[i] += g[i] * (cdf + xd[i] * pdf);
    }
  });
  const auto& xd = *x.data;
  auto& od = *out.data;
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (size_t i = 0; i < od.size(); ++i) {
    od[i] = xd[i] * 0.5 * (1.0 + std::erf(xd[i] * inv_sqrt2));
  }
  return out;
}

Tensor slice_rows(const Tensor& x, size_t begin, size_t count) {
  check_rank12(x, "slice_rows");
  const size_t r = x.rows(), c = x.cols();
  if (begin + count > r) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") exceeds " + shape_str(x.shape));
  }
  Tensor out = make_out({count, c}, {x}, [begin, count, c](Node& nd) {
    const Tensor& px = nd.parents[0];
    if (!px.requires_grad) return;
    const auto& g = *nd.out_grad;
    auto& gx = *px.grad;
    for (size_t i = 0; i < count; ++i)
      for (size_t j = 0; j < c; ++j) gx[(begin + i) * c + j] += g[i * c + j];
  });
  const auto& xd = *x.data;
  auto& od = *out.data;
  std::copy(xd.begin() + begin * c, xd.begin() + (begin + count) * c, od.begin());
  return out;
}

Tensor slice_cols(const Tensor& x, size_t begin, size_t count) {
  if (x.rank() != 2) {
    throw DimensionError("slice_cols: expected rank-2 input, got " + shape_str(x.shape));
  }
  const size_t r = x.shape[0], c = x.shape[1];
  if (begin + count > c) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") exceeds " + shape_str(x.shape));
  }
  Tensor out = make_out({r, count}, {x}, [r, begin, count, c](Node& nd) {
    const Tensor& px = nd.parents[0];
    if (!px.requires_grad) return;
    const auto& g = *nd.out_grad;
    auto& gx = *px.grad;
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < count; ++j) gx[i * c + begin + j] += g[i * count + j];
  });
  const auto& xd = *x.data;
  auto& od = *out.data;
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < count; ++j) od[i * count + j] = xd[i * c + begin + j];
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const size_t c = parts[0].cols();
  size_t total = 0;
  for (const auto& p : parts) {
    check_rank12(p, "concat_rows");
    if (p.cols() != c) {
      throw DimensionError("concat_rows: column mismatch: " + shape_str(parts[0].shape) +
                           " vs " + shape_str(p.shape));
    }
    total += p.rows();
  }
  std::vector<size_t> row_counts;
  row_counts.reserve(parts.size());
  for (const auto& p : parts) row_counts.push_back(p.rows());

  Tensor out = make_out({total, c}, parts, [row_counts, c](Node& nd) {
    const auto& g = *nd.out_grad;
    size_t row = 0;
    for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
      const Tensor& p = nd.parents[pi];
      const size_t n = row_counts[pi] * c;
      if (p.requires_grad) {
        auto& gp = *p.grad;
        const size_t base = row * c;
        for (size_t i = 0; i < n; ++i) gp[i] += g[base + i];
      }
      row += row_counts[pi];
    }
  });
  auto& od = *out.data;
  size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data->begin(), p.data->end(), od.begin() + offset);
    offset += p.numel();
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const size_t r = parts[0].rows();
  size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != r) {
      throw DimensionError("concat_cols: row mismatch: " + shape_str(parts[0].shape) + " vs " +
                           shape_str(p.shape));
    }
    total += p.cols();
  }
  std::vector<size_t> col_counts;
  col_counts.reserve(parts.size());
  for (const auto& p : parts) col_counts.push_back(p.cols());

  Tensor out = make_out({r, total}, parts, [r, col_counts, total](Node& nd) {
    const auto& g = *nd.out_grad;
    size_t col = 0;
    for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
      const Tensor& p = nd.parents[pi];
      const size_t w = col_counts[pi];
      if (p.requires_grad) {
        auto& gp = *p.grad;
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + col + j];
      }
      col += w;
    }
  });
  auto& od = *out.data;
  size_t col = 0;
  for (const auto& p : parts) {
    const size_t w = p.cols();
    const auto& pd = *p.data;
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < w; ++j) od[i * total + col + j] = pd[i * w + j];
    col += w;
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) {
    throw DimensionError("embedding_lookup: table must be rank 2, got " + shape_str(table.shape));
  }
  const size_t v = table.shape[0], d = table.shape[1];
  for (int id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= v) {
      throw DataError("embedding_lookup: id " + std::to_string(id) + " out of range [0, " +
                      std::to_string(v) + ")");
    }
  }
  const size_t t = ids.size();
  Tensor out = make_out({t, d}, {table}, [ids, d](Node& nd) {
    const Tensor& pt = nd.parents[0];
    if (!pt.requires_grad) return;
    const auto& g = *nd.out_grad;
    auto& gt = *pt.grad;
    for (size_t i = 0; i < ids.size(); ++i) {
      const size_t row = static_cast<size_t>(ids[i]) * d;
      for (size_t j = 0; j < d; ++j) gt[row + j] += g[i * d + j];
    }
  });
  const auto& td = *table.data;
  auto& od = *out.data;
  for (size_t i = 0; i < t; ++i) {
    const size_t row = static_cast<size_t>(ids[i]) * d;
    std::copy(td.begin() + row, td.begin() + row + d, od.begin() + i * d);
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_out({1}, {x}, [](Node& nd) {
    const Tensor& px = nd.parents[0];
    if (!px.requires_grad) return;
    const double g = (*nd.out_grad)[0];
    auto& gx = *px.grad;
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  double total = 0.0;
  for (double v : *x.data) total += v;
  (*out.data)[0] = total;
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, size_t heads, bool causal) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("attention: expected rank-2 q/k/v");
  }
  const size_t d = q.shape[1];
  if (k.shape[1] != d || v.shape[1] != d) {
    throw DimensionError("attention: width mismatch: q " + shape_str(q.shape) + ", k " +
                         shape_str(k.shape) + ", v " + shape_str(v.shape));
  }
  if (k.shape[0] != v.shape[0]) {
    throw DimensionError("attention: k rows " + shape_str(k.shape) + " != v rows " +
                         shape_str(v.shape));
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const size_t tq = q.shape[0], tk = k.shape[0];
  if (tq < 1 || tk < 1) throw DimensionError("attention: empty sequence");
  if (causal && tq != tk) {
    throw DimensionError("attention: causal mask requires Tq == Tk, got " +
                         std::to_string(tq) + " vs " + std::to_string(tk));
  }
  const size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor mask;
  if (causal) {
    mask = Tensor::zeros({tq, tk});
    for (size_t i = 0; i < tq; ++i)
      for (size_t j = i + 1; j < tk; ++j) mask.at(i, j) = -1e30;
  }

  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), sc);
    if (causal) scores = add(scores, mask);
    Tensor probs = softmax(scores, 1);
    head_outs.push_back(matmul(probs, vh));
  }
  return heads == 1 ? head_outs[0] : concat_cols(head_outs);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<bool>& mask) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be rank 2, got " + shape_str(logits.shape));
  }
  const size_t t = logits.shape[0], v = logits.shape[1];
  if (targets.size() != t || mask.size() != t) {
    throw DimensionError("cross_entropy: " + std::to_string(t) + " rows but " +
                         std::to_string(targets.size()) + " targets / " +
                         std::to_string(mask.size()) + " mask entries");
  }
  size_t active = 0;
  for (size_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    ++active;
    if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= v) {
      throw DataError("cross_entropy: target " + std::to_string(targets[i]) +
                      " out of range [0, " + std::to_string(v) + ")");
    }
  }
  if (active == 0) throw DataError("cross_entropy: every position is masked out");

  Tensor out = make_out({1}, {logits}, [targets, mask, t, v, active](Node& nd) {
    const Tensor& pl = nd.parents[0];
    if (!pl.requires_grad) return;
    const double g = (*nd.out_grad)[0] / static_cast<double>(active);
    const auto& ld = *pl.data;
    auto& gl = *pl.grad;
    for (size_t i = 0; i < t; ++i) {
      if (!mask[i]) continue;
      const size_t base = i * v;
      double mx = ld[base];
      for (size_t j = 1; j < v; ++j) mx = std::max(mx, ld[base + j]);
      double total = 0.0;
      for (size_t j = 0; j < v; ++j) total += std::exp(ld[base + j] - mx);
      for (size_t j = 0; j < v; ++j) {
        const double p = std::exp(ld[base + j] - mx) / total;
        gl[base + j] += g * (p - (static_cast<size_t>(targets[i]) == j ? 1.0 : 0.0));
      }
    }
  });

  const auto& ld = *logits.data;
  double loss = 0.0;
  for (size_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    const size_t base = i * v;
    double mx = ld[base];
    for (size_t j = 1; j < v; ++j) mx = std::max(mx, ld[base + j]);
    double total = 0.0;
    for (size_t j = 0; j < v; ++j) total += std::exp(ld[base + j] - mx);
    loss -= ld[base + static_cast<size_t>(targets[i])] - mx - std::log(total);
  }
  (*out.data)[0] = loss / static_cast<double>(active);
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_str(loss.shape));
  }
  if (!loss.requires_grad) {
    throw Error("backward: loss does not require grad (no graph recorded)");
  }
  loss.grad->at(0) += 1.0;
  if (!loss.node) return;  // leaf scalar, nothing upstream

  // Iterative DFS topological order over the recorded DAG.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node.get(), 0);
  visited.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next].node.get();
      ++next;
      if (parent && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Children come after parents in `order`, so walk it backwards.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
  for (Node* n : order) {
    n->parents.clear();
    n->backprop = nullptr;
    n->out_data.reset();
    n->out_grad.reset();
  }
}

}  // namespace camml
