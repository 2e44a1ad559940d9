#pragma once

// Differentiable primitives. Each op computes its forward value eagerly and
// registers a backward closure that accumulates into its inputs' gradients.

#include <Eigen/Core>

#include "avgtime/tensor.hpp"

namespace avgtime {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// Parent gradient buffer, or nullptr when that input needs none.
inline double* parent_grad(Node& n, std::size_t i) {
  auto& p = *n.parents.at(i);
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

inline const std::vector<double>& parent_data(Node& n, std::size_t i) { return n.parents.at(i)->data; }

[[noreturn]] inline void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

// True when `suffix` equals the trailing axes of `shape`.
inline bool is_suffix(const Shape& shape, const Shape& suffix) {
  if (suffix.size() > shape.size()) return false;
  return std::equal(suffix.begin(), suffix.end(), shape.end() - static_cast<std::ptrdiff_t>(suffix.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. `b` may equal `a`'s shape or one of its trailing
// suffixes (bias-style broadcast over the leading axes).

namespace detail {

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, GradA ga, GradB gb) {
  if (!is_suffix(a.shape(), b.shape())) {
    shape_fail(name, "cannot combine " + to_string(a.shape()) + " with " + to_string(b.shape()));
  }
  const std::size_t n = a.size(), m = b.size();
  std::vector<double> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i], bd[i % m]);
  return Tensor::from_op(name, a.shape(), std::move(out), {a, b}, [n, m, ga, gb](Node& node) {
    const auto& x = parent_data(node, 0);
    const auto& y = parent_data(node, 1);
    double* dx = parent_grad(node, 0);
    double* dy = parent_grad(node, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = node.grad[i];
      if (dx) dx[i] += g * ga(x[i], y[i % m]);
      if (dy) dy[i % m] += g * gb(x[i], y[i % m]);
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor subtract(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "subtract", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor multiply(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "multiply", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor::from_op("scale", a.shape(), std::move(out), {a}, [factor](detail::Node& node) {
    double* dx = detail::parent_grad(node, 0);
    for (std::size_t i = 0; i < node.grad.size(); ++i) dx[i] += factor * node.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Matrix products over the last two axes. `b` is either a single matrix shared
// across all leading axes of `a`, or has the same leading (batch) axes.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  using detail::ConstMatMap;
  using detail::MatMap;
  if (a.rank() < 2 || b.rank() < 2) {
    detail::shape_fail("matmul", "operands need rank >= 2, got " + to_string(a.shape()) + " and " +
                                     to_string(b.shape()));
  }
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb) {
    detail::shape_fail("matmul", "inner extents differ: " + to_string(a.shape()) + " x " + to_string(b.shape()) +
                                     " (" + std::to_string(k) + " vs " + std::to_string(kb) + ")");
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  const auto ai = static_cast<Eigen::Index>(m), ki = static_cast<Eigen::Index>(k), ni = static_cast<Eigen::Index>(n);

  if (b.rank() == 2) {
    // Fold every leading axis of `a` into the row dimension.
    const auto rows = static_cast<Eigen::Index>(a.size() / k);
    std::vector<double> out(static_cast<std::size_t>(rows) * n);
    MatMap(out.data(), rows, ni).noalias() = ConstMatMap(a.data().data(), rows, ki) * ConstMatMap(b.data().data(), ki, ni);
    return Tensor::from_op("matmul", std::move(out_shape), std::move(out), {a, b}, [rows, ki, ni](detail::Node& node) {
      ConstMatMap g(node.grad.data(), rows, ni);
      if (double* da = detail::parent_grad(node, 0)) {
        MatMap(da, rows, ki).noalias() += g * ConstMatMap(detail::parent_data(node, 1).data(), ki, ni).transpose();
      }
      if (double* db = detail::parent_grad(node, 1)) {
        MatMap(db, ki, ni).noalias() += ConstMatMap(detail::parent_data(node, 0).data(), rows, ki).transpose() * g;
      }
    });
  }

  if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    detail::shape_fail("matmul", "batch axes differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t batches = a.size() / (m * k);
  std::vector<double> out(batches * m * n);
  for (std::size_t i = 0; i < batches; ++i) {
    MatMap(out.data() + i * m * n, ai, ni).noalias() =
        ConstMatMap(a.data().data() + i * m * k, ai, ki) * ConstMatMap(b.data().data() + i * k * n, ki, ni);
  }
  return Tensor::from_op("matmul", std::move(out_shape), std::move(out), {a, b},
                         [batches, m, k, n, ai, ki, ni](detail::Node& node) {
                           double* da = detail::parent_grad(node, 0);
                           double* db = detail::parent_grad(node, 1);
                           const auto& av = detail::parent_data(node, 0);
                           const auto& bv = detail::parent_data(node, 1);
                           for (std::size_t i = 0; i < batches; ++i) {
                             ConstMatMap g(node.grad.data() + i * m * n, ai, ni);
                             if (da) {
                               MatMap(da + i * m * k, ai, ki).noalias() +=
                                   g * ConstMatMap(bv.data() + i * k * n, ki, ni).transpose();
                             }
                             if (db) {
                               MatMap(db + i * k * n, ki, ni).noalias() +=
                                   ConstMatMap(av.data() + i * m * k, ai, ki).transpose() * g;
                             }
                           }
                         });
}

// ---------------------------------------------------------------------------
// Layout ops.

// Swaps the last two axes.
inline Tensor transpose(const Tensor& a) {
  if (a.rank() < 2) detail::shape_fail("transpose", "needs rank >= 2, got " + to_string(a.shape()));
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  const std::size_t batches = a.size() / std::max<std::size_t>(r * c, 1);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t off = b * r * c;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[off + j * r + i] = in[off + i * c + j];
    }
  }
  return Tensor::from_op("transpose", std::move(out_shape), std::move(out), {a}, [batches, r, c](detail::Node& node) {
    double* dx = detail::parent_grad(node, 0);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t off = b * r * c;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) dx[off + i * c + j] += node.grad[off + j * r + i];
      }
    }
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    detail::shape_fail("reshape", "cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return Tensor::from_op("reshape", std::move(shape), std::move(out), {a}, [](detail::Node& node) {
    double* dx = detail::parent_grad(node, 0);
    for (std::size_t i = 0; i < node.grad.size(); ++i) dx[i] += node.grad[i];
  });
}

namespace detail {

// (outer, axis extent, inner) decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) detail::shape_fail("concat", "no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) detail::shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + to_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) detail::shape_fail("concat", "rank mismatch " + to_string(ref) + " vs " + to_string(p.shape()));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.dim(i) != ref[i]) {
        detail::shape_fail("concat", "extent mismatch on axis " + std::to_string(i) + ": " + to_string(ref) + " vs " +
                                         to_string(p.shape()));
      }
    }
    extents.push_back(p.dim(axis));
    out_shape[axis] += p.dim(axis);
  }
  const auto split = detail::split_at(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto src = parts[k].data();
    const std::size_t block = extents[k] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(o * split.extent * split.inner + offset * split.inner));
    }
    offset += extents[k];
  }
  return Tensor::from_op("concat", std::move(out_shape), std::move(out), parts, [split, extents](detail::Node& node) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t block = extents[k] * split.inner;
      if (double* dx = detail::parent_grad(node, k)) {
        for (std::size_t o = 0; o < split.outer; ++o) {
          const double* g = node.grad.data() + o * split.extent * split.inner + offset * split.inner;
          for (std::size_t i = 0; i < block; ++i) dx[o * block + i] += g[i];
        }
      }
      offset += extents[k];
    }
  });
}

// Half-open range [start, stop) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t stop) {
  if (axis >= a.rank() || start > stop || stop > a.dim(axis)) {
    detail::shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(stop) + ") on axis " +
                                    std::to_string(axis) + " invalid for " + to_string(a.shape()));
  }
  const auto split = detail::split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = stop - start;
  const std::size_t block = (stop - start) * split.inner;
  std::vector<double> out(split.outer * block);
  auto src = a.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * split.extent * split.inner + start * split.inner), block,
                out.begin() + static_cast<std::ptrdiff_t>(o * block));
  }
  return Tensor::from_op("slice", std::move(out_shape), std::move(out), {a}, [split, block, start](detail::Node& node) {
    double* dx = detail::parent_grad(node, 0);
    for (std::size_t o = 0; o < split.outer; ++o) {
      double* d = dx + o * split.extent * split.inner + start * split.inner;
      for (std::size_t i = 0; i < block; ++i) d[i] += node.grad[o * block + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities.

inline Tensor softmax(const Tensor& a) {
  if (a.rank() < 1) detail::shape_fail("softmax", "needs rank >= 1");
  const std::size_t width = a.dim(a.rank() - 1);
  const std::size_t rows = width ? a.size() / width : 0;
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * width;
    double* y = out.data() + r * width;
    const double mx = *std::max_element(x, x + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < width; ++j) y[j] /= total;
  }
  return Tensor::from_op("softmax", a.shape(), std::move(out), {a}, [rows, width](detail::Node& node) {
    double* dx = detail::parent_grad(node, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = node.data.data() + r * width;
      const double* g = node.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < width; ++j) dx[r * width + j] += y[j] * (g[j] - dot);
    }
  });
}

// Exact (erf) form.
inline Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] * inv_sqrt2));
  return Tensor::from_op("gelu", a.shape(), std::move(out), {a}, [](detail::Node& node) {
    const auto& x = detail::parent_data(node, 0);
    double* dx = detail::parent_grad(node, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
      dx[i] += node.grad[i] * (cdf + x[i] * pdf);
    }
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return Tensor::from_op("relu", a.shape(), std::move(out), {a}, [](detail::Node& node) {
    const auto& x = detail::parent_data(node, 0);
    double* dx = detail::parent_grad(node, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) dx[i] += node.grad[i];
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes over the last axis, then applies gain and bias of shape [width].
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps) {
  if (x.rank() < 1) detail::shape_fail("layer_norm", "needs rank >= 1");
  const std::size_t width = x.dim(x.rank() - 1);
  if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
    detail::shape_fail("layer_norm", "gain/bias must be [" + std::to_string(width) + "], got " + to_string(gain.shape()) +
                                         " and " + to_string(bias.shape()));
  }
  const std::size_t rows = width ? x.size() / width : 0;
  std::vector<double> out(x.size());
  // Per-row (mean, inverse std); normalized values are recomputed in backward.
  std::vector<double> stats(2 * rows);
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = in.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += xr[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(width);
    const double inv = 1.0 / std::sqrt(var + eps);
    stats[2 * r] = mu;
    stats[2 * r + 1] = inv;
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (xr[j] - mu) * inv * gv[j] + bv[j];
  }
  return Tensor::from_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows, width, stats = std::move(stats)](detail::Node& node) {
        const auto& xv = detail::parent_data(node, 0);
        const auto& gv = detail::parent_data(node, 1);
        double* dx = detail::parent_grad(node, 0);
        double* dgain = detail::parent_grad(node, 1);
        double* dbias = detail::parent_grad(node, 2);
        const double w = static_cast<double>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const double mu = stats[2 * r], inv = stats[2 * r + 1];
          const double* xr = xv.data() + r * width;
          const double* g = node.grad.data() + r * width;
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            const double xhat = (xr[j] - mu) * inv;
            const double gy = g[j] * gv[j];
            sum_gy += gy;
            sum_gy_xhat += gy * xhat;
            if (dgain) dgain[j] += g[j] * xhat;
            if (dbias) dbias[j] += g[j];
          }
          if (dx) {
            for (std::size_t j = 0; j < width; ++j) {
              const double xhat = (xr[j] - mu) * inv;
              dx[r * width + j] += inv * (g[j] * gv[j] - sum_gy / w - xhat * sum_gy_xhat / w);
            }
          }
        }
      });
}

// Inverted dropout: kept activations are scaled by 1/(1-rate). Identity when
// not training or when rate is zero.
inline Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.size());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(a.size());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
  return Tensor::from_op("dropout", a.shape(), std::move(out), {a}, [mask = std::move(mask)](detail::Node& node) {
    double* dx = detail::parent_grad(node, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += node.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions to a scalar of shape [].

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return Tensor::from_op("sum", {}, {total}, {a}, [](detail::Node& node) {
    double* dx = detail::parent_grad(node, 0);
    const std::size_t n = node.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) dx[i] += node.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) detail::shape_fail("mean", "empty tensor");
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double n = static_cast<double>(a.size());
  return Tensor::from_op("mean", {}, {total / n}, {a}, [n](detail::Node& node) {
    double* dx = detail::parent_grad(node, 0);
    const std::size_t count = node.parents[0]->data.size();
    for (std::size_t i = 0; i < count; ++i) dx[i] += node.grad[0] / n;
  });
}

// Mean squared error over all elements.
inline Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    detail::shape_fail("mse", "prediction " + to_string(pred.shape()) + " vs target " + to_string(target.shape()));
  }
  if (pred.size() == 0) detail::shape_fail("mse", "empty tensors");
  auto p = pred.data();
  auto t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
  const double n = static_cast<double>(p.size());
  return Tensor::from_op("mse", {}, {total / n}, {pred, target}, [n](detail::Node& node) {
    const auto& pv = detail::parent_data(node, 0);
    const auto& tv = detail::parent_data(node, 1);
    double* dp = detail::parent_grad(node, 0);
    double* dt = detail::parent_grad(node, 1);
    const double k = 2.0 * node.grad[0] / n;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double r = pv[i] - tv[i];
      if (dp) dp[i] += k * r;
      if (dt) dt[i] -= k * r;
    }
  });
}

}  // namespace avgtime
