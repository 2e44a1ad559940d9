#pragma once

// Reversible instance normalization over the lookback axis of B x C x L batches.
// Gradients flow through the lookback statistics as well as the learnable
// per-channel affine (gain, bias). A floored std is a constant.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "avgtime/ops.hpp"

namespace avgtime {

inline constexpr double kRevinEps = 1e-5;

struct RevinParams {
  bool affine = true;
  Tensor gain;  // [C]
  Tensor bias;  // [C]

  static RevinParams make(std::size_t channels, bool affine) {
    RevinParams p;
    p.affine = affine;
    if (affine) {
      p.gain = Tensor::full({channels}, 1.0, true);
      p.bias = Tensor::zeros({channels}, true);
    }
    return p;
  }
};

// Per-(instance, channel) lookback statistics captured by normalize.
struct RevinState {
  std::size_t batch = 0, channels = 0;
  std::vector<double> mean;  // B*C
  std::vector<double> std;   // B*C, >= kRevinEps
  Tensor input;              // the normalized batch; statistics depend on it
};

namespace detail {

inline void check_revin_input(const char* op, const Tensor& x, const RevinParams& p) {
  if (x.rank() != 3) shape_fail(op, "expects B x C x T, got " + to_string(x.shape()));
  if (p.affine && (p.gain.shape() != Shape{x.dim(1)} || p.bias.shape() != Shape{x.dim(1)})) {
    shape_fail(op, "affine parameters sized for " + to_string(p.gain.shape()) + " channels, input " + to_string(x.shape()));
  }
}

}  // namespace detail

inline std::pair<Tensor, RevinState> revin_normalize(const Tensor& x, const RevinParams& params) {
  detail::check_revin_input("revin_normalize", x, params);
  const std::size_t b = x.dim(0), c = x.dim(1), len = x.dim(2);
  if (len < 1) detail::shape_fail("revin_normalize", "empty lookback");
  RevinState state{b, c, std::vector<double>(b * c), std::vector<double>(b * c), x};
  auto in = x.data();
  for (std::size_t r = 0; r < b * c; ++r) {
    const double* row = in.data() + r * len;
    double mu = 0.0;
    for (std::size_t t = 0; t < len; ++t) mu += row[t];
    mu /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t t = 0; t < len; ++t) var += (row[t] - mu) * (row[t] - mu);
    var /= static_cast<double>(len);
    state.mean[r] = mu;
    state.std[r] = std::max(std::sqrt(var), kRevinEps);
  }

  std::vector<double> out(x.size());
  std::vector<double> gains(c, 1.0), biases(c, 0.0);
  if (params.affine) {
    gains.assign(params.gain.data().begin(), params.gain.data().end());
    biases.assign(params.bias.data().begin(), params.bias.data().end());
  }
  for (std::size_t r = 0; r < b * c; ++r) {
    const std::size_t ch = r % c;
    for (std::size_t t = 0; t < len; ++t) {
      out[r * len + t] = (in[r * len + t] - state.mean[r]) / state.std[r] * gains[ch] + biases[ch];
    }
  }

  std::vector<Tensor> parents{x};
  if (params.affine) {
    parents.push_back(params.gain);
    parents.push_back(params.bias);
  }
  auto backward = [b, c, len, mean = state.mean, sd = state.std, affine = params.affine](detail::Node& node) {
    const auto& xv = detail::parent_data(node, 0);
    double* dx = detail::parent_grad(node, 0);
    double* dgain = affine ? detail::parent_grad(node, 1) : nullptr;
    double* dbias = affine ? detail::parent_grad(node, 2) : nullptr;
    const double* gain = affine ? detail::parent_data(node, 1).data() : nullptr;
    const double n = static_cast<double>(len);
    for (std::size_t r = 0; r < b * c; ++r) {
      const std::size_t ch = r % c;
      const double g_scale = affine ? gain[ch] : 1.0;
      const bool floored = sd[r] == kRevinEps;
      double sum_g = 0.0, sum_g_xhat = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const double g = node.grad[r * len + t];
        const double xhat = (xv[r * len + t] - mean[r]) / sd[r];
        sum_g += g;
        sum_g_xhat += g * xhat;
        if (dgain) dgain[ch] += g * xhat;
        if (dbias) dbias[ch] += g;
      }
      if (!dx) continue;
      for (std::size_t t = 0; t < len; ++t) {
        const double xhat = (xv[r * len + t] - mean[r]) / sd[r];
        double d = node.grad[r * len + t] - sum_g / n;
        if (!floored) d -= xhat * sum_g_xhat / n;
        dx[r * len + t] += g_scale / sd[r] * d;
      }
    }
  };
  Tensor y = Tensor::from_op("revin_normalize", x.shape(), std::move(out), std::move(parents), std::move(backward));
  return {y, std::move(state)};
}

// Undoes the affine (gain offset by eps^2 against division by zero), then
// restores the captured std and mean.
inline Tensor revin_denormalize(const Tensor& pred, const RevinState& state, const RevinParams& params) {
  detail::check_revin_input("revin_denormalize", pred, params);
  if (pred.dim(0) != state.batch || pred.dim(1) != state.channels) {
    detail::shape_fail("revin_denormalize", "prediction " + to_string(pred.shape()) + " does not match state for B=" +
                                                std::to_string(state.batch) + ", C=" + std::to_string(state.channels));
  }
  const std::size_t b = pred.dim(0), c = pred.dim(1), len = pred.dim(2);
  constexpr double eps2 = kRevinEps * kRevinEps;
  std::vector<double> gains(c, 1.0), biases(c, 0.0);
  if (params.affine) {
    gains.assign(params.gain.data().begin(), params.gain.data().end());
    biases.assign(params.bias.data().begin(), params.bias.data().end());
  }
  std::vector<double> out(pred.size());
  auto in = pred.data();
  for (std::size_t r = 0; r < b * c; ++r) {
    const std::size_t ch = r % c;
    const double denom = params.affine ? gains[ch] + eps2 : 1.0;
    for (std::size_t t = 0; t < len; ++t) {
      out[r * len + t] = (in[r * len + t] - biases[ch]) / denom * state.std[r] + state.mean[r];
    }
  }
  std::vector<Tensor> parents{pred, state.input};
  if (params.affine) {
    parents.push_back(params.gain);
    parents.push_back(params.bias);
  }
  auto backward = [b, c, len, mean = state.mean, sd = state.std, affine = params.affine](detail::Node& node) {
    const auto& pv = detail::parent_data(node, 0);
    const auto& xv = detail::parent_data(node, 1);
    double* dp = detail::parent_grad(node, 0);
    double* dx = detail::parent_grad(node, 1);
    double* dgain = affine ? detail::parent_grad(node, 2) : nullptr;
    double* dbias = affine ? detail::parent_grad(node, 3) : nullptr;
    const double* gain = affine ? detail::parent_data(node, 2).data() : nullptr;
    const double* bias = affine ? detail::parent_data(node, 3).data() : nullptr;
    const std::size_t lookback = xv.size() / (b * c);
    for (std::size_t r = 0; r < b * c; ++r) {
      const std::size_t ch = r % c;
      const double denom = affine ? gain[ch] + eps2 : 1.0;
      const double shift = affine ? bias[ch] : 0.0;
      double d_mean = 0.0, d_std = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        const double up = node.grad[r * len + t];
        const double z = (pv[r * len + t] - shift) / denom;
        const double g = up * sd[r];
        d_mean += up;
        d_std += up * z;
        if (dp) dp[r * len + t] += g / denom;
        if (dgain) dgain[ch] -= g * z / denom;
        if (dbias) dbias[ch] -= g / denom;
      }
      if (!dx) continue;
      // mean = sum(x)/L; std = sqrt(sum((x - mean)^2)/L) unless floored.
      const bool floored = sd[r] == kRevinEps;
      const double n = static_cast<double>(lookback);
      for (std::size_t t = 0; t < lookback; ++t) {
        double d = d_mean / n;
        if (!floored) d += d_std * (xv[r * lookback + t] - mean[r]) / (n * sd[r]);
        dx[r * lookback + t] += d;
      }
    }
  };
  return Tensor::from_op("revin_denormalize", pred.shape(), std::move(out), std::move(parents), std::move(backward));
}

}  // namespace avgtime
