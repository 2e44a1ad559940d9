#pragma once

// AverageTime forecaster.
//
//   x_n   = revin_normalize(x)                      B x C x L
//   y_raw = heads_raw(x_n)                          per-channel (or per-group) L -> H
//   y_emb = heads_emb(embed_channels(x_n))          channel tokens mixed by encoders + MLP blocks
//   y     = revin_denormalize((y_raw + y_emb) / 2)
//
// With the embedding disabled (ablation) only the raw path is used.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "avgtime/cluster.hpp"
#include "avgtime/ops.hpp"
#include "avgtime/revin.hpp"

namespace avgtime {

struct ModelConfig {
  std::size_t n_channels = 1;
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t n_transformer_layers = 0;
  std::size_t n_mlp_layers = 0;
  std::size_t d_model = 256;
  std::size_t n_heads = 8;
  double dropout = 0.0;
  bool channel_independent = true;
  std::optional<Grouping> grouping;
  bool revin_affine = true;
  // Ablation: raw-path heads only, no embedding and no averaging.
  bool disable_embedding = false;

  bool has_embedding_layers() const { return n_transformer_layers + n_mlp_layers > 0; }

  // Distinct head parameter sets per path.
  std::size_t head_sets() const {
    if (grouping) return grouping->group_count;
    return channel_independent ? n_channels : 1;
  }

  void validate() const {
    if (n_channels < 1 || lookback < 1 || horizon < 1) {
      throw std::invalid_argument("model config: channels, lookback and horizon must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must lie in [0, 1)");
    if (has_embedding_layers() && !disable_embedding) {
      if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model (" + std::to_string(d_model) +
                                    ") must be a positive multiple of n_heads (" + std::to_string(n_heads) + ")");
      }
    }
    if (grouping) grouping->validate(n_channels);
  }
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear make(std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return {Tensor::uniform({in, out}, rng, -bound, bound, true), Tensor::uniform({out}, rng, -bound, bound, true)};
  }

  Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm make(std::size_t width) {
    return {Tensor::full({width}, 1.0, true), Tensor::zeros({width}, true)};
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct EncoderLayer {
  LayerNorm attn_norm;
  Linear query, key, value, output;
  LayerNorm ff_norm;
  Linear ff_in, ff_out;  // d -> 4d -> d
};

struct MlpBlock {
  Linear linear;
  LayerNorm norm;
};

// One L -> H linear map per head set; channels select their set through
// channel_to_set.
struct GroupedHeads {
  Tensor weight;  // [G, L, H]
  Tensor bias;    // [G, H]
  std::vector<std::size_t> channel_to_set;

  static GroupedHeads make(const ModelConfig& cfg, Rng& rng) {
    const std::size_t sets = cfg.head_sets();
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.lookback));
    GroupedHeads h;
    h.weight = Tensor::uniform({sets, cfg.lookback, cfg.horizon}, rng, -bound, bound, true);
    h.bias = Tensor::uniform({sets, cfg.horizon}, rng, -bound, bound, true);
    if (cfg.grouping) {
      h.channel_to_set = cfg.grouping->group_index();
    } else if (cfg.channel_independent) {
      h.channel_to_set.resize(cfg.n_channels);
      std::iota(h.channel_to_set.begin(), h.channel_to_set.end(), std::size_t{0});
    } else {
      h.channel_to_set.assign(cfg.n_channels, 0);
    }
    return h;
  }
};

// y[b, c, :] = x[b, c, :] * W[set(c)] + bias[set(c)]
inline Tensor grouped_linear(const Tensor& x, const Tensor& weight, const Tensor& bias,
                             const std::vector<std::size_t>& channel_to_set) {
  using Strided = Eigen::OuterStride<>;
  using ConstStrided = Eigen::Map<const detail::RowMatrix, 0, Strided>;
  using MutStrided = Eigen::Map<detail::RowMatrix, 0, Strided>;
  if (x.rank() != 3 || weight.rank() != 3 || bias.rank() != 2) {
    detail::shape_fail("grouped_linear", "expects x [B,C,L], weight [G,L,H], bias [G,H]; got " + to_string(x.shape()) +
                                             ", " + to_string(weight.shape()) + ", " + to_string(bias.shape()));
  }
  const std::size_t b = x.dim(0), c = x.dim(1), len = x.dim(2);
  const std::size_t sets = weight.dim(0), h = weight.dim(2);
  if (weight.dim(1) != len || bias.dim(0) != sets || bias.dim(1) != h || channel_to_set.size() != c) {
    detail::shape_fail("grouped_linear", "x " + to_string(x.shape()) + " incompatible with weight " +
                                             to_string(weight.shape()) + " / bias " + to_string(bias.shape()) + " / " +
                                             std::to_string(channel_to_set.size()) + " channel assignments");
  }
  for (auto s : channel_to_set) {
    if (s >= sets) detail::shape_fail("grouped_linear", "channel assigned to head set " + std::to_string(s) + " of " + std::to_string(sets));
  }
  const auto bi = static_cast<Eigen::Index>(b), li = static_cast<Eigen::Index>(len), hi = static_cast<Eigen::Index>(h);
  const auto x_stride = static_cast<Eigen::Index>(c * len), y_stride = static_cast<Eigen::Index>(c * h);

  std::vector<double> out(b * c * h);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const std::size_t s = channel_to_set[ch];
    ConstStrided xs(x.data().data() + ch * len, bi, li, Strided(x_stride));
    MutStrided ys(out.data() + ch * h, bi, hi, Strided(y_stride));
    detail::ConstMatMap w(weight.data().data() + s * len * h, li, hi);
    Eigen::Map<const Eigen::RowVectorXd> bv(bias.data().data() + s * h, hi);
    ys.noalias() = xs * w;
    ys.rowwise() += bv;
  }
  return Tensor::from_op(
      "grouped_linear", {b, c, h}, std::move(out), {x, weight, bias},
      [=](detail::Node& node) {
        double* dx = detail::parent_grad(node, 0);
        double* dw = detail::parent_grad(node, 1);
        double* db = detail::parent_grad(node, 2);
        const auto& xv = detail::parent_data(node, 0);
        const auto& wv = detail::parent_data(node, 1);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t s = channel_to_set[ch];
          ConstStrided g(node.grad.data() + ch * h, bi, hi, Strided(y_stride));
          if (dx) {
            MutStrided(dx + ch * len, bi, li, Strided(x_stride)).noalias() +=
                g * detail::ConstMatMap(wv.data() + s * len * h, li, hi).transpose();
          }
          if (dw) {
            detail::MatMap(dw + s * len * h, li, hi).noalias() +=
                ConstStrided(xv.data() + ch * len, bi, li, Strided(x_stride)).transpose() * g;
          }
          if (db) Eigen::Map<Eigen::RowVectorXd>(db + s * h, hi) += g.colwise().sum();
        }
      });
}

struct ModelParams {
  std::optional<Linear> in_proj;   // L -> d_model
  std::vector<EncoderLayer> encoder_layers;
  std::vector<MlpBlock> mlp_layers;
  std::optional<Linear> out_proj;  // d_model -> L
  GroupedHeads heads_raw;
  std::optional<GroupedHeads> heads_emb;
  RevinParams revin;

  // Stable, unique names; checkpoints are keyed by them.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto linear = [&](const std::string& prefix, const Linear& l) {
      out.emplace_back(prefix + ".weight", l.weight);
      out.emplace_back(prefix + ".bias", l.bias);
    };
    auto norm = [&](const std::string& prefix, const LayerNorm& n) {
      out.emplace_back(prefix + ".gain", n.gain);
      out.emplace_back(prefix + ".bias", n.bias);
    };
    if (in_proj) linear("in_proj", *in_proj);
    for (std::size_t i = 0; i < encoder_layers.size(); ++i) {
      const auto p = "encoder." + std::to_string(i);
      const auto& e = encoder_layers[i];
      norm(p + ".attn_norm", e.attn_norm);
      linear(p + ".query", e.query);
      linear(p + ".key", e.key);
      linear(p + ".value", e.value);
      linear(p + ".output", e.output);
      norm(p + ".ff_norm", e.ff_norm);
      linear(p + ".ff_in", e.ff_in);
      linear(p + ".ff_out", e.ff_out);
    }
    for (std::size_t i = 0; i < mlp_layers.size(); ++i) {
      const auto p = "mlp." + std::to_string(i);
      linear(p + ".linear", mlp_layers[i].linear);
      norm(p + ".norm", mlp_layers[i].norm);
    }
    if (out_proj) linear("out_proj", *out_proj);
    out.emplace_back("heads_raw.weight", heads_raw.weight);
    out.emplace_back("heads_raw.bias", heads_raw.bias);
    if (heads_emb) {
      out.emplace_back("heads_emb.weight", heads_emb->weight);
      out.emplace_back("heads_emb.bias", heads_emb->bias);
    }
    if (revin.affine) {
      out.emplace_back("revin.gain", revin.gain);
      out.emplace_back("revin.bias", revin.bias);
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }
};

inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  const bool embed = !cfg.disable_embedding;
  if (embed && cfg.has_embedding_layers()) {
    const std::size_t d = cfg.d_model;
    p.in_proj = Linear::make(cfg.lookback, d, rng);
    for (std::size_t i = 0; i < cfg.n_transformer_layers; ++i) {
      p.encoder_layers.push_back({LayerNorm::make(d), Linear::make(d, d, rng), Linear::make(d, d, rng),
                                  Linear::make(d, d, rng), Linear::make(d, d, rng), LayerNorm::make(d),
                                  Linear::make(d, 4 * d, rng), Linear::make(4 * d, d, rng)});
    }
    for (std::size_t i = 0; i < cfg.n_mlp_layers; ++i) p.mlp_layers.push_back({Linear::make(d, d, rng), LayerNorm::make(d)});
    p.out_proj = Linear::make(d, cfg.lookback, rng);
  }
  p.heads_raw = GroupedHeads::make(cfg, rng);
  if (embed) p.heads_emb = GroupedHeads::make(cfg, rng);
  p.revin = RevinParams::make(cfg.n_channels, cfg.revin_affine);
  return p;
}

inline std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params.named_parameters()) n += t.size();
  return n;
}

// Multi-head scaled dot-product attention over the C channel tokens of x [B, C, d].
inline Tensor channel_attention(const Tensor& x, const EncoderLayer& layer, std::size_t n_heads) {
  const std::size_t d = x.dim(2);
  const std::size_t dk = d / n_heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor q = layer.query(x), k = layer.key(x), v = layer.value(x);
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t lo = h * dk, hi = lo + dk;
    Tensor qh = n_heads == 1 ? q : slice(q, 2, lo, hi);
    Tensor kh = n_heads == 1 ? k : slice(k, 2, lo, hi);
    Tensor vh = n_heads == 1 ? v : slice(v, 2, lo, hi);
    Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dk));  // [B, C, C]
    heads.push_back(matmul(weights, vh));
  }
  Tensor merged = n_heads == 1 ? heads.front() : concat(heads, 2);
  return layer.output(merged);
}

// Mixes information across channels while preserving the B x C x L shape.
// Identity when no encoder or MLP layers are configured.
inline Tensor embed_channels(const Tensor& x, const ModelParams& params, const ModelConfig& cfg, Rng& rng,
                             bool training) {
  if (!params.in_proj) return x;
  // Channel-major layout already places each channel's lookback in one row,
  // so channels are tokens without a transpose.
  Tensor h = (*params.in_proj)(x);
  for (const auto& layer : params.encoder_layers) {
    Tensor attn = channel_attention(layer.attn_norm(h), layer, cfg.n_heads);
    h = add(h, dropout(attn, cfg.dropout, rng, training));
    Tensor ff = layer.ff_out(dropout(gelu(layer.ff_in(layer.ff_norm(h))), cfg.dropout, rng, training));
    h = add(h, dropout(ff, cfg.dropout, rng, training));
  }
  for (const auto& block : params.mlp_layers) {
    h = block.norm(add(h, dropout(gelu(block.linear(h)), cfg.dropout, rng, training)));
  }
  return (*params.out_proj)(h);
}

inline void check_batch(const Tensor& batch, const ModelConfig& cfg) {
  if (batch.rank() != 3 || batch.dim(1) != cfg.n_channels || batch.dim(2) != cfg.lookback) {
    throw ShapeError("forward: expected batch [B, " + std::to_string(cfg.n_channels) + ", " +
                     std::to_string(cfg.lookback) + "], got " + to_string(batch.shape()));
  }
}

inline Tensor forward(const Tensor& batch, const ModelParams& params, const ModelConfig& cfg, Rng& rng,
                      bool training) {
  check_batch(batch, cfg);
  auto [normed, state] = revin_normalize(batch, params.revin);
  const auto& raw = params.heads_raw;
  Tensor y = grouped_linear(dropout(normed, cfg.dropout, rng, training), raw.weight, raw.bias, raw.channel_to_set);
  if (params.heads_emb) {
    const auto& emb = *params.heads_emb;
    Tensor embedded = embed_channels(normed, params, cfg, rng, training);
    Tensor y_emb = grouped_linear(dropout(embedded, cfg.dropout, rng, training), emb.weight, emb.bias,
                                  emb.channel_to_set);
    y = scale(add(y, y_emb), 0.5);
  }
  return revin_denormalize(y, state, params.revin);
}

}  // namespace avgtime
