// Post-LN transformer encoder block and sinusoidal positions.
#pragma once

#include <vector>

#include "semcom/recurrent.hpp"

namespace semcom::nn {

// Fixed sinusoidal position table, [T, d].
template <typename Real>
Tensor<Real> sinusoidal_positions(std::size_t t, std::size_t d) {
  std::vector<Real> v(t * d);
  for (std::size_t pos = 0; pos < t; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d);
      double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      v[pos * d + i] = static_cast<Real>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  return Tensor<Real>::from({t, d}, std::move(v));
}

// Self-attention + feed-forward with residuals and post layer norm.
template <typename Real>
struct TransformerBlock final : Layer<Real> {
  std::size_t d, heads, dh, ffn;
  Tensor<Real> wq, wk, wv, wo, bq, bk, bv, bo;
  Tensor<Real> ff1_w, ff1_b, ff2_w, ff2_b;
  Tensor<Real> ln1_g, ln1_b, ln2_g, ln2_b;

  TransformerBlock(std::size_t width, std::size_t n_heads, std::size_t ffn_width, Rng& rng)
      : d(width),
        heads(n_heads),
        dh(width / n_heads),
        ffn(ffn_width),
        wq(init_uniform<Real>({width, width}, width, rng)),
        wk(init_uniform<Real>({width, width}, width, rng)),
        wv(init_uniform<Real>({width, width}, width, rng)),
        wo(init_uniform<Real>({width, width}, width, rng)),
        bq(init_zeros_param<Real>({width})),
        bk(init_zeros_param<Real>({width})),
        bv(init_zeros_param<Real>({width})),
        bo(init_zeros_param<Real>({width})),
        ff1_w(init_uniform<Real>({ffn_width, width}, width, rng)),
        ff1_b(init_zeros_param<Real>({ffn_width})),
        ff2_w(init_uniform<Real>({width, ffn_width}, ffn_width, rng)),
        ff2_b(init_zeros_param<Real>({width})),
        ln1_g(Tensor<Real>::parameter({width}, std::vector<Real>(width, Real(1)))),
        ln1_b(init_zeros_param<Real>({width})),
        ln2_g(Tensor<Real>::parameter({width}, std::vector<Real>(width, Real(1)))),
        ln2_b(init_zeros_param<Real>({width})) {
    if (width % n_heads != 0) throw ConfigError("transformer width not divisible by heads");
  }

  Tensor<Real> forward(const Tensor<Real>& x) override {
    if (x.rank() != 2 || x.dim(1) != d)
      throw DimensionError("transformer_block: expected [T," + std::to_string(d) + "], got " +
                           shape_str(x.shape()));
    Tensor<Real> q = linear(x, wq, bq);
    Tensor<Real> k = linear(x, wk, bk);
    Tensor<Real> v = linear(x, wv, bv);
    std::vector<Tensor<Real>> ctx;
    ctx.reserve(heads);
    Real inv_sqrt = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(dh)));
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor<Real> qh = slice_cols(q, h * dh, (h + 1) * dh);
      Tensor<Real> kh = slice_cols(k, h * dh, (h + 1) * dh);
      Tensor<Real> vh = slice_cols(v, h * dh, (h + 1) * dh);
      Tensor<Real> scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt);
      Tensor<Real> attn = softmax_rows(scores);
      ctx.push_back(matmul(attn, vh));
    }
    Tensor<Real> merged = heads == 1 ? ctx[0] : concat_cols(ctx);
    Tensor<Real> attn_out = linear(merged, wo, bo);
    Tensor<Real> y1 = layer_norm(add(x, attn_out), ln1_g, ln1_b);
    Tensor<Real> ff = linear(relu_t(linear(y1, ff1_w, ff1_b)), ff2_w, ff2_b);
    return layer_norm(add(y1, ff), ln2_g, ln2_b);
  }

  void register_params(ParameterMap<Real>& m, const std::string& p) override {
    register_param(m, p + ".wq", wq);
    register_param(m, p + ".wk", wk);
    register_param(m, p + ".wv", wv);
    register_param(m, p + ".wo", wo);
    register_param(m, p + ".bq", bq);
    register_param(m, p + ".bk", bk);
    register_param(m, p + ".bv", bv);
    register_param(m, p + ".bo", bo);
    register_param(m, p + ".ff1.weight", ff1_w);
    register_param(m, p + ".ff1.bias", ff1_b);
    register_param(m, p + ".ff2.weight", ff2_w);
    register_param(m, p + ".ff2.bias", ff2_b);
    register_param(m, p + ".ln1.gamma", ln1_g);
    register_param(m, p + ".ln1.beta", ln1_b);
    register_param(m, p + ".ln2.gamma", ln2_g);
    register_param(m, p + ".ln2.beta", ln2_b);
  }

  std::size_t param_count() const override {
    return wq.size() + wk.size() + wv.size() + wo.size() + bq.size() + bk.size() + bv.size() +
           bo.size() + ff1_w.size() + ff1_b.size() + ff2_w.size() + ff2_b.size() + ln1_g.size() +
           ln1_b.size() + ln2_g.size() + ln2_b.size();
  }
  const char* kind() const override { return "transformer_block"; }
};

// Factory for the LayerSpec inventory. Recurrent/transformer kinds live here
// so layers.hpp stays free of cell definitions.
template <typename Real>
std::unique_ptr<Layer<Real>> make_layer(const LayerSpec& spec, Rng& rng) {
  spec.validate();
  switch (spec.kind) {
    case LayerKind::fc: return std::make_unique<FcLayer<Real>>(spec.in, spec.out, rng);
    case LayerKind::conv2d: return std::make_unique<Conv2dLayer<Real>>(spec.in, spec.out, spec.kernel, rng);
    case LayerKind::maxpool2d: return std::make_unique<MaxPool2dLayer<Real>>(spec.kernel);
    case LayerKind::conv1d:
      return std::make_unique<Conv1dLayer<Real>>(spec.in, spec.out, spec.kernel, spec.pad, rng);
    case LayerKind::embedding: return std::make_unique<EmbeddingLayer<Real>>(spec.in, spec.out, rng);
    case LayerKind::lstm: return std::make_unique<LstmLayer<Real>>(spec.in, spec.out, rng);
    case LayerKind::gru: return std::make_unique<GruLayer<Real>>(spec.in, spec.out, rng);
    case LayerKind::blstm: return std::make_unique<BlstmLayer<Real>>(spec.in, spec.out, rng);
    case LayerKind::transformer_block:
      return std::make_unique<TransformerBlock<Real>>(spec.out, spec.heads, spec.ffn, rng);
    case LayerKind::softmax:
    case LayerKind::logsoftmax:
    case LayerKind::tanh:
    case LayerKind::leaky_relu:
      return std::make_unique<ActivationLayer<Real>>(spec.kind);
  }
  throw ConfigError("unknown layer kind");
}

}  // namespace semcom::nn
