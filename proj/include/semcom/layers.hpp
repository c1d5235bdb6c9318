// Layer toolkit: convolution/pool primitives and the LayerSpec inventory.
#pragma once

#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "semcom/tensor.hpp"

namespace semcom::nn {

// ---------------------------------------------------------------------------
// Parameter registry: hierarchical names -> leaf tensors. std::map keeps the
// checkpoint order deterministic.
// ---------------------------------------------------------------------------

template <typename Real>
using ParameterMap = std::map<std::string, Tensor<Real>>;

template <typename Real>
void register_param(ParameterMap<Real>& m, const std::string& name, const Tensor<Real>& t) {
  if (m.count(name)) throw ContractError("duplicate parameter name: " + name);
  m.emplace(name, t);
}

template <typename Real>
std::size_t total_param_count(const ParameterMap<Real>& m) {
  std::size_t n = 0;
  for (const auto& [k, v] : m) n += v.size();
  return n;
}

// Uniform fan-in init: U(-a, a) with a = sqrt(3/fan_in) (unit variance scaling).
template <typename Real>
Tensor<Real> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  double a = std::sqrt(3.0 / static_cast<double>(fan_in < 1 ? 1 : fan_in));
  std::vector<Real> v(shape_size(shape));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-a, a));
  return Tensor<Real>::parameter(std::move(shape), std::move(v));
}

template <typename Real>
Tensor<Real> init_zeros_param(Shape shape) {
  return Tensor<Real>::parameter(std::move(shape), std::vector<Real>(shape_size(shape), Real(0)));
}

// ---------------------------------------------------------------------------
// Convolution / pooling primitives
// ---------------------------------------------------------------------------

// conv2d, stride 1, same padding. x: [C,H,W], w: [OC,C,KH,KW], b: [OC] -> [OC,H,W]
template <typename Real>
Tensor<Real> conv2d_same(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b) {
  if (x.rank() != 3) throw DimensionError("conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4) throw DimensionError("conv2d: weight must be [OC,C,KH,KW]");
  std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  std::size_t oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c)
    throw DimensionError("conv2d: channel axis mismatch, input has " + std::to_string(c) +
                         ", weight expects " + std::to_string(w.dim(1)));
  std::size_t ph = (kh - 1) / 2, pw = (kw - 1) / 2;
  std::vector<Real> out(oc * h * wd, Real(0));
  auto xv = x.values(), wv = w.values(), bv = b.values();
  for (std::size_t o = 0; o < oc; ++o) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < wd; ++j) {
        Real acc = bv[o];
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t ki = 0; ki < kh; ++ki) {
            std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(i + ki) - static_cast<std::ptrdiff_t>(ph);
            if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
            const Real* xr = &xv[(ci * h + yi) * wd];
            const Real* wr = &wv[((o * c + ci) * kh + ki) * kw];
            for (std::size_t kj = 0; kj < kw; ++kj) {
              std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + kj) - static_cast<std::ptrdiff_t>(pw);
              if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(wd)) continue;
              acc += xr[xj] * wr[kj];
            }
          }
        }
        out[(o * h + i) * wd + j] = acc;
      }
    }
  }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return Tensor<Real>(detail::make_result<Real>(
      {oc, h, wd}, std::move(out), {x, w, b},
      [xn, wn, bn, c, h, wd, oc, kh, kw, ph, pw](detail::Node<Real>& nd) {
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::size_t o = 0; o < oc; ++o) {
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < wd; ++j) {
              Real g = nd.grad[(o * h + i) * wd + j];
              if (g == Real(0)) continue;
              if (bn->requires_grad) bn->grad[o] += g;
              for (std::size_t ci = 0; ci < c; ++ci) {
                for (std::size_t ki = 0; ki < kh; ++ki) {
                  std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(i + ki) - static_cast<std::ptrdiff_t>(ph);
                  if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kj = 0; kj < kw; ++kj) {
                    std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + kj) - static_cast<std::ptrdiff_t>(pw);
                    if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(wd)) continue;
                    std::size_t xi = (ci * h + yi) * wd + xj;
                    std::size_t wi = ((o * c + ci) * kh + ki) * kw + kj;
                    if (xn->requires_grad) xn->grad[xi] += g * wn->value[wi];
                    if (wn->requires_grad) wn->grad[wi] += g * xn->value[xi];
                  }
                }
              }
            }
          }
        }
      }));
}

// maxpool2d with stride == window. x: [C,H,W] -> [C,H/win,W/win] (floor).
template <typename Real>
Tensor<Real> maxpool2d(const Tensor<Real>& x, std::size_t win) {
  if (x.rank() != 3) throw DimensionError("maxpool2d: input must be [C,H,W], got " + shape_str(x.shape()));
  if (win == 0) throw DimensionError("maxpool2d: window must be positive");
  std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::size_t oh = h / win, ow = w / win;
  if (oh == 0 || ow == 0) throw DimensionError("maxpool2d: input " + shape_str(x.shape()) + " smaller than window");
  std::vector<Real> out(c * oh * ow);
  auto idx = std::make_shared<std::vector<std::size_t>>(c * oh * ow);
  auto xv = x.values();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (ci * h + i * win) * w + j * win;
        Real bv = xv[best];
        for (std::size_t ki = 0; ki < win; ++ki)
          for (std::size_t kj = 0; kj < win; ++kj) {
            std::size_t p = (ci * h + i * win + ki) * w + j * win + kj;
            if (xv[p] > bv) {
              bv = xv[p];
              best = p;
            }
          }
        out[(ci * oh + i) * ow + j] = bv;
        (*idx)[(ci * oh + i) * ow + j] = best;
      }
  auto xn = x.node();
  return Tensor<Real>(detail::make_result<Real>(
      {c, oh, ow}, std::move(out), {x}, [xn, idx](detail::Node<Real>& nd) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < nd.grad.size(); ++i) xn->grad[(*idx)[i]] += nd.grad[i];
      }));
}

// conv1d. x: [C,T], w: [OC,C,K], b: [OC], zero padding `pad` -> [OC, T+2p-K+1]
template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    std::size_t pad) {
  if (x.rank() != 2) throw DimensionError("conv1d: input must be [C,T], got " + shape_str(x.shape()));
  std::size_t c = x.dim(0), t = x.dim(1);
  std::size_t oc = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c) throw DimensionError("conv1d: channel axis mismatch");
  if (t + 2 * pad < k) throw DimensionError("conv1d: input too short for kernel");
  std::size_t ot = t + 2 * pad - k + 1;
  std::vector<Real> out(oc * ot, Real(0));
  auto xv = x.values(), wv = w.values(), bv = b.values();
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t j = 0; j < ot; ++j) {
      Real acc = bv[o];
      for (std::size_t ci = 0; ci < c; ++ci) {
        const Real* wr = &wv[(o * c + ci) * k];
        const Real* xr = &xv[ci * t];
        for (std::size_t kk = 0; kk < k; ++kk) {
          std::ptrdiff_t p = static_cast<std::ptrdiff_t>(j + kk) - static_cast<std::ptrdiff_t>(pad);
          if (p < 0 || p >= static_cast<std::ptrdiff_t>(t)) continue;
          acc += xr[p] * wr[kk];
        }
      }
      out[o * ot + j] = acc;
    }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return Tensor<Real>(detail::make_result<Real>(
      {oc, ot}, std::move(out), {x, w, b}, [xn, wn, bn, c, t, oc, k, pad, ot](detail::Node<Real>& nd) {
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::size_t o = 0; o < oc; ++o)
          for (std::size_t j = 0; j < ot; ++j) {
            Real g = nd.grad[o * ot + j];
            if (g == Real(0)) continue;
            if (bn->requires_grad) bn->grad[o] += g;
            for (std::size_t ci = 0; ci < c; ++ci)
              for (std::size_t kk = 0; kk < k; ++kk) {
                std::ptrdiff_t p = static_cast<std::ptrdiff_t>(j + kk) - static_cast<std::ptrdiff_t>(pad);
                if (p < 0 || p >= static_cast<std::ptrdiff_t>(t)) continue;
                std::size_t xi = ci * t + p;
                std::size_t wi = (o * c + ci) * k + kk;
                if (xn->requires_grad) xn->grad[xi] += g * wn->value[wi];
                if (wn->requires_grad) wn->grad[wi] += g * xn->value[xi];
              }
          }
      }));
}

// VGG channel flatten: [C,T,F] -> [T, C*F] with y[t, c*F+f] = x[c,t,f]
template <typename Real>
Tensor<Real> flatten_channels_time_major(const Tensor<Real>& x) {
  if (x.rank() != 3) throw DimensionError("flatten_channels_time_major: need [C,T,F]");
  std::size_t c = x.dim(0), t = x.dim(1), f = x.dim(2);
  std::vector<Real> out(c * t * f);
  auto xv = x.values();
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t fi = 0; fi < f; ++fi) out[ti * (c * f) + ci * f + fi] = xv[(ci * t + ti) * f + fi];
  auto xn = x.node();
  return Tensor<Real>(detail::make_result<Real>(
      {t, c * f}, std::move(out), {x}, [xn, c, t, f](detail::Node<Real>& nd) {
        xn->ensure_grad();
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t ti = 0; ti < t; ++ti)
            for (std::size_t fi = 0; fi < f; ++fi)
              xn->grad[(ci * t + ti) * f + fi] += nd.grad[ti * (c * f) + ci * f + fi];
      }));
}

// Layer normalization over the last dimension.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps = Real(1e-5)) {
  std::size_t r = x.rank() == 1 ? 1 : x.dim(0);
  std::size_t c = x.rank() == 1 ? x.size() : x.dim(1);
  if (gamma.size() != c || beta.size() != c) throw DimensionError("layer_norm: affine size mismatch");
  std::vector<Real> out(x.size());
  auto mu = std::make_shared<std::vector<Real>>(r);
  auto rstd = std::make_shared<std::vector<Real>>(r);
  auto xv = x.values(), gv = gamma.values(), bv = beta.values();
  for (std::size_t i = 0; i < r; ++i) {
    const Real* xr = &xv[i * c];
    Real m = 0;
    for (std::size_t j = 0; j < c; ++j) m += xr[j];
    m /= Real(c);
    Real var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= Real(c);
    Real rs = Real(1) / std::sqrt(var + eps);
    (*mu)[i] = m;
    (*rstd)[i] = rs;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (xr[j] - m) * rs * gv[j] + bv[j];
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return Tensor<Real>(detail::make_result<Real>(
      x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, mu, rstd, r, c](detail::Node<Real>& nd) {
        if (xn->requires_grad) xn->ensure_grad();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          const Real* xr = &xn->value[i * c];
          const Real* g = &nd.grad[i * c];
          Real m = (*mu)[i], rs = (*rstd)[i];
          // dy/dxhat with xhat = (x-m)*rs
          Real sum_gh = 0, sum_gh_xhat = 0;
          for (std::size_t j = 0; j < c; ++j) {
            Real xhat = (xr[j] - m) * rs;
            Real gh = g[j] * gn->value[j];
            sum_gh += gh;
            sum_gh_xhat += gh * xhat;
            if (gn->requires_grad) gn->grad[j] += g[j] * xhat;
            if (bn->requires_grad) bn->grad[j] += g[j];
          }
          if (xn->requires_grad) {
            Real* gx = &xn->grad[i * c];
            for (std::size_t j = 0; j < c; ++j) {
              Real xhat = (xr[j] - m) * rs;
              Real gh = g[j] * gn->value[j];
              gx[j] += rs * (gh - sum_gh / Real(c) - xhat * sum_gh_xhat / Real(c));
            }
          }
        }
      }));
}

// ---------------------------------------------------------------------------
// LayerSpec: the Table II inventory as data, with a factory.
// ---------------------------------------------------------------------------

enum class LayerKind {
  conv2d,
  maxpool2d,
  conv1d,
  fc,
  blstm,
  lstm,
  gru,
  embedding,
  transformer_block,
  softmax,
  logsoftmax,
  tanh,
  leaky_relu,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::fc: return "fc";
    case LayerKind::blstm: return "blstm";
    case LayerKind::lstm: return "lstm";
    case LayerKind::gru: return "gru";
    case LayerKind::embedding: return "embedding";
    case LayerKind::transformer_block: return "transformer_block";
    case LayerKind::softmax: return "softmax";
    case LayerKind::logsoftmax: return "logsoftmax";
    case LayerKind::tanh: return "tanh";
    case LayerKind::leaky_relu: return "leaky_relu";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::fc;
  std::size_t in = 0;       // fc/lstm/gru/blstm input, conv in-channels, embedding vocab
  std::size_t out = 0;      // fc output, conv out-channels, hidden width, embedding dim
  std::size_t kernel = 0;   // conv kernel / pool window
  std::size_t pad = 0;      // conv1d padding
  std::size_t heads = 0;    // transformer
  std::size_t ffn = 0;      // transformer feed-forward width

  void validate() const {
    auto pos = [&](std::size_t v, const char* f) {
      if (v == 0)
        throw ConfigError(std::string("layer ") + layer_kind_name(kind) + ": field " + f + " must be positive");
    };
    switch (kind) {
      case LayerKind::conv2d:
        pos(in, "in"), pos(out, "out"), pos(kernel, "kernel");
        break;
      case LayerKind::maxpool2d:
        pos(kernel, "kernel");
        break;
      case LayerKind::conv1d:
        pos(in, "in"), pos(out, "out"), pos(kernel, "kernel");
        break;
      case LayerKind::fc:
      case LayerKind::lstm:
      case LayerKind::gru:
      case LayerKind::blstm:
        pos(in, "in"), pos(out, "out");
        break;
      case LayerKind::embedding:
        pos(in, "in"), pos(out, "out");
        break;
      case LayerKind::transformer_block:
        pos(out, "out"), pos(heads, "heads"), pos(ffn, "ffn");
        if (out % heads != 0) throw ConfigError("transformer_block: width not divisible by head count");
        break;
      default:
        break;
    }
  }
};

template <typename Real>
struct Layer {
  virtual ~Layer() = default;
  virtual Tensor<Real> forward(const Tensor<Real>& x) = 0;
  virtual void register_params(ParameterMap<Real>& m, const std::string& prefix) {}
  virtual std::size_t param_count() const { return 0; }
  virtual const char* kind() const = 0;
};

template <typename Real>
struct FcLayer final : Layer<Real> {
  Tensor<Real> w, b;
  FcLayer(std::size_t in, std::size_t out, Rng& rng)
      : w(init_uniform<Real>({out, in}, in, rng)), b(init_zeros_param<Real>({out})) {}
  Tensor<Real> forward(const Tensor<Real>& x) override { return linear(x, w, b); }
  void register_params(ParameterMap<Real>& m, const std::string& p) override {
    register_param(m, p + ".weight", w);
    register_param(m, p + ".bias", b);
  }
  std::size_t param_count() const override { return w.size() + b.size(); }
  const char* kind() const override { return "fc"; }
};

template <typename Real>
struct Conv2dLayer final : Layer<Real> {
  Tensor<Real> w, b;
  Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t k, Rng& rng)
      : w(init_uniform<Real>({out_ch, in_ch, k, k}, in_ch * k * k, rng)),
        b(init_zeros_param<Real>({out_ch})) {}
  Tensor<Real> forward(const Tensor<Real>& x) override { return conv2d_same(x, w, b); }
  void register_params(ParameterMap<Real>& m, const std::string& p) override {
    register_param(m, p + ".weight", w);
    register_param(m, p + ".bias", b);
  }
  std::size_t param_count() const override { return w.size() + b.size(); }
  const char* kind() const override { return "conv2d"; }
};

template <typename Real>
struct MaxPool2dLayer final : Layer<Real> {
  std::size_t win;
  explicit MaxPool2dLayer(std::size_t w) : win(w) {}
  Tensor<Real> forward(const Tensor<Real>& x) override { return maxpool2d(x, win); }
  const char* kind() const override { return "maxpool2d"; }
};

template <typename Real>
struct Conv1dLayer final : Layer<Real> {
  Tensor<Real> w, b;
  std::size_t pad;
  Conv1dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t k, std::size_t pad_, Rng& rng)
      : w(init_uniform<Real>({out_ch, in_ch, k}, in_ch * k, rng)),
        b(init_zeros_param<Real>({out_ch})),
        pad(pad_) {}
  Tensor<Real> forward(const Tensor<Real>& x) override { return conv1d(x, w, b, pad); }
  void register_params(ParameterMap<Real>& m, const std::string& p) override {
    register_param(m, p + ".weight", w);
    register_param(m, p + ".bias", b);
  }
  std::size_t param_count() const override { return w.size() + b.size(); }
  const char* kind() const override { return "conv1d"; }
};

template <typename Real>
struct EmbeddingLayer final : Layer<Real> {
  Tensor<Real> table;
  EmbeddingLayer(std::size_t vocab, std::size_t dim, Rng& rng)
      : table(init_uniform<Real>({vocab, dim}, dim, rng)) {}
  // Generic forward treats input values as ids (for the LayerSpec dispatch path).
  Tensor<Real> forward(const Tensor<Real>& x) override {
    std::vector<std::size_t> ids;
    ids.reserve(x.size());
    for (Real v : x.values()) ids.push_back(static_cast<std::size_t>(v));
    return embedding_rows(table, ids);
  }
  Tensor<Real> lookup(std::size_t id) { return embedding_row(table, id); }
  Tensor<Real> lookup(const std::vector<std::size_t>& ids) { return embedding_rows(table, ids); }
  void register_params(ParameterMap<Real>& m, const std::string& p) override {
    register_param(m, p + ".table", table);
  }
  std::size_t param_count() const override { return table.size(); }
  const char* kind() const override { return "embedding"; }
};

template <typename Real>
struct ActivationLayer final : Layer<Real> {
  LayerKind k;
  explicit ActivationLayer(LayerKind kk) : k(kk) {}
  Tensor<Real> forward(const Tensor<Real>& x) override {
    switch (k) {
      case LayerKind::softmax: return softmax_rows(x);
      case LayerKind::logsoftmax: return logsoftmax_rows(x);
      case LayerKind::tanh: return tanh_t(x);
      case LayerKind::leaky_relu: return leaky_relu_t(x);
      default: throw ContractError("not an activation layer");
    }
  }
  const char* kind() const override { return layer_kind_name(k); }
};

}  // namespace semcom::nn
