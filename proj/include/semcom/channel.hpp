// Physical channel of Eq. Y = h*X + w (AWGN / flat Rayleigh block fading),
// the learned channel encoder/decoder, and symbol accounting.
//
// SNR is defined against unit transmit power, so sigma^2 = 10^(-snr/10);
// frames are normalized to unit mean per-symbol power before transmission.
#pragma once

#include <complex>
#include <vector>

#include "semcom/speech_info.hpp"
#include "semcom/transformer.hpp"

namespace semcom::chan {

using nn::ParameterMap;
using nn::Tensor;

enum class ChannelKind { awgn, rayleigh };

inline const char* channel_kind_name(ChannelKind k) {
  return k == ChannelKind::awgn ? "awgn" : "rayleigh";
}

inline ChannelKind parse_channel_kind(const std::string& s) {
  if (s == "awgn") return ChannelKind::awgn;
  if (s == "rayleigh") return ChannelKind::rayleigh;
  throw ConfigError("unknown channel kind: " + s);
}

struct ChannelConfig {
  ChannelKind kind = ChannelKind::awgn;
  double snr_db = 10.0;  // +inf = noiseless sentinel
  std::uint64_t seed = 0;

  void validate() const {
    if (std::isnan(snr_db) || (std::isinf(snr_db) && snr_db < 0))
      throw ConfigError("channel snr_db must be finite or +inf");
  }
};

struct ChannelDraw {
  std::complex<double> h{1.0, 0.0};
  double sigma2 = 0.0;
  std::vector<std::complex<double>> noise;
};

struct ComplexSymbolFrame {
  std::vector<std::complex<double>> symbols;  // 32 per kept token by default
  double power_scale = 1.0;                   // multiplier applied for normalization
};

inline ChannelDraw draw_channel(const ChannelConfig& cfg, std::size_t n_symbols,
                                std::uint64_t stream_tag) {
  cfg.validate();
  ChannelDraw d;
  Rng rng({cfg.seed, stream_tag, 0x6368616eULL});
  if (cfg.kind == ChannelKind::rayleigh) {
    // CN(0,1): E|h|^2 = 1
    d.h = std::complex<double>(rng.normal() / std::sqrt(2.0), rng.normal() / std::sqrt(2.0));
  }
  d.sigma2 = std::isinf(cfg.snr_db) ? 0.0 : std::pow(10.0, -cfg.snr_db / 10.0);
  d.noise.resize(n_symbols);
  if (d.sigma2 > 0.0) {
    double s = std::sqrt(d.sigma2 / 2.0);
    for (auto& w : d.noise) w = std::complex<double>(s * rng.normal(), s * rng.normal());
  }
  return d;
}

inline std::pair<ComplexSymbolFrame, ChannelDraw> transmit(const ComplexSymbolFrame& x,
                                                           const ChannelConfig& cfg,
                                                           std::uint64_t stream_tag = 0) {
  ChannelDraw d = draw_channel(cfg, x.symbols.size(), stream_tag);
  ComplexSymbolFrame y;
  y.symbols.resize(x.symbols.size());
  for (std::size_t i = 0; i < x.symbols.size(); ++i) y.symbols[i] = d.h * x.symbols[i] + d.noise[i];
  return {std::move(y), std::move(d)};
}

// Differentiable channel application for stage-2 training: x is [c, 2S] with
// (re, im) pairs along each row; h and the noise realization are constants.
template <typename Real>
Tensor<Real> apply_channel_t(const Tensor<Real>& x, const ChannelDraw& d) {
  if (x.size() % 2 != 0) throw DimensionError("apply_channel_t: odd number of reals");
  std::size_t n = x.size() / 2;
  if (d.noise.size() < n) throw ContractError("apply_channel_t: draw is too short");
  const Real hr = static_cast<Real>(d.h.real()), hi = static_cast<Real>(d.h.imag());
  std::vector<Real> v(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < n; ++i) {
    Real re = xv[2 * i], im = xv[2 * i + 1];
    v[2 * i] = hr * re - hi * im + static_cast<Real>(d.noise[i].real());
    v[2 * i + 1] = hr * im + hi * re + static_cast<Real>(d.noise[i].imag());
  }
  auto xn = x.node();
  return Tensor<Real>(nn::detail::make_result<Real>(
      x.shape(), std::move(v), {x}, [xn, n, hr, hi](nn::detail::Node<Real>& nd) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          Real gre = nd.grad[2 * i], gim = nd.grad[2 * i + 1];
          xn->grad[2 * i] += gre * hr + gim * hi;
          xn->grad[2 * i + 1] += -gre * hi + gim * hr;
        }
      }));
}

// Normalize a [c, 2S] frame to unit mean per-symbol power (differentiable).
template <typename Real>
Tensor<Real> power_normalize(const Tensor<Real>& x) {
  if (x.size() == 0) return x;
  std::size_t n_symbols = x.size() / 2;
  Tensor<Real> total = nn::sum(nn::mul(x, x));
  Tensor<Real> mean_power =
      nn::add(nn::scale(total, Real(1) / static_cast<Real>(n_symbols)),
              Tensor<Real>::scalar(Real(1e-12)));
  return nn::mul_by_scalar(x, nn::rsqrt_t(mean_power));
}

// ---------------------------------------------------------------------------
// Learned channel codec. Encoder: per token 1024 -> FC(256, relu) -> FC(64),
// 32 (re, im) pairs. Decoder: 64 -> FC(256, leaky) -> FC(1024, leaky).
// ---------------------------------------------------------------------------

struct ChannelCodecConfig {
  std::size_t latent_dim = 1024;
  std::size_t hidden = 256;
  std::size_t symbol_dim = 64;  // reals per token; 32 complex symbols
};

template <typename Real>
struct ChannelEncoder {
  nn::FcLayer<Real> fc1, fc2;
  ChannelCodecConfig cfg;

  ChannelEncoder(const ChannelCodecConfig& c, Rng& rng)
      : fc1(c.latent_dim, c.hidden, rng), fc2(c.hidden, c.symbol_dim, rng), cfg(c) {}

  // L: [c, latent] -> normalized symbol frame [c, symbol_dim]
  Tensor<Real> forward(const Tensor<Real>& latent) {
    Tensor<Real> h = nn::relu_t(fc1.forward(latent));
    Tensor<Real> x = fc2.forward(h);
    return power_normalize(x);
  }

  void register_params(ParameterMap<Real>& m, const std::string& p) {
    fc1.register_params(m, p + ".fc1");
    fc2.register_params(m, p + ".fc2");
  }
};

template <typename Real>
struct ChannelDecoder {
  nn::FcLayer<Real> fc1, fc2;
  ChannelCodecConfig cfg;

  ChannelDecoder(const ChannelCodecConfig& c, Rng& rng)
      : fc1(c.symbol_dim, c.hidden, rng), fc2(c.hidden, c.latent_dim, rng), cfg(c) {}

  // Y: [c, symbol_dim] -> recovered latent [c, latent]
  Tensor<Real> forward(const Tensor<Real>& y) {
    if (y.rank() != 2 || y.dim(1) != cfg.symbol_dim)
      throw DimensionError("channel_decode: expected [c," + std::to_string(cfg.symbol_dim) +
                           "], got " + nn::shape_str(y.shape()));
    Tensor<Real> h = nn::leaky_relu_t(fc1.forward(y));
    return nn::leaky_relu_t(fc2.forward(h));
  }

  void register_params(ParameterMap<Real>& m, const std::string& p) {
    fc1.register_params(m, p + ".fc1");
    fc2.register_params(m, p + ".fc2");
  }
};

// Tensor [c, 2S] -> complex frame (eval path).
template <typename Real>
ComplexSymbolFrame frame_from_tensor(const Tensor<Real>& x) {
  ComplexSymbolFrame f;
  auto v = x.values();
  f.symbols.reserve(v.size() / 2);
  for (std::size_t i = 0; i + 1 < v.size(); i += 2)
    f.symbols.emplace_back(static_cast<double>(v[i]), static_cast<double>(v[i + 1]));
  return f;
}

template <typename Real>
Tensor<Real> tensor_from_frame(const ComplexSymbolFrame& f, std::size_t tokens, std::size_t symbol_dim) {
  std::vector<Real> v(tokens * symbol_dim);
  for (std::size_t i = 0; i < f.symbols.size(); ++i) {
    v[2 * i] = static_cast<Real>(f.symbols[i].real());
    v[2 * i + 1] = static_cast<Real>(f.symbols[i].imag());
  }
  return Tensor<Real>::from({tokens, symbol_dim}, std::move(v));
}

}  // namespace semcom::chan
