// Audio front end: log mel filterbank features, speed/noise augmentation,
// frame-level pitch and power for the additional-information path.
//
// Framing: 25 ms Hamming window, 10 ms shift at 16 kHz (400/160 samples),
// 512-point FFT, 40 triangular HTK-mel filters on the power spectrum.
#pragma once

#include <array>
#include <complex>
#include <vector>

#include "semcom/audio.hpp"

namespace semcom::dsp {

struct FbankConfig {
  std::size_t n_mels = 40;
  std::size_t n_fft = 512;
  std::size_t win_length = 400;
  std::size_t hop_length = 160;
  double log_floor = 1e-10;
  bool mean_normalize = false;  // per-utterance mean subtraction (off by default)
};

struct SpectrumSequence {
  std::vector<double> frames;  // row-major [n_frames, n_mels]
  std::size_t n_frames = 0;
  std::size_t n_mels = 40;
  int frame_shift_ms = 10;
  int window_ms = 25;
  std::string utterance_id;

  double at(std::size_t t, std::size_t m) const { return frames[t * n_mels + m]; }
};

inline std::size_t frame_count_for(std::size_t samples, const FbankConfig& cfg = {}) {
  if (samples < cfg.win_length) return 0;
  return (samples - cfg.win_length) / cfg.hop_length + 1;
}

// In-place iterative radix-2 FFT.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * kPi / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t j2 = 0; j2 < len / 2; ++j2) {
        auto u = a[i + j2];
        auto v = a[i + j2 + len / 2] * w;
        a[i + j2] = u + v;
        a[i + j2 + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filterbank as per-filter weights over FFT bins; also returns the
// filter center frequencies (used by tests to locate tone energy).
inline std::vector<std::vector<double>> mel_filterbank(std::size_t n_mels, std::size_t n_fft,
                                                       double sample_rate,
                                                       std::vector<double>* centers_hz = nullptr) {
  double f_lo = 0.0, f_hi = sample_rate / 2.0;
  double m_lo = hz_to_mel(f_lo), m_hi = hz_to_mel(f_hi);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  if (centers_hz) centers_hz->assign(edges.begin() + 1, edges.end() - 1);

  std::size_t n_bins = n_fft / 2 + 1;
  std::vector<std::vector<double>> filters(n_mels, std::vector<double>(n_bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      if (f > left && f < center)
        filters[m][k] = (f - left) / (center - left);
      else if (f >= center && f < right)
        filters[m][k] = (right - f) / (right - center);
    }
  }
  return filters;
}

inline SpectrumSequence compute_fbank(const AudioClip& clip, const FbankConfig& cfg = {}) {
  if (clip.sample_rate <= 0) throw InputError("fbank: non-positive sample rate");
  if (clip.samples.size() < cfg.win_length)
    throw InputError("fbank: clip " + clip.utterance_id + " shorter than one window (" +
                     std::to_string(clip.samples.size()) + " samples)");

  std::size_t n_frames = frame_count_for(clip.samples.size(), cfg);
  auto filters = mel_filterbank(cfg.n_mels, cfg.n_fft, clip.sample_rate);

  std::vector<double> hamming(cfg.win_length);
  for (std::size_t i = 0; i < cfg.win_length; ++i)
    hamming[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / static_cast<double>(cfg.win_length - 1));

  SpectrumSequence out;
  out.n_frames = n_frames;
  out.n_mels = cfg.n_mels;
  out.utterance_id = clip.utterance_id;
  out.frames.resize(n_frames * cfg.n_mels);

  std::vector<std::complex<double>> buf(cfg.n_fft);
  std::size_t n_bins = cfg.n_fft / 2 + 1;
  std::vector<double> power(n_bins);
  for (std::size_t t = 0; t < n_frames; ++t) {
    std::size_t off = t * cfg.hop_length;
    for (std::size_t i = 0; i < cfg.n_fft; ++i)
      buf[i] = i < cfg.win_length ? clip.samples[off + i] * hamming[i] : 0.0;
    fft_inplace(buf);
    for (std::size_t k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto& f = filters[m];
      for (std::size_t k = 0; k < n_bins; ++k) e += f[k] * power[k];
      out.frames[t * cfg.n_mels + m] = std::log(std::max(e, cfg.log_floor));
    }
  }

  if (cfg.mean_normalize) {
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double mu = 0.0;
      for (std::size_t t = 0; t < n_frames; ++t) mu += out.frames[t * cfg.n_mels + m];
      mu /= static_cast<double>(n_frames);
      for (std::size_t t = 0; t < n_frames; ++t) out.frames[t * cfg.n_mels + m] -= mu;
    }
  }
  return out;
}

// Speed perturbation by linear-interpolation resampling; pitch shifts with
// speed. Output length = floor(len/factor). factor 1.0 is bit-exact identity.
inline AudioClip augment_speed(const AudioClip& clip, double factor) {
  if (factor <= 0.0) throw InputError("augment_speed: factor must be positive");
  AudioClip out = clip;
  if (factor == 1.0) return out;
  std::size_t n = static_cast<std::size_t>(static_cast<double>(clip.samples.size()) / factor);
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double src = static_cast<double>(i) * factor;
    auto i0 = static_cast<std::size_t>(src);
    double frac = src - static_cast<double>(i0);
    std::size_t i1 = i0 + 1 < clip.samples.size() ? i0 + 1 : i0;
    out.samples[i] = clip.samples[i0] * (1.0 - frac) + clip.samples[i1] * frac;
  }
  return out;
}

// Additive white Gaussian noise at the given SNR. snr_db = +inf is the
// no-noise sentinel and returns the clip unchanged.
inline AudioClip augment_noise(const AudioClip& clip, double snr_db, std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0) return clip;
  if (!std::isfinite(snr_db)) throw InputError("augment_noise: snr_db must be finite or +inf");
  double power = 0.0;
  for (double s : clip.samples) power += s * s;
  power /= static_cast<double>(clip.samples.size());
  if (power <= 0.0) throw InputError("augment_noise: silent input (zero power)");
  double noise_power = power / std::pow(10.0, snr_db / 10.0);
  double sigma = std::sqrt(noise_power);
  AudioClip out = clip;
  Rng rng({seed, fnv1a(clip.utterance_id), 0x6e6f697365ULL});
  for (auto& s : out.samples) s += sigma * rng.normal();
  return out;
}

struct PitchPower {
  std::vector<double> f0;         // Hz, 0 for unvoiced frames
  std::vector<double> log_power;  // ln of mean squared amplitude, floored
};

// Frame-aligned pitch (autocorrelation peak in the 60-400 Hz lag band, over a
// 512-sample window centered on the frame) and log power.
inline PitchPower extract_pitch_power(const AudioClip& clip, const FbankConfig& cfg = {}) {
  std::size_t n_frames = frame_count_for(clip.samples.size(), cfg);
  if (n_frames == 0)
    throw InputError("extract_pitch_power: clip shorter than one window");
  PitchPower out;
  out.f0.resize(n_frames);
  out.log_power.resize(n_frames);

  const double fs = clip.sample_rate;
  const auto lag_min = static_cast<std::size_t>(fs / 400.0);
  const auto lag_max = static_cast<std::size_t>(fs / 60.0);
  const std::size_t pitch_win = 512;

  for (std::size_t t = 0; t < n_frames; ++t) {
    std::size_t off = t * cfg.hop_length;
    double energy = 0.0;
    for (std::size_t i = 0; i < cfg.win_length; ++i) energy += clip.samples[off + i] * clip.samples[off + i];
    energy /= static_cast<double>(cfg.win_length);
    out.log_power[t] = std::log(std::max(energy, 1e-10));

    // center a wider analysis window on this frame for autocorrelation
    std::ptrdiff_t center = static_cast<std::ptrdiff_t>(off + cfg.win_length / 2);
    std::ptrdiff_t lo = center - static_cast<std::ptrdiff_t>(pitch_win / 2);
    if (lo < 0) lo = 0;
    std::size_t hi = std::min<std::size_t>(lo + pitch_win, clip.samples.size());
    const double* x = clip.samples.data() + lo;
    std::size_t n = hi - static_cast<std::size_t>(lo);

    double best_r = 0.0;
    std::size_t best_lag = 0;
    if (energy > 1e-8 && n > lag_max + 8) {
      for (std::size_t lag = lag_min; lag <= lag_max && lag < n; ++lag) {
        double num = 0.0, e0 = 0.0, e1 = 0.0;
        std::size_t m = n - lag;
        for (std::size_t i = 0; i < m; ++i) {
          num += x[i] * x[i + lag];
          e0 += x[i] * x[i];
          e1 += x[i + lag] * x[i + lag];
        }
        double denom = std::sqrt(e0 * e1);
        double r = denom > 0 ? num / denom : 0.0;
        if (r > best_r) {
          best_r = r;
          best_lag = lag;
        }
      }
    }
    out.f0[t] = (best_r > 0.5 && best_lag > 0) ? fs / static_cast<double>(best_lag) : 0.0;
  }
  return out;
}

}  // namespace semcom::dsp
