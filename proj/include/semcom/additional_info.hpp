// Additional speech information path: CTC posterior head over H, Viterbi
// best-path alignment for token spans, and per-phoneme duration/pitch/power
// aggregation into the side-channel payload D.
//
// CTC class layout over vocab size V: [0, V) subwords, V special, V+1 blank,
// V+2 reserved padding class (the 1003-way head for V = 1000).
#pragma once

#include <limits>
#include <vector>

#include "semcom/dsp.hpp"
#include "semcom/layers.hpp"
#include "semcom/losses.hpp"
#include "semcom/speech_info.hpp"
#include "semcom/tokenizer.hpp"

namespace semcom::align {

using nn::Tensor;

inline std::size_t ctc_class_count(std::size_t vocab_entries) { return vocab_entries + 3; }
inline std::size_t ctc_blank_id(std::size_t vocab_entries) { return vocab_entries + 1; }

// FC + logsoftmax over the intermediate features H.
template <typename Real>
struct CtcHead {
  nn::FcLayer<Real> fc;
  std::size_t classes;

  CtcHead(std::size_t feature_width, std::size_t vocab_entries, Rng& rng)
      : fc(feature_width, ctc_class_count(vocab_entries), rng), classes(ctc_class_count(vocab_entries)) {}

  Tensor<Real> forward(const Tensor<Real>& h) { return nn::logsoftmax_rows(fc.forward(h)); }

  void register_params(nn::ParameterMap<Real>& m, const std::string& p) {
    fc.register_params(m, p + ".fc");
  }
};

struct TokenSpan {
  std::size_t start = 0;  // inclusive, reduced frames
  std::size_t end = 0;    // inclusive
};

// Max-probability CTC alignment via Viterbi over the expanded label topology;
// returns each token's emission span. Spans partition a subset of frames.
inline std::vector<TokenSpan> viterbi_align(const std::vector<double>& log_posteriors,
                                            std::size_t t_len, std::size_t k_len,
                                            const std::vector<std::size_t>& tokens,
                                            std::size_t blank) {
  if (tokens.empty()) throw AlignmentError("viterbi_align: empty token sequence");
  for (auto t : tokens)
    if (t >= k_len || t == blank) throw AlignmentError("viterbi_align: bad token id");
  const auto e = train::detail::ctc_expand(tokens, blank);
  const std::size_t s_len = e.size();
  const double ninf = -std::numeric_limits<double>::infinity();
  auto y = [&](std::size_t t, std::size_t k) { return log_posteriors[t * k_len + k]; };
  auto skip_ok = [&](std::size_t s) { return s >= 2 && e[s] != blank && e[s] != e[s - 2]; };

  std::vector<double> delta(t_len * s_len, ninf);
  std::vector<unsigned char> psi(t_len * s_len, 0);  // 0 stay, 1 prev, 2 skip
  delta[0] = y(0, e[0]);
  if (s_len > 1) delta[1] = y(0, e[1]);
  for (std::size_t t = 1; t < t_len; ++t)
    for (std::size_t s = 0; s < s_len; ++s) {
      double best = delta[(t - 1) * s_len + s];
      unsigned char arg = 0;
      if (s >= 1 && delta[(t - 1) * s_len + s - 1] > best) {
        best = delta[(t - 1) * s_len + s - 1];
        arg = 1;
      }
      if (skip_ok(s) && delta[(t - 1) * s_len + s - 2] > best) {
        best = delta[(t - 1) * s_len + s - 2];
        arg = 2;
      }
      delta[t * s_len + s] = best == ninf ? ninf : best + y(t, e[s]);
      psi[t * s_len + s] = arg;
    }

  std::size_t s = s_len - 1;
  if (s_len > 1 && delta[(t_len - 1) * s_len + s_len - 2] > delta[(t_len - 1) * s_len + s_len - 1])
    s = s_len - 2;
  if (delta[(t_len - 1) * s_len + s] == ninf)
    throw AlignmentError("viterbi_align: sequence of " + std::to_string(tokens.size()) +
                         " tokens is infeasible for " + std::to_string(t_len) + " frames");

  std::vector<std::size_t> state_at(t_len);
  for (std::size_t t = t_len; t-- > 0;) {
    state_at[t] = s;
    if (t > 0) s -= psi[t * s_len + s];
  }

  std::vector<TokenSpan> spans(tokens.size());
  std::vector<bool> seen(tokens.size(), false);
  for (std::size_t t = 0; t < t_len; ++t) {
    std::size_t st = state_at[t];
    if (st % 2 == 1) {
      std::size_t tok = (st - 1) / 2;
      if (!seen[tok]) {
        spans[tok].start = t;
        seen[tok] = true;
      }
      spans[tok].end = t;
    }
  }
  return spans;
}

// Viterbi path log-probability (used by the enumeration oracle tests).
inline double viterbi_best_logprob(const std::vector<double>& log_posteriors, std::size_t t_len,
                                   std::size_t k_len, const std::vector<std::size_t>& tokens,
                                   std::size_t blank) {
  const auto e = train::detail::ctc_expand(tokens, blank);
  const std::size_t s_len = e.size();
  const double ninf = -std::numeric_limits<double>::infinity();
  auto y = [&](std::size_t t, std::size_t k) { return log_posteriors[t * k_len + k]; };
  auto skip_ok = [&](std::size_t s) { return s >= 2 && e[s] != blank && e[s] != e[s - 2]; };
  std::vector<double> delta(t_len * s_len, ninf);
  delta[0] = y(0, e[0]);
  if (s_len > 1) delta[1] = y(0, e[1]);
  for (std::size_t t = 1; t < t_len; ++t)
    for (std::size_t s = 0; s < s_len; ++s) {
      double best = delta[(t - 1) * s_len + s];
      if (s >= 1) best = std::max(best, delta[(t - 1) * s_len + s - 1]);
      if (skip_ok(s)) best = std::max(best, delta[(t - 1) * s_len + s - 2]);
      delta[t * s_len + s] = best == ninf ? ninf : best + y(t, e[s]);
    }
  double out = delta[(t_len - 1) * s_len + s_len - 1];
  if (s_len > 1) out = std::max(out, delta[(t_len - 1) * s_len + s_len - 2]);
  return out;
}

// Duration/pitch/power aggregation. Durations come from gap-closed spans
// (token i runs to the start of token i+1) so they partition the padded
// timeline; each token's spectrum-frame extent (x4 for the VGG reduction)
// splits evenly across its phonemes, remainder to the last.
inline AdditionalSpeechInfo build_additional_info(
    const std::vector<TokenSpan>& spans, const dsp::PitchPower& frame_info,
    const tok::PhonemeSequence& phonemes, std::size_t reduced_len, int speaker_id,
    std::size_t reduction = 4) {
  if (spans.size() != phonemes.boundaries.size())
    throw ContractError("build_additional_info: span/token count mismatch");

  AdditionalSpeechInfo d;
  d.speaker_id = static_cast<std::uint16_t>(speaker_id);
  const std::size_t n_frames = frame_info.f0.size();

  for (std::size_t i = 0; i < spans.size(); ++i) {
    std::size_t ext_start = i == 0 ? 0 : spans[i].start;
    std::size_t ext_end = i + 1 < spans.size() ? spans[i + 1].start - 1 : reduced_len - 1;
    if (ext_end < ext_start) ext_end = ext_start;
    std::size_t spec_start = ext_start * reduction;
    std::size_t spec_len = (ext_end - ext_start + 1) * reduction;

    auto [ph_start, ph_count] = phonemes.boundaries[i];
    std::size_t base = spec_len / ph_count;
    std::size_t cursor = spec_start;
    for (std::size_t p = 0; p < ph_count; ++p) {
      std::size_t dur = p + 1 == ph_count ? spec_len - base * (ph_count - 1) : base;
      if (dur == 0) dur = 1;  // keep the >=1 invariant even for tiny spans

      double pitch_sum = 0.0, power_sum = 0.0;
      std::size_t voiced = 0, counted = 0;
      for (std::size_t f = cursor; f < cursor + dur && f < n_frames; ++f) {
        if (frame_info.f0[f] > 0.0) {
          pitch_sum += frame_info.f0[f];
          ++voiced;
        }
        power_sum += frame_info.log_power[f];
        ++counted;
      }
      PhonemeInfo info;
      info.duration_frames = static_cast<std::uint16_t>(dur);
      info.pitch_hz = voiced ? static_cast<float>(pitch_sum / static_cast<double>(voiced)) : 0.0f;
      info.power = counted ? static_cast<float>(power_sum / static_cast<double>(counted))
                           : static_cast<float>(std::log(1e-10));
      d.phonemes.push_back(info);
      cursor += dur;
    }
  }
  return d;
}

}  // namespace semcom::align
