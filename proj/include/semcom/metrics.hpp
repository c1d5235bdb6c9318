// Evaluation metrics: WER, sentence similarity (pluggable embedder),
// DTW-aligned MCD, and the transmission-efficiency accounting.
#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "semcom/common.hpp"
#include "semcom/dsp.hpp"
#include "semcom/tokenizer.hpp"

namespace semcom::metrics {

// ---------------------------------------------------------------------------
// WER = (S + D + I) / N under minimum word edit distance, uniform costs.
// Ties prefer substitution over insertion+deletion.
// ---------------------------------------------------------------------------

struct WerBreakdown {
  std::size_t substitutions = 0, deletions = 0, insertions = 0, reference_words = 0;
  double wer = 0.0;
};

inline WerBreakdown wer_aligned(const std::vector<std::string>& ref,
                                const std::vector<std::string>& hyp) {
  if (ref.empty()) throw InputError("wer: empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      std::size_t del = at(i - 1, j) + 1;
      std::size_t ins = at(i, j - 1) + 1;
      at(i, j) = std::min({sub, del, ins});
    }

  WerBreakdown out;
  out.reference_words = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++out.substitutions;
      --i, --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.deletions;
      --i;
    } else {
      ++out.insertions;
      --j;
    }
  }
  out.wer = static_cast<double>(out.substitutions + out.deletions + out.insertions) /
            static_cast<double>(n);
  return out;
}

inline double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  return wer_aligned(ref, hyp).wer;
}

inline double wer(const std::string& ref_text, const std::string& hyp_text) {
  return wer(tok::split_words(ref_text), tok::split_words(hyp_text));
}

// ---------------------------------------------------------------------------
// Sentence similarity: cosine of embedder outputs.
// ---------------------------------------------------------------------------

struct SentenceEmbedder {
  virtual ~SentenceEmbedder() = default;
  virtual std::vector<double> embed(const std::string& text) const = 0;
};

// Deterministic test embedder: subword-count vector over a vocabulary.
struct SubwordCountEmbedder final : SentenceEmbedder {
  const tok::Vocabulary* vocab;
  explicit SubwordCountEmbedder(const tok::Vocabulary& v) : vocab(&v) {}
  std::vector<double> embed(const std::string& text) const override {
    std::vector<double> counts(vocab->total_size(), 0.0);
    for (auto id : tok::encode(text, *vocab)) counts[id] += 1.0;
    return counts;
  }
};

inline double sentence_similarity(const std::string& hyp, const std::string& ref,
                                  const SentenceEmbedder& embedder) {
  if (hyp.empty() || ref.empty()) throw InputError("sentence_similarity: empty text");
  auto a = embedder.embed(hyp);
  auto b = embedder.embed(ref);
  if (a.size() != b.size()) throw MetricError("embedder returned inconsistent dimensions");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0) throw MetricError("zero-norm sentence embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// MCD over a DTW alignment. Paper-literal form: 10/ln10 * sqrt(2 * sum of
// Euclidean norms along the path). The classical variant (sum of squared
// coefficient differences per aligned pair, then per-pair sqrt) is available
// behind a switch.
// ---------------------------------------------------------------------------

enum class McdVariant { paper_literal, classical };

inline double frame_distance(const dsp::SpectrumSequence& a, std::size_t i,
                             const dsp::SpectrumSequence& b, std::size_t j) {
  double acc = 0;
  for (std::size_t m = 0; m < a.n_mels; ++m) {
    double d = a.at(i, m) - b.at(j, m);
    acc += d * d;
  }
  return std::sqrt(acc);
}

struct DtwResult {
  double path_cost = 0.0;                                  // sum of pairwise costs over the path
  std::vector<std::pair<std::size_t, std::size_t>> path;   // aligned index pairs
};

inline DtwResult dtw_align(const dsp::SpectrumSequence& a, const dsp::SpectrumSequence& b) {
  if (a.n_frames == 0 || b.n_frames == 0) throw InputError("dtw: empty spectrum sequence");
  if (a.n_mels != b.n_mels) throw DimensionError("dtw: coefficient count mismatch");
  const std::size_t n = a.n_frames, m = b.n_frames;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dp(n * m, inf);
  std::vector<unsigned char> from(n * m, 0);  // 0 diag, 1 up(i-1), 2 left(j-1)
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double c = frame_distance(a, i, b, j);
      if (i == 0 && j == 0) {
        dp[0] = c;
        continue;
      }
      double best = inf;
      unsigned char dir = 0;
      if (i > 0 && j > 0 && dp[(i - 1) * m + (j - 1)] < best) best = dp[(i - 1) * m + (j - 1)], dir = 0;
      if (i > 0 && dp[(i - 1) * m + j] < best) best = dp[(i - 1) * m + j], dir = 1;
      if (j > 0 && dp[i * m + (j - 1)] < best) best = dp[i * m + (j - 1)], dir = 2;
      dp[i * m + j] = best + c;
      from[i * m + j] = dir;
    }

  DtwResult res;
  res.path_cost = dp[n * m - 1];
  std::size_t i = n - 1, j = m - 1;
  while (true) {
    res.path.emplace_back(i, j);
    if (i == 0 && j == 0) break;
    switch (from[i * m + j]) {
      case 0: --i, --j; break;
      case 1: --i; break;
      default: --j; break;
    }
  }
  std::reverse(res.path.begin(), res.path.end());
  return res;
}

inline double dtw_mcd(const dsp::SpectrumSequence& s, const dsp::SpectrumSequence& s_hat,
                      McdVariant variant = McdVariant::paper_literal) {
  DtwResult r = dtw_align(s, s_hat);
  constexpr double k = 10.0 / 2.302585092994045684;  // 10 / ln(10)
  if (variant == McdVariant::paper_literal) return k * std::sqrt(2.0 * r.path_cost);
  // classical: mean over aligned pairs of sqrt(2 * squared-diff sum)
  double acc = 0;
  for (auto [i, j] : r.path) {
    double d2 = 0;
    for (std::size_t m = 0; m < s.n_mels; ++m) {
      double d = s.at(i, m) - s_hat.at(j, m);
      d2 += d * d;
    }
    acc += std::sqrt(2.0 * d2);
  }
  return k * acc / static_cast<double>(r.path.size());
}

// ---------------------------------------------------------------------------
// Transmission efficiency. Baseline constants are the cited Table numbers,
// stored, not recomputed.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSymbolsPerToken = 32;
inline constexpr double kBaselineDeepscSr = 7143.0;
inline constexpr double kBaselineSeDeepsc = 2225.0;
inline constexpr double kBaselineDeepscS = 655360.0;

struct EfficiencyReport {
  std::vector<std::size_t> symbols_per_utterance;  // 32 * c
  double mean_symbols = 0.0;
  std::size_t side_channel_bytes = 0;
  double ratio_vs_deepsc_sr = 0.0;
  double ratio_vs_se_deepsc = 0.0;
  double ratio_vs_deepsc_s = 0.0;
};

inline EfficiencyReport efficiency_report(const std::vector<std::size_t>& kept_counts,
                                          std::size_t side_bytes = 0,
                                          std::size_t symbols_per_token = kSymbolsPerToken) {
  EfficiencyReport r;
  r.side_channel_bytes = side_bytes;
  double total = 0;
  for (auto c : kept_counts) {
    r.symbols_per_utterance.push_back(symbols_per_token * c);
    total += static_cast<double>(symbols_per_token * c);
  }
  r.mean_symbols = kept_counts.empty() ? 0.0 : total / static_cast<double>(kept_counts.size());
  r.ratio_vs_deepsc_sr = r.mean_symbols / kBaselineDeepscSr;
  r.ratio_vs_se_deepsc = r.mean_symbols / kBaselineSeDeepsc;
  r.ratio_vs_deepsc_s = r.mean_symbols / kBaselineDeepscS;
  return r;
}

}  // namespace semcom::metrics
