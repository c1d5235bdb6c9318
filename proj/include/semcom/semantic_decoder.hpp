// Receiver-side token prediction: per-step posteriors over the recovered
// latents, beam search over k hypotheses, and the recurrent language-model
// semantic corrector fused into the search with weight lambda_lm.
#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "semcom/recurrent.hpp"
#include "semcom/tokenizer.hpp"

namespace semcom::model {

using nn::ParameterMap;
using nn::Tensor;

// FC + logsoftmax over recovered latents: [c, latent] -> [c, V+1].
template <typename Real>
struct SemanticDecoderHead {
  nn::FcLayer<Real> fc;
  std::size_t vocab_entries;

  SemanticDecoderHead(std::size_t latent_dim, std::size_t vocab_entries_, Rng& rng)
      : fc(latent_dim, vocab_entries_ + 1, rng), vocab_entries(vocab_entries_) {}

  Tensor<Real> step_posteriors(const Tensor<Real>& latents) {
    if (latents.size() == 0) return Tensor<Real>::zeros({0, vocab_entries + 1});
    return nn::logsoftmax_rows(fc.forward(latents));
  }

  void register_params(ParameterMap<Real>& m, const std::string& p) {
    fc.register_params(m, p + ".fc");
  }
};

struct CorrectorConfig {
  std::size_t vocab_entries = 1000;  // posterior width = entries + 1
  std::size_t emb_dim = 128;
  std::size_t lstm_hidden = 2048;
  std::size_t fc_width = 512;
};

// embedding(128) -> 2x LSTM(2048) -> FC(512, leaky) -> 1001-way logsoftmax.
template <typename Real>
struct CorrectorLM {
  CorrectorConfig cfg;
  nn::EmbeddingLayer<Real> emb;
  nn::LstmCell<Real> lstm1, lstm2;
  nn::FcLayer<Real> fc, proj;

  CorrectorLM(const CorrectorConfig& c, Rng& rng)
      : cfg(c),
        emb(c.vocab_entries + 1, c.emb_dim, rng),
        lstm1(c.emb_dim, c.lstm_hidden, rng),
        lstm2(c.lstm_hidden, c.lstm_hidden, rng),
        fc(c.lstm_hidden, c.fc_width, rng),
        proj(c.fc_width, c.vocab_entries + 1, rng) {}

  struct State {
    nn::LstmState<Real> s1, s2;
  };

  State start() const { return {lstm1.initial_state(), lstm2.initial_state()}; }

  // Advance on `token`; returns the log-distribution over the next token.
  std::pair<std::vector<double>, State> score(const State& state, std::size_t token) {
    nn::NoGradGuard no_grad;
    auto [dist, next] = step(state, token);
    std::vector<double> out(dist.values().begin(), dist.values().end());
    return {std::move(out), std::move(next)};
  }

  std::pair<Tensor<Real>, State> step(const State& state, std::size_t token) {
    Tensor<Real> x = emb.lookup(token);
    auto s1 = lstm1.step(x, state.s1);
    auto s2 = lstm2.step(s1.h, state.s2);
    Tensor<Real> h = nn::leaky_relu_t(fc.forward(s2.h));
    Tensor<Real> dist = nn::logsoftmax_rows(proj.forward(h));
    return {dist, State{s1, s2}};
  }

  // Teacher sequence posteriors for next-token training: feeds ids[0..n-2],
  // rows predict ids[1..n-1].
  Tensor<Real> forward_sequence(const std::vector<std::size_t>& ids) {
    if (ids.size() < 2) throw ContractError("corrector: need at least two tokens");
    State s = start();
    std::vector<Tensor<Real>> rows;
    rows.reserve(ids.size() - 1);
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto [dist, next] = step(s, ids[i]);
      rows.push_back(dist);
      s = std::move(next);
    }
    return nn::stack_rows(rows);
  }

  void register_params(ParameterMap<Real>& m, const std::string& p) {
    emb.register_params(m, p + ".emb");
    lstm1.register_params(m, p + ".lstm1");
    lstm2.register_params(m, p + ".lstm2");
    fc.register_params(m, p + ".fc");
    proj.register_params(m, p + ".proj");
  }
};

// ---------------------------------------------------------------------------
// Beam search. score(step) = (1-lambda) * decoder + lambda * LM; hypotheses
// that consume the special token freeze and keep competing for beam slots.
// Ties break toward lexicographically smaller token sequences, which makes
// k=1 without LM exactly the per-step argmax chain.
// ---------------------------------------------------------------------------

struct BeamConfig {
  std::size_t k = 8;
  double lm_weight = 0.0;  // 0 <= lambda < 1
  bool length_normalize = false;

  void validate() const {
    if (k < 1) throw ConfigError("beam width k must be >= 1");
    if (lm_weight < 0.0 || lm_weight >= 1.0) throw ConfigError("lm_weight must be in [0,1)");
  }
};

struct BeamResult {
  std::vector<std::size_t> tokens;  // specials stripped
  double score = 0.0;
};

// Lm is duck-typed: it provides State, start(), and
// score(state, token) -> (log-distribution over next token, new state).
template <typename Lm>
BeamResult beam_search(const std::vector<double>& posteriors, std::size_t steps, std::size_t width,
                       std::size_t special_id, const BeamConfig& cfg, Lm* lm) {
  cfg.validate();
  struct Hyp {
    std::vector<std::size_t> tokens;
    double score = 0.0;
    bool finished = false;
    std::optional<typename Lm::State> lm_state;
    std::vector<double> lm_dist;  // log P(next | tokens so far)
  };

  const double lam = cfg.lm_weight;
  const bool use_lm = lm != nullptr && lam > 0.0;

  Hyp root;
  if (use_lm) {
    auto [dist, st] = lm->score(lm->start(), special_id);  // condition on BOS
    root.lm_dist = std::move(dist);
    root.lm_state = std::move(st);
  }
  std::vector<Hyp> pool;
  pool.push_back(std::move(root));

  // candidate = carried finished hyp (token == width) or extension by token
  struct Cand {
    std::size_t parent;
    std::size_t token;
    double score;
  };

  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<Cand> cands;
    cands.reserve(pool.size() * width);
    for (std::size_t p = 0; p < pool.size(); ++p) {
      const Hyp& h = pool[p];
      if (h.finished) {
        cands.push_back({p, width, h.score});
        continue;
      }
      for (std::size_t v = 0; v < width; ++v) {
        double inc = (1.0 - lam) * posteriors[t * width + v];
        if (use_lm && v < h.lm_dist.size()) inc += lam * h.lm_dist[v];
        cands.push_back({p, v, h.score + inc});
      }
    }
    // ties break toward the lexicographically smaller resulting sequence
    auto better = [&](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& ta = pool[a.parent].tokens;
      const auto& tb = pool[b.parent].tokens;
      std::size_t la = ta.size() + (a.token < special_id ? 1 : 0);
      std::size_t lb = tb.size() + (b.token < special_id ? 1 : 0);
      for (std::size_t i = 0; i < std::max(la, lb); ++i) {
        std::size_t va = i < ta.size() ? ta[i] : (i < la ? a.token : width + 1);
        std::size_t vb = i < tb.size() ? tb[i] : (i < lb ? b.token : width + 1);
        if (va != vb) return va < vb;
      }
      return false;
    };
    std::size_t keep = std::min(cfg.k, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      better);
    cands.resize(keep);

    std::vector<Hyp> next;
    next.reserve(keep);
    for (const auto& c : cands) {
      if (c.token == width) {  // carried finished hypothesis
        next.push_back(pool[c.parent]);
        continue;
      }
      Hyp h = pool[c.parent];
      h.score = c.score;
      if (c.token == special_id) {
        h.finished = true;
        h.lm_dist.clear();
        h.lm_state.reset();
      } else {
        h.tokens.push_back(c.token);
        if (use_lm) {
          auto [dist, st] = lm->score(*h.lm_state, c.token);
          h.lm_dist = std::move(dist);
          h.lm_state = std::move(st);
        }
      }
      next.push_back(std::move(h));
    }
    pool = std::move(next);
  }

  auto final_score = [&](const Hyp& h) {
    if (!cfg.length_normalize || h.tokens.empty()) return h.score;
    return h.score / static_cast<double>(h.tokens.size());
  };
  const Hyp* best = &pool.front();
  for (const auto& h : pool) {
    if (final_score(h) > final_score(*best) ||
        (final_score(h) == final_score(*best) && h.tokens < best->tokens))
      best = &h;
  }
  return {best->tokens, final_score(*best)};
}

// Convenience overload without an LM (lattice oracles, greedy checks).
inline BeamResult beam_search_plain(const std::vector<double>& posteriors, std::size_t steps,
                                    std::size_t width, std::size_t special_id, std::size_t k) {
  BeamConfig cfg;
  cfg.k = k;
  return beam_search<CorrectorLM<float>>(posteriors, steps, width, special_id, cfg, nullptr);
}

}  // namespace semcom::model
