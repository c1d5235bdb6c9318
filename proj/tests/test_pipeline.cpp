#include <catch2/catch_amalgamated.hpp>

#include "semcom/additional_info.hpp"
#include "semcom/channel.hpp"
#include "semcom/gradcheck.hpp"
#include "semcom/losses.hpp"
#include "semcom/optimizer.hpp"
#include "semcom/semantic_decoder.hpp"
#include "semcom/semantic_encoder.hpp"

using namespace semcom;
using nn::Tensor;

namespace {

// All K^T frame labelings that collapse (dedupe repeats, drop blanks) onto
// `targets`, in probability space.
double ctc_enumeration_logprob(const std::vector<double>& logp, std::size_t t_len, std::size_t k_len,
                               const std::vector<std::size_t>& targets, std::size_t blank,
                               double* best_logprob = nullptr) {
  double total = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> path(t_len);
  std::size_t combos = 1;
  for (std::size_t i = 0; i < t_len; ++i) combos *= k_len;
  for (std::size_t code = 0; code < combos; ++code) {
    std::size_t c = code;
    double lp = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) {
      path[t] = c % k_len;
      c /= k_len;
      lp += logp[t * k_len + path[t]];
    }
    std::vector<std::size_t> collapsed;
    for (std::size_t t = 0; t < t_len; ++t) {
      if (t > 0 && path[t] == path[t - 1]) continue;
      if (path[t] != blank) collapsed.push_back(path[t]);
      else if (t == 0 || path[t] != path[t - 1]) continue;
    }
    // re-collapse properly: remove adjacent dups first, then blanks
    collapsed.clear();
    std::size_t prev = k_len;
    for (std::size_t t = 0; t < t_len; ++t) {
      if (path[t] == prev) continue;
      prev = path[t];
      if (path[t] != blank) collapsed.push_back(path[t]);
    }
    if (collapsed == targets) {
      total += std::exp(lp);
      best = std::max(best, lp);
    }
  }
  if (best_logprob) *best_logprob = best;
  return std::log(total);
}

std::vector<double> random_log_posteriors(std::size_t t_len, std::size_t k_len, Rng& rng) {
  std::vector<double> v(t_len * k_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    double z = 0;
    for (std::size_t k = 0; k < k_len; ++k) {
      v[t * k_len + k] = std::exp(rng.uniform(-2.0, 2.0));
      z += v[t * k_len + k];
    }
    for (std::size_t k = 0; k < k_len; ++k) v[t * k_len + k] = std::log(v[t * k_len + k] / z);
  }
  return v;
}

// Exhaustive maximizer under the beam's truncation semantics: sequences stop
// when they take the special token; ties prefer the smaller token sequence.
void beam_oracle_rec(const std::vector<double>& post, std::size_t steps, std::size_t width,
                     std::size_t special, std::size_t t, double score,
                     std::vector<std::size_t>& seq, double& best_score,
                     std::vector<std::size_t>& best_seq) {
  auto consider = [&](double s) {
    if (s > best_score || (s == best_score && seq < best_seq)) {
      best_score = s;
      best_seq = seq;
    }
  };
  if (t == steps) {
    consider(score);
    return;
  }
  for (std::size_t v = 0; v < width; ++v) {
    double s2 = score + post[t * width + v];
    if (v == special) {
      consider(s2);
    } else {
      seq.push_back(v);
      beam_oracle_rec(post, steps, width, special, t + 1, s2, seq, best_score, best_seq);
      seq.pop_back();
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

TEST_CASE("ctc loss hand examples") {
  SECTION("T=2, uniform over {a, blank}, target a -> -ln 0.75") {
    std::vector<double> lp(2 * 2, std::log(0.5));
    auto t = Tensor<double>::from({2, 2}, lp);
    auto loss = train::ctc_loss(t, {0}, 1);
    CHECK(loss.item() == Catch::Approx(-std::log(0.75)).margin(1e-12));
  }
  SECTION("probability mass 1 on the unique feasible alignment -> loss 0") {
    // T=1, single token: the only alignment is the label itself
    std::vector<double> lp = {0.0, -40.0};  // log p(a) = 0
    auto t = Tensor<double>::from({1, 2}, lp);
    CHECK(train::ctc_loss(t, {0}, 1).item() == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("infeasible target") {
    auto t = Tensor<double>::from({1, 3}, {std::log(0.3), std::log(0.3), std::log(0.4)});
    CHECK_THROWS_AS(train::ctc_loss(t, {0, 1}, 2), LossError);
  }
}

TEST_CASE("ctc forward equals alignment enumeration on random instances") {
  Rng rng(7777);
  for (int inst = 0; inst < 200; ++inst) {
    std::size_t t_len = 1 + rng.index(5);
    std::size_t k_len = 2 + rng.index(3);  // 2..4 classes incl. blank
    std::size_t blank = k_len - 1;
    std::size_t m_max = std::min<std::size_t>(3, t_len);
    std::size_t m = 1 + rng.index(m_max);
    std::vector<std::size_t> targets(m);
    for (auto& t : targets) t = rng.index(k_len - 1);

    auto lp = random_log_posteriors(t_len, k_len, rng);
    double oracle = ctc_enumeration_logprob(lp, t_len, k_len, targets, blank);
    auto tensor = Tensor<double>::from({t_len, k_len}, lp);
    if (oracle == -std::numeric_limits<double>::infinity()) {
      CHECK_THROWS_AS(train::ctc_loss(tensor, targets, blank), LossError);
    } else {
      double got = train::ctc_loss(tensor, targets, blank).item();
      CHECK(got == Catch::Approx(-oracle).margin(1e-9));
    }
  }
}

TEST_CASE("ctc gradient matches finite differences") {
  Rng rng(31);
  auto logits = Tensor<double>::parameter({4, 3}, [&] {
    std::vector<double> v(12);
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
  }());
  nn::ParameterMap<double> params;
  nn::register_param(params, "logits", logits);
  std::vector<std::size_t> targets = {0, 1};
  auto loss_fn = [&]() { return train::ctc_loss(nn::logsoftmax_rows(logits), targets, 2); };
  auto res = nn::check_gradients(params, loss_fn);
  INFO("max rel err " << res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("viterbi alignment") {
  SECTION("peaked posteriors give the expected span") {
    // T=3, classes {tok, blank}: blank at 0, token at 1-2
    std::vector<double> lp = {
        std::log(0.1), std::log(0.9),   // frame 0: blank wins
        std::log(0.9), std::log(0.1),   // frame 1: token wins
        std::log(0.9), std::log(0.1),   // frame 2: token wins
    };
    // class order: [token, blank] -> column 0 is the token
    auto spans = align::viterbi_align(lp, 3, 2, {0}, 1);
    REQUIRE(spans.size() == 1);
    CHECK(spans[0].start == 1);
    CHECK(spans[0].end == 2);
  }
  SECTION("T=1 single token is forced") {
    std::vector<double> lp = {std::log(0.5), std::log(0.5)};
    auto spans = align::viterbi_align(lp, 1, 2, {0}, 1);
    CHECK(spans[0].start == 0);
    CHECK(spans[0].end == 0);
  }
  SECTION("viterbi probability equals enumerated max over alignments") {
    Rng rng(2222);
    for (int inst = 0; inst < 120; ++inst) {
      std::size_t t_len = 1 + rng.index(6);
      std::size_t k_len = 2 + rng.index(3);
      std::size_t blank = k_len - 1;
      std::size_t m = 1 + rng.index(std::min<std::size_t>(3, t_len));
      std::vector<std::size_t> targets(m);
      for (auto& t : targets) t = rng.index(k_len - 1);
      auto lp = random_log_posteriors(t_len, k_len, rng);
      double best_enum;
      ctc_enumeration_logprob(lp, t_len, k_len, targets, blank, &best_enum);
      double got = align::viterbi_best_logprob(lp, t_len, k_len, targets, blank);
      if (best_enum == -std::numeric_limits<double>::infinity()) {
        CHECK(got == -std::numeric_limits<double>::infinity());
      } else {
        CHECK(got == Catch::Approx(best_enum).margin(1e-9));
      }
    }
  }
  SECTION("empty tokens rejected") {
    std::vector<double> lp = {0.0, 0.0};
    CHECK_THROWS_AS(align::viterbi_align(lp, 1, 2, {}, 1), AlignmentError);
  }
}

TEST_CASE("ce, combined and mse losses") {
  SECTION("one-hot correct posteriors give zero") {
    auto lp = Tensor<double>::from({2, 3}, {0, -50, -50, -50, 0, -50});
    CHECK(train::ce_loss(lp, {0, 1}).item() == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("uniform over 1001 gives ln 1001") {
    std::vector<double> row(1001, std::log(1.0 / 1001.0));
    auto lp = Tensor<double>::from({1, 1001}, row);
    CHECK(train::ce_loss(lp, {17}).item() == Catch::Approx(std::log(1001.0)).margin(1e-9));
  }
  SECTION("hand fixture p=0.5 and 0.25") {
    auto lp = Tensor<double>::from({2, 2}, {std::log(0.5), std::log(0.5), std::log(0.75), std::log(0.25)});
    CHECK(train::ce_loss(lp, {0, 1}).item() ==
          Catch::Approx((std::log(2.0) + std::log(4.0)) / 2.0).margin(1e-12));
  }
  SECTION("length mismatch is a contract error") {
    auto lp = Tensor<double>::from({2, 2}, {0., 0., 0., 0.});
    CHECK_THROWS_AS(train::ce_loss(lp, {0}), ContractError);
  }
  SECTION("combined loss blending") {
    auto ctc = Tensor<double>::scalar(1.0);
    auto ce = Tensor<double>::scalar(2.0);
    CHECK(train::combined_loss(ctc, ce, 0.0).item() == 2.0);
    CHECK(train::combined_loss(ctc, ce, 1.0).item() == 1.0);
    CHECK(train::combined_loss(ctc, ce, 0.2).item() == Catch::Approx(1.8));
    CHECK_THROWS_AS(train::combined_loss(ctc, ce, 1.5), ConfigError);
    // bounds: min <= L <= max over random draws
    Rng rng(5);
    for (int i = 0; i < 30; ++i) {
      double a = rng.uniform(0, 5), b = rng.uniform(0, 5), lam = rng.uniform(0, 1);
      double l = train::combined_loss(Tensor<double>::scalar(a), Tensor<double>::scalar(b), lam).item();
      CHECK(l >= std::min(a, b) - 1e-12);
      CHECK(l <= std::max(a, b) + 1e-12);
    }
  }
  SECTION("mse examples and gradient") {
    auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    CHECK(train::mse_loss(a, a).item() == 0.0);
    auto b = Tensor<double>::from({2, 2}, {1, 2, 3, 7});
    CHECK(train::mse_loss(a, b).item() == 9.0);
    auto bad = Tensor<double>::from({4}, {1, 2, 3, 7});
    CHECK_THROWS_AS(train::mse_loss(a, bad), ContractError);

    auto pred = Tensor<double>::parameter({3}, {0.5, -1.0, 2.0});
    auto target = Tensor<double>::from({3}, {1.0, 1.0, 1.0});
    train::mse_loss(target, pred).backward();
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(pred.grad()[i] ==
            Catch::Approx(2.0 * (pred.values()[i] - target.values()[i])).margin(1e-12));
  }
}

// ---------------------------------------------------------------------------
// channel_link
// ---------------------------------------------------------------------------

TEST_CASE("channel encoder produces 32 normalized symbols per kept token") {
  Rng rng(11);
  chan::ChannelCodecConfig ccfg;
  ccfg.latent_dim = 16;
  ccfg.hidden = 24;
  ccfg.symbol_dim = 64;
  chan::ChannelEncoder<double> enc(ccfg, rng);

  auto latent = Tensor<double>::from({5, 16}, [&] {
    std::vector<double> v(80);
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
  }());
  auto x = enc.forward(latent);
  auto frame = chan::frame_from_tensor(x);
  CHECK(frame.symbols.size() == 160);  // 32 per token

  double mean_power = 0;
  for (auto& s : frame.symbols) mean_power += std::norm(s);
  mean_power /= static_cast<double>(frame.symbols.size());
  CHECK(mean_power == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("transmit matches Eq. 1 statistics") {
  SECTION("noiseless sentinel returns X exactly") {
    chan::ComplexSymbolFrame x;
    Rng rng(3);
    for (int i = 0; i < 64; ++i) x.symbols.emplace_back(rng.normal(), rng.normal());
    chan::ChannelConfig cfg;
    cfg.kind = chan::ChannelKind::awgn;
    cfg.snr_db = std::numeric_limits<double>::infinity();
    auto [y, draw] = chan::transmit(x, cfg);
    for (std::size_t i = 0; i < x.symbols.size(); ++i) CHECK(y.symbols[i] == x.symbols[i]);
    CHECK(draw.sigma2 == 0.0);
  }
  SECTION("awgn: measured SNR near target at 1e5 symbols") {
    chan::ComplexSymbolFrame x;
    x.symbols.assign(100000, {1.0, 0.0});  // unit power
    chan::ChannelConfig cfg;
    cfg.snr_db = 10.0;
    cfg.seed = 99;
    auto [y, draw] = chan::transmit(x, cfg);
    double noise_power = 0;
    for (std::size_t i = 0; i < x.symbols.size(); ++i) noise_power += std::norm(y.symbols[i] - x.symbols[i]);
    noise_power /= static_cast<double>(x.symbols.size());
    double measured = 10.0 * std::log10(1.0 / noise_power);
    CHECK(measured == Catch::Approx(10.0).margin(0.1));
  }
  SECTION("rayleigh: E|h|^2 = 1 within 0.03 at 1e4 draws") {
    chan::ChannelConfig cfg;
    cfg.kind = chan::ChannelKind::rayleigh;
    cfg.snr_db = 10.0;
    cfg.seed = 4;
    double acc = 0;
    for (int i = 0; i < 10000; ++i) acc += std::norm(chan::draw_channel(cfg, 0, i).h);
    CHECK(acc / 10000.0 == Catch::Approx(1.0).margin(0.03));
  }
  SECTION("equal seeds are bit-reproducible") {
    chan::ComplexSymbolFrame x;
    x.symbols.assign(256, {0.5, -0.5});
    chan::ChannelConfig cfg;
    cfg.kind = chan::ChannelKind::rayleigh;
    cfg.snr_db = 5.0;
    cfg.seed = 12;
    auto [y1, d1] = chan::transmit(x, cfg, 7);
    auto [y2, d2] = chan::transmit(x, cfg, 7);
    CHECK(d1.h == d2.h);
    for (std::size_t i = 0; i < x.symbols.size(); ++i) CHECK(y1.symbols[i] == y2.symbols[i]);
  }
}

TEST_CASE("channel decoder shape contract and zero-input constancy") {
  Rng rng(8);
  chan::ChannelCodecConfig ccfg;
  ccfg.latent_dim = 12;
  ccfg.hidden = 10;
  ccfg.symbol_dim = 8;
  chan::ChannelDecoder<double> dec(ccfg, rng);
  auto y = Tensor<double>::from({3, 8}, std::vector<double>(24, 0.0));
  auto l1 = dec.forward(y);
  auto l2 = dec.forward(y);
  REQUIRE(l1.shape() == nn::Shape{3, 12});
  for (std::size_t i = 0; i < l1.size(); ++i) CHECK(l1.values()[i] == l2.values()[i]);
  // every row identical: pure bias propagation
  for (std::size_t j = 0; j < 12; ++j) {
    CHECK(l1.values()[j] == l1.values()[12 + j]);
    CHECK(l1.values()[j] == l1.values()[24 + j]);
  }
  auto bad = Tensor<double>::from({3, 6}, std::vector<double>(18, 0.0));
  CHECK_THROWS_AS(dec.forward(bad), DimensionError);
}

TEST_CASE("differentiable channel path gradient-checks") {
  Rng rng(21);
  auto x = Tensor<double>::parameter({2, 8}, [&] {
    std::vector<double> v(16);
    for (auto& e : v) e = rng.uniform(-1, 1);
    return v;
  }());
  nn::ParameterMap<double> params;
  nn::register_param(params, "x", x);
  chan::ChannelConfig cfg;
  cfg.kind = chan::ChannelKind::rayleigh;
  cfg.snr_db = 8.0;
  cfg.seed = 5;
  auto draw = chan::draw_channel(cfg, 8, 1);
  std::vector<double> w(16);
  for (auto& e : w) e = rng.uniform(0.5, 1.5);
  auto loss_fn = [&]() {
    auto y = chan::apply_channel_t(chan::power_normalize(x), draw);
    return nn::sum(nn::mul(y, Tensor<double>::from({2, 8}, w)));
  };
  auto res = nn::check_gradients(params, loss_fn);
  INFO("worst " << res.worst_param << " rel " << res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("side channel payload is lossless and sized by formula") {
  AdditionalSpeechInfo d;
  d.speaker_id = 9;
  Rng rng(6);
  for (int i = 0; i < 7; ++i) {
    PhonemeInfo p;
    p.duration_frames = static_cast<std::uint16_t>(1 + rng.index(50));
    p.pitch_hz = static_cast<float>(rng.uniform(80, 300));
    p.power = static_cast<float>(rng.uniform(-20, 0));
    d.phonemes.push_back(p);
  }
  auto bytes = serialize_speech_info(d);
  CHECK(bytes.size() == side_channel_payload_bytes(7));
  CHECK(bytes.size() == 4 + 7 * 10 + 2);
  CHECK(lossless_side_channel(d) == d);

  AdditionalSpeechInfo empty;
  CHECK(lossless_side_channel(empty) == empty);
  CHECK(serialize_speech_info(empty).size() == side_channel_payload_bytes(0));
}

// ---------------------------------------------------------------------------
// additional info aggregation
// ---------------------------------------------------------------------------

TEST_CASE("duration split across phonemes") {
  dsp::PitchPower pp;
  pp.f0.assign(20, 120.0);
  pp.log_power.assign(20, -2.0);

  tok::PhonemeSequence ph;
  SECTION("two phonemes over 5 reduced frames -> (10, 10)") {
    ph.phonemes = {"F", "OO"};
    ph.boundaries = {{0, 2}};
    std::vector<align::TokenSpan> spans = {{0, 4}};
    auto d = align::build_additional_info(spans, pp, ph, 5, 1);
    REQUIRE(d.phonemes.size() == 2);
    CHECK(d.phonemes[0].duration_frames == 10);
    CHECK(d.phonemes[1].duration_frames == 10);
    CHECK(d.speaker_id == 1);
  }
  SECTION("single phoneme gets 4x the reduced span") {
    ph.phonemes = {"F"};
    ph.boundaries = {{0, 1}};
    std::vector<align::TokenSpan> spans = {{0, 4}};
    auto d = align::build_additional_info(spans, pp, ph, 5, 0);
    REQUIRE(d.phonemes.size() == 1);
    CHECK(d.phonemes[0].duration_frames == 20);
    CHECK(d.phonemes[0].pitch_hz == Catch::Approx(120.0));
  }
  SECTION("all-unvoiced span floors pitch and power") {
    dsp::PitchPower silent;
    silent.f0.assign(20, 0.0);
    silent.log_power.assign(20, std::log(1e-10));
    ph.phonemes = {"F"};
    ph.boundaries = {{0, 1}};
    std::vector<align::TokenSpan> spans = {{0, 4}};
    auto d = align::build_additional_info(spans, silent, ph, 5, 0);
    CHECK(d.phonemes[0].pitch_hz == 0.0f);
    CHECK(d.phonemes[0].power == Catch::Approx(std::log(1e-10)));
  }
  SECTION("gap-closed durations partition the padded timeline") {
    ph.phonemes = {"A", "B", "C"};
    ph.boundaries = {{0, 1}, {1, 1}, {2, 1}};
    // three tokens with gaps: spans (1,2), (5,6), (9,9); reduced_len 12
    std::vector<align::TokenSpan> spans = {{1, 2}, {5, 6}, {9, 9}};
    auto d = align::build_additional_info(spans, pp, ph, 12, 0);
    std::size_t total = 0;
    for (auto& p : d.phonemes) total += p.duration_frames;
    CHECK(total == 12 * 4);
  }
}

// ---------------------------------------------------------------------------
// beam search + corrector
// ---------------------------------------------------------------------------

TEST_CASE("beam k=1 equals the per-step argmax chain") {
  Rng rng(606);
  for (int inst = 0; inst < 60; ++inst) {
    std::size_t width = 2 + rng.index(3);
    std::size_t steps = 1 + rng.index(4);
    std::size_t special = rng.index(2) ? width - 1 : width + 100;  // sometimes reachable
    auto post = random_log_posteriors(steps, width, rng);

    std::vector<std::size_t> greedy;
    for (std::size_t t = 0; t < steps; ++t) {
      std::size_t arg = 0;
      for (std::size_t v = 1; v < width; ++v)
        if (post[t * width + v] > post[t * width + arg]) arg = v;
      if (arg == special) break;
      greedy.push_back(arg);
    }
    auto got = model::beam_search_plain(post, steps, width, special, 1);
    CHECK(got.tokens == greedy);
  }
}

TEST_CASE("beam equals the exhaustive maximizer when k >= |V|^L") {
  Rng rng(909);
  for (int inst = 0; inst < 100; ++inst) {
    std::size_t width = 2 + rng.index(3);   // |V| <= 4
    std::size_t steps = 1 + rng.index(4);   // L <= 4
    bool with_special = rng.index(2) == 0;
    std::size_t special = with_special ? width - 1 : width + 100;
    auto post = random_log_posteriors(steps, width, rng);

    double best_score = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_seq, seq;
    beam_oracle_rec(post, steps, width, special, 0, 0.0, seq, best_score, best_seq);

    std::size_t k = 1;
    for (std::size_t i = 0; i < steps; ++i) k *= width;
    auto got = model::beam_search_plain(post, steps, width, special, k + 2);
    CHECK(got.tokens == best_seq);
    CHECK(got.score == Catch::Approx(best_score).margin(1e-12));
  }
}

TEST_CASE("increasing k never decreases the returned score") {
  Rng rng(1212);
  for (int inst = 0; inst < 60; ++inst) {
    std::size_t width = 2 + rng.index(3);
    std::size_t steps = 2 + rng.index(3);
    std::size_t special = rng.index(2) ? width - 1 : width + 100;
    auto post = random_log_posteriors(steps, width, rng);
    double prev = -std::numeric_limits<double>::infinity();
    std::size_t kmax = 1;
    for (std::size_t i = 0; i < steps; ++i) kmax *= width;
    for (std::size_t k = 1; k <= kmax + 1; ++k) {
      auto got = model::beam_search_plain(post, steps, width, special, k);
      CHECK(got.score >= prev - 1e-12);
      prev = got.score;
    }
  }
}

namespace {
// Hand-coded table LM over contexts for the planted-lattice test.
struct TableLm {
  struct State {
    std::size_t last = 1000;  // 1000 = BOS
  };
  std::size_t width;
  // log P(next | last); last row is the BOS context
  std::vector<std::vector<double>> table;
  State start() const { return {}; }
  std::pair<std::vector<double>, State> score(const State& s, std::size_t token) {
    State next{token};
    std::size_t ctx = token < width ? token : table.size() - 1;
    return {table[ctx], next};
  }
};
}  // namespace

TEST_CASE("beam k=2 with LM recovers a path greedy misses") {
  // vocab {A=0, B=1, C=2}; decoder prefers A at step 0 (0.6 vs 0.4) and C at
  // step 1. The LM knows C follows B, not A. Fused, the B-C path wins but
  // only a beam that kept B can see it.
  std::size_t width = 3, steps = 2, special = 99;
  std::vector<double> post = {
      std::log(0.55), std::log(0.43), std::log(0.02),  // step 0
      std::log(0.05), std::log(0.05), std::log(0.90),  // step 1
  };
  TableLm lm;
  lm.width = width;
  lm.table = {
      {std::log(.05), std::log(.05), std::log(.001)},  // after A: C unlikely
      {std::log(.05), std::log(.05), std::log(.90)},   // after B: C likely
      {std::log(.33), std::log(.33), std::log(.33)},   // after C
      {std::log(.45), std::log(.45), std::log(.10)},   // after BOS
  };
  model::BeamConfig cfg;
  cfg.lm_weight = 0.5;

  cfg.k = 1;
  auto greedy = model::beam_search(post, steps, width, special, cfg, &lm);
  CHECK(greedy.tokens.front() == 0);  // locked into the A prefix
  CHECK(greedy.tokens != std::vector<std::size_t>{1, 2});

  cfg.k = 2;
  auto beam = model::beam_search(post, steps, width, special, cfg, &lm);
  CHECK(beam.tokens == std::vector<std::size_t>{1, 2});
  CHECK(beam.score > greedy.score);
}

TEST_CASE("zero-weight fusion equals the no-LM run") {
  Rng rng(33);
  model::CorrectorConfig ccfg;
  ccfg.vocab_entries = 4;
  ccfg.emb_dim = 6;
  ccfg.lstm_hidden = 10;
  ccfg.fc_width = 8;
  model::CorrectorLM<float> lm(ccfg, rng);
  auto post = random_log_posteriors(3, 5, rng);
  model::BeamConfig with_lm;
  with_lm.k = 3;
  with_lm.lm_weight = 0.0;
  auto a = model::beam_search(post, 3, 5, 4, with_lm, &lm);
  auto b = model::beam_search_plain(post, 3, 5, 4, 3);
  CHECK(a.tokens == b.tokens);
  CHECK(a.score == b.score);
}

TEST_CASE("corrector learns bigram structure of 'a b a b ...'") {
  Rng rng(17);
  model::CorrectorConfig ccfg;
  ccfg.vocab_entries = 2;  // a=0, b=1, special=2
  ccfg.emb_dim = 6;
  ccfg.lstm_hidden = 12;
  ccfg.fc_width = 8;
  model::CorrectorLM<double> lm(ccfg, rng);
  nn::ParameterMap<double> params;
  lm.register_params(params, "lm");
  nn::AdadeltaState<double> opt;
  nn::AdadeltaConfig ocfg;
  ocfg.lr = 1.0;

  std::vector<std::size_t> seq = {2};
  for (int i = 0; i < 8; ++i) {
    seq.push_back(0);
    seq.push_back(1);
  }
  seq.push_back(2);
  std::vector<std::size_t> targets(seq.begin() + 1, seq.end());

  for (int step = 0; step < 120; ++step) {
    auto lp = lm.forward_sequence(seq);
    auto loss = train::ce_loss(lp, targets);
    loss.backward();
    nn::adadelta_step(params, opt, ocfg);
  }

  auto s0 = lm.start();
  auto [d_bos, s1] = lm.score(s0, 2);
  auto [d_a, s2] = lm.score(s1, 0);
  CHECK(d_a[1] > d_a[0]);  // P(b | a) > P(a | a)
  double z = 0;
  for (double v : d_a) z += std::exp(v);
  CHECK(z == Catch::Approx(1.0).margin(1e-6));
}

// ---------------------------------------------------------------------------
// semantic encoder
// ---------------------------------------------------------------------------

namespace {
model::EncoderConfig tiny_encoder_config() {
  model::EncoderConfig cfg;
  cfg.n_mels = 8;
  cfg.vgg_ch1 = 2;
  cfg.vgg_ch2 = 3;
  cfg.blstm_layers = 2;
  cfg.blstm_hidden = 5;
  cfg.fc_width = 6;
  cfg.attn_dim = 4;
  cfg.loc_kernel = 5;
  cfg.loc_filters = 2;
  cfg.aligner_hidden = 7;
  cfg.emb_dim = 3;
  cfg.vocab_entries = 4;
  return cfg;
}

dsp::SpectrumSequence fake_spectrum(std::size_t n, std::size_t mels, Rng& rng) {
  dsp::SpectrumSequence s;
  s.n_frames = n;
  s.n_mels = mels;
  s.frames.resize(n * mels);
  for (auto& v : s.frames) v = rng.uniform(-4.0, 2.0);
  return s;
}
}  // namespace

TEST_CASE("feature stack shape chain") {
  Rng rng(77);
  auto cfg = tiny_encoder_config();
  model::SemanticEncoder<float> enc(cfg, rng);

  auto h100 = enc.feature_stack(fake_spectrum(100, 8, rng));
  CHECK(h100.shape() == nn::Shape{25, cfg.fc_width});

  auto h4 = enc.feature_stack(fake_spectrum(4, 8, rng));
  CHECK(h4.shape() == nn::Shape{1, cfg.fc_width});

  auto h10 = enc.feature_stack(fake_spectrum(10, 8, rng));  // padded to 12
  CHECK(h10.shape() == nn::Shape{3, cfg.fc_width});

  CHECK_THROWS_AS(enc.feature_stack(fake_spectrum(10, 12, rng)), DimensionError);
}

TEST_CASE("soft alignment scores are a distribution") {
  Rng rng(78);
  auto cfg = tiny_encoder_config();
  model::SemanticEncoder<float> enc(cfg, rng);

  SECTION("single time step gives probability one") {
    auto h = enc.feature_stack(fake_spectrum(4, 8, rng));
    auto st = enc.begin_alignment(h);
    auto so = enc.soft_align_step(h, st);
    REQUIRE(so.scores.size() == 1);
    CHECK(so.scores.values()[0] == Catch::Approx(1.0));
  }
  SECTION("rows sum to one and lie in [0,1]") {
    auto h = enc.feature_stack(fake_spectrum(37, 8, rng));
    auto out = enc.run_alignment(h, model::SemanticEncoder<float>::FreeRunning{5});
    REQUIRE(out.t_len == 10);
    for (std::size_t q = 0; q < out.q; ++q) {
      double sum = 0;
      for (std::size_t t = 0; t < out.t_len; ++t) {
        double a = out.scores[q * out.t_len + t];
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        sum += a;
      }
      CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    }
  }
  SECTION("uninitialized state is a contract error") {
    auto h = enc.feature_stack(fake_spectrum(8, 8, rng));
    typename model::SemanticEncoder<float>::AlignState st;
    CHECK_THROWS_AS(enc.soft_align_step(h, st), ContractError);
  }
}

TEST_CASE("teacher forcing emits exactly len(targets) steps") {
  Rng rng(79);
  auto cfg = tiny_encoder_config();
  model::SemanticEncoder<float> enc(cfg, rng);
  auto h = enc.feature_stack(fake_spectrum(40, 8, rng));
  std::vector<std::size_t> targets = {1, 2, 3, 0, 2, 1, 3, 3, 0, cfg.special_id()};
  auto out = enc.run_alignment(h, model::SemanticEncoder<float>::TeacherForced{&targets});
  CHECK(out.q == 10);
  CHECK(out.z.shape() == nn::Shape{10, cfg.aligner_hidden});
  CHECK(out.posteriors.shape() == nn::Shape{10, cfg.posterior_width()});
}

TEST_CASE("free running cap and stop rule") {
  Rng rng(80);
  auto cfg = tiny_encoder_config();
  model::SemanticEncoder<float> enc(cfg, rng);
  auto h = enc.feature_stack(fake_spectrum(24, 8, rng));  // T = 6

  nn::ParameterMap<float> params;
  enc.register_params(params, "enc");
  auto& bias = params.at("enc.redundancy.fc.bias");
  auto& weight = params.at("enc.redundancy.fc.weight");
  std::fill(weight.raw_values().begin(), weight.raw_values().end(), 0.0f);

  SECTION("argmax never special: runs to the default cap T") {
    std::fill(bias.raw_values().begin(), bias.raw_values().end(), 0.0f);
    bias.raw_values()[1] = 5.0f;
    auto out = enc.run_alignment(h, model::SemanticEncoder<float>::FreeRunning{0});
    CHECK(out.q == 6);
    for (auto t : out.argmax_tokens) CHECK(t == 1);
  }
  SECTION("leading special does not stop; the next one does (row included)") {
    std::fill(bias.raw_values().begin(), bias.raw_values().end(), 0.0f);
    bias.raw_values()[cfg.special_id()] = 5.0f;
    auto out = enc.run_alignment(h, model::SemanticEncoder<float>::FreeRunning{0});
    CHECK(out.q == 2);
    CHECK(out.argmax_tokens == std::vector<std::size_t>{cfg.special_id(), cfg.special_id()});
  }
  SECTION("cap < 1 is a config error") {
    // cap parameter 0 means default; an explicit tiny cap of 1 is legal
    auto out = enc.run_alignment(h, model::SemanticEncoder<float>::FreeRunning{1});
    CHECK(out.q == 1);
  }
}

TEST_CASE("redundancy removal rules") {
  Rng rng(81);
  auto cfg = tiny_encoder_config();
  model::SemanticEncoder<float> enc(cfg, rng);

  auto fake_aligned = [&](const std::vector<std::size_t>& tokens) {
    model::AlignedLatent<float> a;
    a.q = tokens.size();
    a.t_len = 1;
    a.argmax_tokens = tokens;
    std::vector<float> z(tokens.size() * cfg.aligner_hidden);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<float>(i);
    a.z = Tensor<float>::from({tokens.size(), cfg.aligner_hidden}, z);
    return a;
  };
  const std::size_t sp = cfg.special_id();

  SECTION("paper example: 36 steps, 8 kept -> 77.8% saving") {
    std::vector<std::size_t> toks = {sp, 1, 2, 3, 0, 1, 2, 3, 0};
    while (toks.size() < 36) toks.push_back(sp);
    auto aligned = fake_aligned(toks);
    auto kept = enc.remove_redundancy(aligned);
    CHECK(kept.kept_token_ids.size() == 8);
    double saving = (36.0 - 8.0) / 36.0;
    CHECK(saving == Catch::Approx(0.778).margin(5e-4));
    // kept rows are the matching subsequence of Z
    for (std::size_t i = 0; i < kept.kept_indices.size(); ++i) {
      CHECK(kept.kept_indices[i] == i + 1);
      for (std::size_t j = 0; j < cfg.aligner_hidden; ++j)
        CHECK(kept.l.values()[i * cfg.aligner_hidden + j] ==
              aligned.z.values()[(i + 1) * cfg.aligner_hidden + j]);
    }
  }
  SECTION("no special: unchanged") {
    auto aligned = fake_aligned({1, 2, 3});
    auto kept = enc.remove_redundancy(aligned);
    CHECK(kept.kept_token_ids == std::vector<std::size_t>{1, 2, 3});
  }
  SECTION("mid-sequence special truncates") {
    auto aligned = fake_aligned({1, 2, sp, 3, sp});
    auto kept = enc.remove_redundancy(aligned);
    CHECK(kept.kept_token_ids == std::vector<std::size_t>{1, 2});
  }
  SECTION("kept tokens never contain the special id") {
    Rng r2(99);
    for (int i = 0; i < 50; ++i) {
      std::vector<std::size_t> toks(1 + r2.index(12));
      for (auto& t : toks) t = r2.index(cfg.special_id() + 1);
      auto kept = enc.remove_redundancy(fake_aligned(toks));
      for (auto t : kept.kept_token_ids) CHECK(t != sp);
    }
  }
}

TEST_CASE("end-to-end encoder toy gradient check (2 frames, 2 tokens)", "[slow]") {
  Rng rng(555);
  auto cfg = tiny_encoder_config();
  cfg.blstm_layers = 1;
  cfg.blstm_hidden = 3;
  cfg.fc_width = 4;
  cfg.aligner_hidden = 4;
  cfg.vocab_entries = 3;
  model::SemanticEncoder<double> enc(cfg, rng);
  align::CtcHead<double> ctc_head(cfg.fc_width, cfg.vocab_entries, rng);

  nn::ParameterMap<double> params;
  enc.register_params(params, "enc");
  ctc_head.register_params(params, "ctc");

  auto s = fake_spectrum(2, 8, rng);
  std::vector<std::size_t> targets = {1, 2, cfg.special_id()};
  std::vector<std::size_t> ctc_targets = {1, 2};  // infeasible for T=1? no: needs T>=2
  // T after reduction = 1; a 2-token CTC target needs T >= 2, so use 1 token
  ctc_targets = {1};

  auto loss_fn = [&]() {
    auto h = enc.feature_stack(s);
    auto aligned = enc.run_alignment(h, model::SemanticEncoder<double>::TeacherForced{&targets});
    auto ce = train::ce_loss(aligned.posteriors, targets);
    auto ctc = train::ctc_loss(ctc_head.forward(h), ctc_targets,
                               align::ctc_blank_id(cfg.vocab_entries));
    return train::combined_loss(ctc, ce, 0.2);
  };
  auto res = nn::check_gradients(params, loss_fn);
  INFO("worst " << res.worst_param << "[" << res.worst_index << "] rel " << res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}
