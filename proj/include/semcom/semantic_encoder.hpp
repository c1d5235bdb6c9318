// Semantic encoder: VGG/BLSTM/FC feature stack, attention-based soft
// alignment emitting one latent per semantic token, and redundancy removal.
//
// Shape chain per utterance: S [N,40] -> pad N to N4 (multiple of 4, log-floor
// frames) -> VGG -> [ch2, N4/4, 10] -> reshape -> [T,R] -> BLSTM stack ->
// 2x FC -> H [T, fc_width]. The aligner follows Fig. 3: additive attention
// (query FC on the recurrent state, key FC on H, location term from a conv1d
// over the previous scores), tanh on the combined vector, scalar FC, softmax;
// the recurrent cell consumes the attention context concatenated with the
// embedding of the previous emitted token.
#pragma once

#include <optional>
#include <vector>

#include "semcom/dsp.hpp"
#include "semcom/tokenizer.hpp"
#include "semcom/transformer.hpp"

namespace semcom::model {

using nn::ParameterMap;
using nn::Shape;
using nn::Tensor;

struct EncoderConfig {
  std::size_t n_mels = 40;
  std::size_t vgg_ch1 = 128;
  std::size_t vgg_ch2 = 256;
  std::size_t blstm_layers = 4;
  std::size_t blstm_hidden = 1024;
  std::size_t fc_width = 1024;
  std::size_t attn_dim = 300;
  std::size_t loc_kernel = 201;  // Table II "201/10/100": in-width/filters/centering pad
  std::size_t loc_filters = 10;
  bool lstm_aligner = false;  // Table II lists GRU; the prose says LSTM
  std::size_t aligner_hidden = 1024;
  std::size_t emb_dim = 128;
  std::size_t vocab_entries = 1000;  // posterior width = entries + 1
  double log_floor = 1e-10;

  std::size_t posterior_width() const { return vocab_entries + 1; }
  std::size_t special_id() const { return vocab_entries; }
  std::size_t reshape_width() const { return vgg_ch2 * (n_mels / 4); }
};

template <typename Real>
struct AlignedLatent {
  Tensor<Real> z;           // [q, hidden]
  Tensor<Real> posteriors;  // [q, V+1] log-probabilities
  std::vector<double> scores;  // q x T attention rows (values)
  std::vector<std::size_t> argmax_tokens;
  std::size_t q = 0;
  std::size_t t_len = 0;
};

template <typename Real>
struct LatentSemantic {
  Tensor<Real> l;  // [c, hidden]
  std::vector<std::size_t> kept_token_ids;
  std::vector<std::size_t> kept_indices;  // rows of Z that were kept
};

template <typename Real>
class SemanticEncoder {
 public:
  EncoderConfig cfg;

  SemanticEncoder(const EncoderConfig& c, Rng& rng)
      : cfg(c),
        conv1a_(1, c.vgg_ch1, 3, rng),
        conv1b_(c.vgg_ch1, c.vgg_ch1, 3, rng),
        conv2a_(c.vgg_ch1, c.vgg_ch2, 3, rng),
        conv2b_(c.vgg_ch2, c.vgg_ch2, 3, rng),
        fc1_(c.blstm_hidden, c.fc_width, rng),
        fc2_(c.fc_width, c.fc_width, rng),
        query_fc_(c.aligner_hidden, c.attn_dim, rng),
        key_fc_(c.fc_width, c.attn_dim, rng),
        loc_conv_(1, c.loc_filters, c.loc_kernel, (c.loc_kernel - 1) / 2, rng),
        loc_fc_(c.loc_filters, c.attn_dim, rng),
        score_fc_(c.attn_dim, 1, rng),
        emb_(c.vocab_entries + 1, c.emb_dim, rng),
        out_fc_(c.aligner_hidden, c.posterior_width(), rng) {
    if (c.n_mels % 4 != 0) throw ConfigError("encoder: n_mels must be divisible by 4");
    for (std::size_t i = 0; i < c.blstm_layers; ++i)
      blstm_.push_back(std::make_unique<nn::BlstmLayer<Real>>(
          i == 0 ? c.reshape_width() : c.blstm_hidden, c.blstm_hidden, rng));
    std::size_t cell_in = c.fc_width + c.emb_dim;
    if (c.lstm_aligner)
      lstm_cell_.emplace(cell_in, c.aligner_hidden, rng);
    else
      gru_cell_.emplace(cell_in, c.aligner_hidden, rng);
  }

  // S [N, n_mels] -> H [ceil(N/4), fc_width]
  Tensor<Real> feature_stack(const dsp::SpectrumSequence& s) const {
    if (s.n_frames == 0) throw InputError("feature_stack: empty spectrum");
    if (s.n_mels != cfg.n_mels)
      throw DimensionError("feature_stack: expected " + std::to_string(cfg.n_mels) +
                           " coefficients, got " + std::to_string(s.n_mels));
    std::size_t n4 = (s.n_frames + 3) / 4 * 4;
    std::vector<Real> grid(n4 * cfg.n_mels, static_cast<Real>(std::log(cfg.log_floor)));
    for (std::size_t i = 0; i < s.n_frames * s.n_mels; ++i) grid[i] = static_cast<Real>(s.frames[i]);
    Tensor<Real> x = Tensor<Real>::from({1, n4, cfg.n_mels}, std::move(grid));

    auto& self = *const_cast<SemanticEncoder*>(this);
    x = nn::leaky_relu_t(self.conv1a_.forward(x));
    x = nn::leaky_relu_t(self.conv1b_.forward(x));
    x = nn::maxpool2d(x, 2);
    x = nn::leaky_relu_t(self.conv2a_.forward(x));
    x = nn::leaky_relu_t(self.conv2b_.forward(x));
    x = nn::maxpool2d(x, 2);
    x = nn::flatten_channels_time_major(x);  // [T, ch2 * n_mels/4]
    for (auto& layer : blstm_) x = layer->forward(x);
    x = nn::leaky_relu_t(self.fc1_.forward(x));
    return nn::leaky_relu_t(self.fc2_.forward(x));
  }

  struct AlignState {
    Tensor<Real> gru_h;
    nn::LstmState<Real> lstm_s;
    Tensor<Real> prev_scores;  // [T]
    std::size_t prev_token = 0;
    Tensor<Real> keys;  // [T, attn]
    std::size_t t_len = 0;
    bool initialized = false;
  };

  AlignState begin_alignment(const Tensor<Real>& h) {
    AlignState st;
    st.t_len = h.dim(0);
    st.keys = key_fc_.forward(h);
    st.prev_scores = Tensor<Real>::zeros({st.t_len});
    if (cfg.lstm_aligner)
      st.lstm_s = lstm_cell_->initial_state();
    else
      st.gru_h = gru_cell_->initial_state();
    st.prev_token = cfg.special_id();  // sentence-start role
    st.initialized = true;
    return st;
  }

  struct StepOut {
    Tensor<Real> z;          // [hidden]
    Tensor<Real> scores;     // [T]
    Tensor<Real> posterior;  // [V+1]
  };

  StepOut soft_align_step(const Tensor<Real>& h, AlignState& st) {
    if (!st.initialized) throw ContractError("soft_align_step: state not initialized");
    Tensor<Real> hidden = cfg.lstm_aligner ? st.lstm_s.h : st.gru_h;
    Tensor<Real> query = query_fc_.forward(hidden);  // [attn]
    Tensor<Real> loc_in = nn::reshape(st.prev_scores, {1, st.t_len});
    Tensor<Real> loc = loc_fc_.forward(nn::transpose2d(loc_conv_.forward(loc_in)));  // [T, attn]
    Tensor<Real> combined = nn::add_rowwise(nn::add(st.keys, loc), query);
    Tensor<Real> energies = nn::reshape(score_fc_.forward(nn::tanh_t(combined)), {st.t_len});
    Tensor<Real> scores = nn::softmax_rows(energies);
    Tensor<Real> context = nn::vecmat(scores, h);
    Tensor<Real> cell_in = nn::concat_vec(context, emb_.lookup(st.prev_token));

    Tensor<Real> z;
    if (cfg.lstm_aligner) {
      st.lstm_s = lstm_cell_->step(cell_in, st.lstm_s);
      z = st.lstm_s.h;
    } else {
      st.gru_h = gru_cell_->step(cell_in, st.gru_h);
      z = st.gru_h;
    }
    st.prev_scores = scores;
    Tensor<Real> posterior = nn::logsoftmax_rows(out_fc_.forward(z));
    return {z, scores, posterior};
  }

  struct TeacherForced {
    const std::vector<std::size_t>* targets;  // prediction targets, EOS-terminated
  };
  struct FreeRunning {
    std::size_t cap;  // 0 = default ceil(N/4)
  };

  template <typename Mode>
  AlignedLatent<Real> run_alignment(const Tensor<Real>& h, const Mode& mode) {
    AlignState st = begin_alignment(h);
    AlignedLatent<Real> out;
    out.t_len = st.t_len;

    constexpr bool teacher = std::is_same_v<Mode, TeacherForced>;
    std::size_t limit;
    if constexpr (teacher) {
      limit = mode.targets->size();
      for (auto t : *mode.targets)
        if (t > cfg.special_id()) throw ContractError("run_alignment: target id out of range");
    } else {
      limit = mode.cap ? mode.cap : st.t_len;
      if (limit < 1) throw ConfigError("run_alignment: cap must be >= 1");
    }

    std::vector<Tensor<Real>> zs, posts;
    for (std::size_t t = 0; t < limit; ++t) {
      StepOut so = soft_align_step(h, st);
      zs.push_back(so.z);
      posts.push_back(so.posterior);
      for (Real v : so.scores.values()) out.scores.push_back(static_cast<double>(v));

      auto pv = so.posterior.values();
      std::size_t arg = 0;
      for (std::size_t i = 1; i < pv.size(); ++i)
        if (pv[i] > pv[arg]) arg = i;
      out.argmax_tokens.push_back(arg);

      if constexpr (teacher) {
        st.prev_token = (*mode.targets)[t];
      } else {
        st.prev_token = arg;
        // stop on the first post-initial special token (a leading special
        // plays the BOS role and does not stop the run)
        if (arg == cfg.special_id() && t >= 1) break;
      }
    }
    out.q = zs.size();
    out.z = nn::stack_rows(zs);
    out.posteriors = nn::stack_rows(posts);
    return out;
  }

  // Drop a leading special, truncate at the first subsequent special, filter
  // any stragglers; keep the matching rows of Z.
  LatentSemantic<Real> remove_redundancy(const AlignedLatent<Real>& aligned) const {
    std::vector<std::size_t> kept;
    std::size_t start = 0;
    const auto& toks = aligned.argmax_tokens;
    if (!toks.empty() && toks[0] == cfg.special_id()) start = 1;
    for (std::size_t i = start; i < toks.size(); ++i) {
      if (toks[i] == cfg.special_id()) break;
      kept.push_back(i);
    }
    return keep_rows(aligned, kept);
  }

  // Ground-truth keep mask for training: keep steps whose target is a word.
  LatentSemantic<Real> remove_redundancy_teacher(const AlignedLatent<Real>& aligned,
                                                 const std::vector<std::size_t>& targets) const {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < targets.size() && i < aligned.q; ++i)
      if (targets[i] != cfg.special_id()) kept.push_back(i);
    return keep_rows(aligned, kept);
  }

  LatentSemantic<Real> keep_rows(const AlignedLatent<Real>& aligned,
                                 const std::vector<std::size_t>& kept) const {
    LatentSemantic<Real> out;
    out.kept_indices = kept;
    std::vector<Tensor<Real>> rows;
    rows.reserve(kept.size());
    for (auto i : kept) {
      rows.push_back(nn::row(aligned.z, i));
      out.kept_token_ids.push_back(aligned.argmax_tokens[i]);
    }
    out.l = kept.empty() ? Tensor<Real>::zeros({0, cfg.aligner_hidden}) : nn::stack_rows(rows);
    return out;
  }

  void register_params(ParameterMap<Real>& m, const std::string& p) {
    conv1a_.register_params(m, p + ".vgg.conv1a");
    conv1b_.register_params(m, p + ".vgg.conv1b");
    conv2a_.register_params(m, p + ".vgg.conv2a");
    conv2b_.register_params(m, p + ".vgg.conv2b");
    for (std::size_t i = 0; i < blstm_.size(); ++i)
      blstm_[i]->register_params(m, p + ".blstm" + std::to_string(i));
    fc1_.register_params(m, p + ".fc1");
    fc2_.register_params(m, p + ".fc2");
    query_fc_.register_params(m, p + ".align.query");
    key_fc_.register_params(m, p + ".align.key");
    loc_conv_.register_params(m, p + ".align.loc_conv");
    loc_fc_.register_params(m, p + ".align.loc_fc");
    score_fc_.register_params(m, p + ".align.score");
    emb_.register_params(m, p + ".align.emb");
    if (lstm_cell_) lstm_cell_->register_params(m, p + ".align.lstm");
    if (gru_cell_) gru_cell_->register_params(m, p + ".align.gru");
    out_fc_.register_params(m, p + ".redundancy.fc");
  }

  std::size_t param_count() const {
    ParameterMap<Real> m;
    const_cast<SemanticEncoder*>(this)->register_params(m, "e");
    return nn::total_param_count(m);
  }

 private:
  nn::Conv2dLayer<Real> conv1a_, conv1b_, conv2a_, conv2b_;
  std::vector<std::unique_ptr<nn::BlstmLayer<Real>>> blstm_;
  nn::FcLayer<Real> fc1_, fc2_;
  nn::FcLayer<Real> query_fc_, key_fc_;
  nn::Conv1dLayer<Real> loc_conv_;
  nn::FcLayer<Real> loc_fc_, score_fc_;
  nn::EmbeddingLayer<Real> emb_;
  nn::FcLayer<Real> out_fc_;
  std::optional<nn::LstmCell<Real>> lstm_cell_;
  std::optional<nn::GruCell<Real>> gru_cell_;
};

}  // namespace semcom::model
