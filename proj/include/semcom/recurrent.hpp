// Recurrent cells and sequence layers (LSTM, GRU, BLSTM).
//
// Cells are composed from tape primitives, so BPTT falls out of the generic
// backward pass. Gate packing: LSTM [i f g o], GRU [z r n].
#pragma once

#include <vector>

#include "semcom/layers.hpp"

namespace semcom::nn {

template <typename Real>
struct LstmState {
  Tensor<Real> h, c;
};

template <typename Real>
struct LstmCell {
  Tensor<Real> wx, wh, b;  // wx: [4H, in], wh: [4H, H], b: [4H]
  std::size_t in, hidden;

  LstmCell(std::size_t in_, std::size_t hidden_, Rng& rng)
      : wx(init_uniform<Real>({4 * hidden_, in_}, in_, rng)),
        wh(init_uniform<Real>({4 * hidden_, hidden_}, hidden_, rng)),
        b(init_zeros_param<Real>({4 * hidden_})),
        in(in_),
        hidden(hidden_) {}

  LstmState<Real> initial_state() const {
    return {Tensor<Real>::zeros({hidden}), Tensor<Real>::zeros({hidden})};
  }

  LstmState<Real> step(const Tensor<Real>& x, const LstmState<Real>& s) const {
    Tensor<Real> zeros_b = Tensor<Real>::zeros({4 * hidden});
    Tensor<Real> gates = add(linear(x, wx, b), linear(s.h, wh, zeros_b));
    Tensor<Real> i = sigmoid_t(slice_vec(gates, 0, hidden));
    Tensor<Real> f = sigmoid_t(slice_vec(gates, hidden, 2 * hidden));
    Tensor<Real> g = tanh_t(slice_vec(gates, 2 * hidden, 3 * hidden));
    Tensor<Real> o = sigmoid_t(slice_vec(gates, 3 * hidden, 4 * hidden));
    Tensor<Real> c = add(mul(f, s.c), mul(i, g));
    Tensor<Real> h = mul(o, tanh_t(c));
    return {h, c};
  }

  void register_params(ParameterMap<Real>& m, const std::string& p) {
    register_param(m, p + ".wx", wx);
    register_param(m, p + ".wh", wh);
    register_param(m, p + ".bias", b);
  }
  std::size_t param_count() const { return wx.size() + wh.size() + b.size(); }
};

template <typename Real>
struct GruCell {
  Tensor<Real> wx, wh, b;  // wx: [3H, in], wh: [3H, H], b: [3H]
  std::size_t in, hidden;

  GruCell(std::size_t in_, std::size_t hidden_, Rng& rng)
      : wx(init_uniform<Real>({3 * hidden_, in_}, in_, rng)),
        wh(init_uniform<Real>({3 * hidden_, hidden_}, hidden_, rng)),
        b(init_zeros_param<Real>({3 * hidden_})),
        in(in_),
        hidden(hidden_) {}

  Tensor<Real> initial_state() const { return Tensor<Real>::zeros({hidden}); }

  Tensor<Real> step(const Tensor<Real>& x, const Tensor<Real>& h) const {
    Tensor<Real> zeros3 = Tensor<Real>::zeros({3 * hidden});
    Tensor<Real> gx = linear(x, wx, b);
    Tensor<Real> gh = linear(h, wh, zeros3);
    Tensor<Real> z = sigmoid_t(add(slice_vec(gx, 0, hidden), slice_vec(gh, 0, hidden)));
    Tensor<Real> r = sigmoid_t(add(slice_vec(gx, hidden, 2 * hidden), slice_vec(gh, hidden, 2 * hidden)));
    Tensor<Real> n = tanh_t(add(slice_vec(gx, 2 * hidden, 3 * hidden),
                                mul(r, slice_vec(gh, 2 * hidden, 3 * hidden))));
    // h' = (1-z)*n + z*h
    Tensor<Real> one_minus_z = sub(Tensor<Real>::full({hidden}, Real(1)), z);
    return add(mul(one_minus_z, n), mul(z, h));
  }

  void register_params(ParameterMap<Real>& m, const std::string& p) {
    register_param(m, p + ".wx", wx);
    register_param(m, p + ".wh", wh);
    register_param(m, p + ".bias", b);
  }
  std::size_t param_count() const { return wx.size() + wh.size() + b.size(); }
};

// Unidirectional LSTM over a [T, in] sequence -> [T, H]
template <typename Real>
struct LstmLayer final : Layer<Real> {
  LstmCell<Real> cell;
  LstmLayer(std::size_t in, std::size_t hidden, Rng& rng) : cell(in, hidden, rng) {}

  Tensor<Real> forward(const Tensor<Real>& x) override {
    std::size_t t = x.dim(0);
    auto s = cell.initial_state();
    std::vector<Tensor<Real>> outs;
    outs.reserve(t);
    for (std::size_t i = 0; i < t; ++i) {
      s = cell.step(row(x, i), s);
      outs.push_back(s.h);
    }
    return stack_rows(outs);
  }
  void register_params(ParameterMap<Real>& m, const std::string& p) override {
    cell.register_params(m, p);
  }
  std::size_t param_count() const override { return cell.param_count(); }
  const char* kind() const override { return "lstm"; }
};

// Unidirectional GRU over a [T, in] sequence -> [T, H]
template <typename Real>
struct GruLayer final : Layer<Real> {
  GruCell<Real> cell;
  GruLayer(std::size_t in, std::size_t hidden, Rng& rng) : cell(in, hidden, rng) {}

  Tensor<Real> forward(const Tensor<Real>& x) override {
    std::size_t t = x.dim(0);
    auto h = cell.initial_state();
    std::vector<Tensor<Real>> outs;
    outs.reserve(t);
    for (std::size_t i = 0; i < t; ++i) {
      h = cell.step(row(x, i), h);
      outs.push_back(h);
    }
    return stack_rows(outs);
  }
  void register_params(ParameterMap<Real>& m, const std::string& p) override {
    cell.register_params(m, p);
  }
  std::size_t param_count() const override { return cell.param_count(); }
  const char* kind() const override { return "gru"; }
};

// Bidirectional LSTM: both directions concatenated and projected back to the
// stated width, so stacked layers keep a uniform in/out width.
template <typename Real>
struct BlstmLayer final : Layer<Real> {
  LstmCell<Real> fwd, bwd;
  Tensor<Real> proj_w, proj_b;  // [H, 2H]
  std::size_t hidden;

  BlstmLayer(std::size_t in, std::size_t hidden_, Rng& rng)
      : fwd(in, hidden_, rng),
        bwd(in, hidden_, rng),
        proj_w(init_uniform<Real>({hidden_, 2 * hidden_}, 2 * hidden_, rng)),
        proj_b(init_zeros_param<Real>({hidden_})),
        hidden(hidden_) {}

  Tensor<Real> forward(const Tensor<Real>& x) override {
    std::size_t t = x.dim(0);
    std::vector<Tensor<Real>> f(t), b(t);
    auto sf = fwd.initial_state();
    for (std::size_t i = 0; i < t; ++i) {
      sf = fwd.step(row(x, i), sf);
      f[i] = sf.h;
    }
    auto sb = bwd.initial_state();
    for (std::size_t i = t; i > 0; --i) {
      sb = bwd.step(row(x, i - 1), sb);
      b[i - 1] = sb.h;
    }
    std::vector<Tensor<Real>> both(t);
    for (std::size_t i = 0; i < t; ++i) both[i] = concat_vec(f[i], b[i]);
    return linear(stack_rows(both), proj_w, proj_b);
  }

  void register_params(ParameterMap<Real>& m, const std::string& p) override {
    fwd.register_params(m, p + ".fwd");
    bwd.register_params(m, p + ".bwd");
    register_param(m, p + ".proj.weight", proj_w);
    register_param(m, p + ".proj.bias", proj_b);
  }
  std::size_t param_count() const override {
    return fwd.param_count() + bwd.param_count() + proj_w.size() + proj_b.size();
  }
  const char* kind() const override { return "blstm"; }
};

}  // namespace semcom::nn
