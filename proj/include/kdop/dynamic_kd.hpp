#pragma once

// Attention-equipped LSTM encoder-decoder trained on majority-class series.
//
// Shapes, for a series of T steps and v features with hidden size h:
//   encoder: two stacked LSTM layers, v -> h -> h, top-layer states H (T x h)
//   attention: per feature j, e_{j,t} = tanh(u_j . s_prev + w_j . H_t + b_j),
//              alpha_{j,.} = softmax_t(e_{j,.}), c_j = sum_t alpha_{j,t} H_t
//   decoder: two stacked LSTM layers, (v*h) -> h -> h, seeded with the
//            encoder's final layer states; at every step the input is the
//            concatenation of the v contexts recomputed against the previous
//            top decoder state s_prev
//   output:  x_hat_t = s_t W_out + b_out  (W_out is h x v)
// Inverted dropout sits between stacked layers, in training mode only.
// LSTM gate layout in every weight/bias block is [input, forget, cell, output].

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kdop/error.hpp"
#include "kdop/numerics.hpp"

namespace kdop::dynamic_kd {

struct LstmLayerParams {
  Mat w_x;  // 4h x d
  Mat w_h;  // 4h x h
  Mat b;    // 1 x 4h

  std::size_t hidden() const { return w_h.cols; }
  std::size_t input() const { return w_x.cols; }
  bool operator==(const LstmLayerParams&) const = default;
};

struct AttentionParams {
  Mat u;  // v x h, scores the previous decoder state
  Mat w;  // v x h, scores each encoder state
  Mat b;  // 1 x v
  bool operator==(const AttentionParams&) const = default;
};

struct AutoencoderParams {
  std::size_t n_features = 0;
  std::size_t hidden = 0;
  double dropout = 0.5;
  LstmLayerParams encoder[2];
  LstmLayerParams decoder[2];
  AttentionParams attention;
  Mat w_out;  // h x v
  Mat b_out;  // 1 x v

  // Fixed traversal order shared by the optimizer, gradient checks and
  // checkpoints.
  std::vector<Mat*> tensors() {
    return {&encoder[0].w_x, &encoder[0].w_h, &encoder[0].b, &encoder[1].w_x, &encoder[1].w_h, &encoder[1].b,
            &decoder[0].w_x, &decoder[0].w_h, &decoder[0].b, &decoder[1].w_x, &decoder[1].w_h, &decoder[1].b,
            &attention.u,    &attention.w,    &attention.b,  &w_out,          &b_out};
  }
  std::vector<const Mat*> tensors() const {
    auto* self = const_cast<AutoencoderParams*>(this);
    const auto t = self->tensors();
    return {t.begin(), t.end()};
  }
  static const std::vector<std::string>& tensor_names() {
    static const std::vector<std::string> names = {
        "encoder0.w_x", "encoder0.w_h", "encoder0.b", "encoder1.w_x", "encoder1.w_h", "encoder1.b",
        "decoder0.w_x", "decoder0.w_h", "decoder0.b", "decoder1.w_x", "decoder1.w_h", "decoder1.b",
        "attention.u",  "attention.w",  "attention.b", "output.w",    "output.b"};
    return names;
  }

  bool operator==(const AutoencoderParams&) const = default;
};

// Same shapes as `like`, every entry zero. Used for gradient accumulators.
inline AutoencoderParams zeros_like(const AutoencoderParams& like) {
  AutoencoderParams z = like;
  for (Mat* m : z.tensors()) m->fill(0.0);
  return z;
}

inline LstmLayerParams init_lstm_layer(Rng& rng, std::size_t input, std::size_t hidden) {
  LstmLayerParams p;
  // Glorot bound computed per gate block (fan_in = input, fan_out = hidden).
  p.w_x = Mat(4 * hidden, input);
  p.w_h = Mat(4 * hidden, hidden);
  for (std::size_t gate = 0; gate < 4; ++gate) {
    const Mat wx = glorot_init(rng, hidden, input);
    const Mat wh = glorot_init(rng, hidden, hidden);
    std::copy(wx.data.begin(), wx.data.end(), p.w_x.data.begin() + static_cast<std::ptrdiff_t>(gate * hidden * input));
    std::copy(wh.data.begin(), wh.data.end(),
              p.w_h.data.begin() + static_cast<std::ptrdiff_t>(gate * hidden * hidden));
  }
  p.b = Mat(1, 4 * hidden);
  for (std::size_t k = 0; k < hidden; ++k) p.b.data[hidden + k] = 1.0;  // forget gate
  return p;
}

inline AutoencoderParams init_params(Rng& rng, std::size_t n_features, std::size_t hidden, double dropout) {
  if (n_features == 0 || hidden == 0) throw DimensionError("init_params: n_features and hidden must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
  AutoencoderParams p;
  p.n_features = n_features;
  p.hidden = hidden;
  p.dropout = dropout;
  p.encoder[0] = init_lstm_layer(rng, n_features, hidden);
  p.encoder[1] = init_lstm_layer(rng, hidden, hidden);
  p.decoder[0] = init_lstm_layer(rng, n_features * hidden, hidden);
  p.decoder[1] = init_lstm_layer(rng, hidden, hidden);
  p.attention.u = glorot_init(rng, n_features, hidden);
  p.attention.w = glorot_init(rng, n_features, hidden);
  p.attention.b = Mat(1, n_features);
  p.w_out = glorot_init(rng, hidden, n_features);
  p.b_out = Mat(1, n_features);
  return p;
}

namespace detail {

// One LSTM step. `gates` receives the post-activation [i, f, g, o] values.
inline void cell_forward(const LstmLayerParams& p, std::span<const double> x, std::span<const double> h_prev,
                         std::span<const double> c_prev, std::span<double> gates, std::span<double> h_out,
                         std::span<double> c_out) {
  const std::size_t hid = p.hidden();
  const std::size_t din = p.input();
  for (std::size_t r = 0; r < 4 * hid; ++r) {
    const double* wx = p.w_x.data.data() + r * din;
    const double* wh = p.w_h.data.data() + r * hid;
    double z = p.b.data[r];
    for (std::size_t k = 0; k < din; ++k) z += wx[k] * x[k];
    for (std::size_t k = 0; k < hid; ++k) z += wh[k] * h_prev[k];
    gates[r] = (r >= 2 * hid && r < 3 * hid) ? std::tanh(z) : sigmoid(z);
  }
  for (std::size_t k = 0; k < hid; ++k) {
    const double i = gates[k], f = gates[hid + k], g = gates[2 * hid + k], o = gates[3 * hid + k];
    c_out[k] = f * c_prev[k] + i * g;
    h_out[k] = o * std::tanh(c_out[k]);
  }
}

// Backward through one step. `dc` is the carried cell gradient on entry and
// the gradient w.r.t. c_prev on exit. dx is accumulated; dh_prev is
// overwritten.
inline void cell_backward(const LstmLayerParams& p, LstmLayerParams& g, std::span<const double> x,
                          std::span<const double> h_prev, std::span<const double> c_prev, std::span<const double> gates,
                          std::span<const double> c, std::span<const double> dh, std::span<double> dc,
                          std::span<double> dx, std::span<double> dh_prev, std::vector<double>& scratch) {
  const std::size_t hid = p.hidden();
  const std::size_t din = p.input();
  scratch.assign(4 * hid, 0.0);
  auto& dpre = scratch;
  for (std::size_t k = 0; k < hid; ++k) {
    const double i = gates[k], f = gates[hid + k], gg = gates[2 * hid + k], o = gates[3 * hid + k];
    const double tc = std::tanh(c[k]);
    const double dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
    dpre[k] = dct * gg * i * (1.0 - i);
    dpre[hid + k] = dct * c_prev[k] * f * (1.0 - f);
    dpre[2 * hid + k] = dct * i * (1.0 - gg * gg);
    dpre[3 * hid + k] = dh[k] * tc * o * (1.0 - o);
    dc[k] = dct * f;
  }
  std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
  for (std::size_t r = 0; r < 4 * hid; ++r) {
    const double d = dpre[r];
    if (d == 0.0) continue;
    g.b.data[r] += d;
    const double* wx = p.w_x.data.data() + r * din;
    const double* wh = p.w_h.data.data() + r * hid;
    double* gwx = g.w_x.data.data() + r * din;
    double* gwh = g.w_h.data.data() + r * hid;
    for (std::size_t k = 0; k < din; ++k) {
      gwx[k] += d * x[k];
      if (!dx.empty()) dx[k] += d * wx[k];
    }
    for (std::size_t k = 0; k < hid; ++k) {
      gwh[k] += d * h_prev[k];
      dh_prev[k] += d * wh[k];
    }
  }
}

// Per-layer record of a full unroll. Rows of h and c are offset by one:
// row 0 holds the initial state, row t+1 the state after step t.
struct LayerTrace {
  Mat x;      // T x d
  Mat h;      // (T+1) x h
  Mat c;      // (T+1) x h
  Mat gates;  // T x 4h
};

inline LayerTrace make_trace(std::size_t steps, std::size_t din, std::size_t hid) {
  return {Mat(steps, din), Mat(steps + 1, hid), Mat(steps + 1, hid), Mat(steps, 4 * hid)};
}

inline void step_layer(const LstmLayerParams& p, LayerTrace& tr, std::size_t t) {
  cell_forward(p, tr.x.row(t), tr.h.row(t), tr.c.row(t), tr.gates.row(t), tr.h.row(t + 1), tr.c.row(t + 1));
}

inline Mat dropout_mask(Rng* rng, std::size_t rows, std::size_t cols, double rate) {
  Mat m(rows, cols, 1.0);
  if (rng == nullptr || rate <= 0.0) return m;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : m.data) v = rng->uniform() < rate ? 0.0 : keep_scale;
  return m;
}

struct ForwardTrace {
  LayerTrace enc[2];
  LayerTrace dec[2];
  Mat enc_mask;               // T x h, applied to encoder layer 0 output
  Mat dec_mask;               // T x h, applied to decoder layer 0 output
  Mat enc_scores;             // v x T, w_j . H_t (query-independent part)
  std::vector<Mat> alpha;     // per decode step: v x T
  std::vector<Mat> e;         // per decode step: v x T, tanh scores
  Mat output;                 // T x v
};

// Attention for one decode step. Writes alpha and tanh scores (v x T) and the
// concatenated contexts (v*h) into `z`.
inline void attention_step(const AttentionParams& ap, const Mat& enc_scores, const LayerTrace& top,
                           std::span<const double> query, Mat& alpha, Mat& e, std::span<double> z) {
  const std::size_t v = ap.u.rows;
  const std::size_t hid = ap.u.cols;
  const std::size_t steps = enc_scores.cols;
  std::vector<double> pre(steps);
  std::fill(z.begin(), z.end(), 0.0);
  for (std::size_t j = 0; j < v; ++j) {
    double q = ap.b.data[j];
    const auto uj = ap.u.row(j);
    for (std::size_t k = 0; k < hid; ++k) q += uj[k] * query[k];
    for (std::size_t t = 0; t < steps; ++t) {
      e(j, t) = std::tanh(q + enc_scores(j, t));
      pre[t] = e(j, t);
    }
    const auto a = softmax(pre);
    double* zj = z.data() + j * hid;
    for (std::size_t t = 0; t < steps; ++t) {
      alpha(j, t) = a[t];
      const auto ht = top.h.row(t + 1);
      for (std::size_t k = 0; k < hid; ++k) zj[k] += a[t] * ht[k];
    }
  }
}

inline ForwardTrace forward(const AutoencoderParams& p, const Mat& series, Rng* dropout_rng) {
  if (series.cols != p.n_features)
    throw DimensionError("forward: series has " + std::to_string(series.cols) + " features, model expects " +
                         std::to_string(p.n_features));
  if (series.rows == 0) throw DimensionError("forward: empty series");
  const std::size_t steps = series.rows, v = p.n_features, hid = p.hidden;
  ForwardTrace tr;
  tr.enc[0] = make_trace(steps, v, hid);
  tr.enc[1] = make_trace(steps, hid, hid);
  tr.dec[0] = make_trace(steps, v * hid, hid);
  tr.dec[1] = make_trace(steps, hid, hid);
  tr.enc_mask = dropout_mask(dropout_rng, steps, hid, p.dropout);
  tr.dec_mask = dropout_mask(dropout_rng, steps, hid, p.dropout);

  tr.enc[0].x = series;
  for (std::size_t t = 0; t < steps; ++t) {
    step_layer(p.encoder[0], tr.enc[0], t);
    for (std::size_t k = 0; k < hid; ++k) tr.enc[1].x(t, k) = tr.enc[0].h(t + 1, k) * tr.enc_mask(t, k);
    step_layer(p.encoder[1], tr.enc[1], t);
  }

  tr.enc_scores = Mat(v, steps);
  for (std::size_t j = 0; j < v; ++j) {
    const auto wj = p.attention.w.row(j);
    for (std::size_t t = 0; t < steps; ++t) {
      const auto ht = tr.enc[1].h.row(t + 1);
      double s = 0.0;
      for (std::size_t k = 0; k < hid; ++k) s += wj[k] * ht[k];
      tr.enc_scores(j, t) = s;
    }
  }

  for (int l = 0; l < 2; ++l) {
    std::copy_n(tr.enc[l].h.row(steps).begin(), hid, tr.dec[l].h.row(0).begin());
    std::copy_n(tr.enc[l].c.row(steps).begin(), hid, tr.dec[l].c.row(0).begin());
  }

  tr.alpha.assign(steps, Mat(v, steps));
  tr.e.assign(steps, Mat(v, steps));
  tr.output = Mat(steps, v);
  for (std::size_t t = 0; t < steps; ++t) {
    attention_step(p.attention, tr.enc_scores, tr.enc[1], tr.dec[1].h.row(t), tr.alpha[t], tr.e[t], tr.dec[0].x.row(t));
    step_layer(p.decoder[0], tr.dec[0], t);
    for (std::size_t k = 0; k < hid; ++k) tr.dec[1].x(t, k) = tr.dec[0].h(t + 1, k) * tr.dec_mask(t, k);
    step_layer(p.decoder[1], tr.dec[1], t);
    const auto s = tr.dec[1].h.row(t + 1);
    for (std::size_t f = 0; f < v; ++f) {
      double y = p.b_out.data[f];
      for (std::size_t k = 0; k < hid; ++k) y += s[k] * p.w_out(k, f);
      tr.output(t, f) = y;
    }
  }
  return tr;
}

// Accumulates d(loss)/d(params) into `g` given d(loss)/d(output).
inline void backward(const AutoencoderParams& p, const ForwardTrace& tr, const Mat& d_out, AutoencoderParams& g) {
  const std::size_t steps = tr.output.rows, v = p.n_features, hid = p.hidden;
  std::vector<double> scratch;

  Mat d_top(steps + 1, hid);  // gradient w.r.t. decoder top states s_t
  Mat d_low(steps + 1, hid);  // gradient w.r.t. decoder layer-0 states
  for (std::size_t t = 0; t < steps; ++t) {
    const auto s = tr.dec[1].h.row(t + 1);
    for (std::size_t f = 0; f < v; ++f) {
      const double d = d_out(t, f);
      if (d == 0.0) continue;
      g.b_out.data[f] += d;
      for (std::size_t k = 0; k < hid; ++k) {
        g.w_out(k, f) += s[k] * d;
        d_top(t + 1, k) += p.w_out(k, f) * d;
      }
    }
  }

  Mat d_enc_top(steps + 1, hid);  // gradient w.r.t. encoder top states H
  std::vector<double> dc_top(hid, 0.0), dc_low(hid, 0.0);
  std::vector<double> dx(hid), dz(v * hid), dh_prev(hid), d_alpha(steps);
  for (std::size_t t = steps; t-- > 0;) {
    std::fill(dx.begin(), dx.end(), 0.0);
    cell_backward(p.decoder[1], g.decoder[1], tr.dec[1].x.row(t), tr.dec[1].h.row(t), tr.dec[1].c.row(t),
                  tr.dec[1].gates.row(t), tr.dec[1].c.row(t + 1), d_top.row(t + 1), dc_top, dx, dh_prev, scratch);
    for (std::size_t k = 0; k < hid; ++k) {
      d_low(t + 1, k) += dx[k] * tr.dec_mask(t, k);
      d_top(t, k) += dh_prev[k];
    }

    std::fill(dz.begin(), dz.end(), 0.0);
    cell_backward(p.decoder[0], g.decoder[0], tr.dec[0].x.row(t), tr.dec[0].h.row(t), tr.dec[0].c.row(t),
                  tr.dec[0].gates.row(t), tr.dec[0].c.row(t + 1), d_low.row(t + 1), dc_low, dz, dh_prev, scratch);
    for (std::size_t k = 0; k < hid; ++k) d_low(t, k) += dh_prev[k];

    // Attention at decode step t; the query was the top state before it.
    const Mat& alpha = tr.alpha[t];
    const Mat& e = tr.e[t];
    const auto query = tr.dec[1].h.row(t);
    for (std::size_t j = 0; j < v; ++j) {
      const double* dcj = dz.data() + j * hid;
      double weighted = 0.0;
      for (std::size_t tau = 0; tau < steps; ++tau) {
        const auto h_tau = tr.enc[1].h.row(tau + 1);
        double da = 0.0;
        for (std::size_t k = 0; k < hid; ++k) {
          da += dcj[k] * h_tau[k];
          d_enc_top(tau + 1, k) += alpha(j, tau) * dcj[k];
        }
        d_alpha[tau] = da;
        weighted += alpha(j, tau) * da;
      }
      double d_query_total = 0.0;
      const auto wj = p.attention.w.row(j);
      auto gwj = g.attention.w.row(j);
      for (std::size_t tau = 0; tau < steps; ++tau) {
        const double de = alpha(j, tau) * (d_alpha[tau] - weighted);
        const double dpre = de * (1.0 - e(j, tau) * e(j, tau));
        if (dpre == 0.0) continue;
        d_query_total += dpre;
        const auto h_tau = tr.enc[1].h.row(tau + 1);
        for (std::size_t k = 0; k < hid; ++k) {
          gwj[k] += dpre * h_tau[k];
          d_enc_top(tau + 1, k) += dpre * wj[k];
        }
      }
      g.attention.b.data[j] += d_query_total;
      const auto uj = p.attention.u.row(j);
      auto guj = g.attention.u.row(j);
      for (std::size_t k = 0; k < hid; ++k) {
        guj[k] += d_query_total * query[k];
        d_top(t, k) += d_query_total * uj[k];
      }
    }
  }

  // Decoder initial states are the encoder final states.
  Mat d_enc_low(steps + 1, hid);
  for (std::size_t k = 0; k < hid; ++k) {
    d_enc_top(steps, k) += d_top(0, k);
    d_enc_low(steps, k) += d_low(0, k);
  }
  std::vector<double> dc_enc_top = dc_top, dc_enc_low = dc_low;
  for (std::size_t t = steps; t-- > 0;) {
    std::fill(dx.begin(), dx.end(), 0.0);
    cell_backward(p.encoder[1], g.encoder[1], tr.enc[1].x.row(t), tr.enc[1].h.row(t), tr.enc[1].c.row(t),
                  tr.enc[1].gates.row(t), tr.enc[1].c.row(t + 1), d_enc_top.row(t + 1), dc_enc_top, dx, dh_prev,
                  scratch);
    for (std::size_t k = 0; k < hid; ++k) {
      d_enc_low(t + 1, k) += dx[k] * tr.enc_mask(t, k);
      d_enc_top(t, k) += dh_prev[k];
    }
    cell_backward(p.encoder[0], g.encoder[0], tr.enc[0].x.row(t), tr.enc[0].h.row(t), tr.enc[0].c.row(t),
                  tr.enc[0].gates.row(t), tr.enc[0].c.row(t + 1), d_enc_low.row(t + 1), dc_enc_low, {}, dh_prev,
                  scratch);
    for (std::size_t k = 0; k < hid; ++k) d_enc_low(t, k) += dh_prev[k];
  }
}

inline Mat mean_attention(const ForwardTrace& tr) {
  const std::size_t steps = tr.output.rows;
  const std::size_t v = tr.output.cols;
  Mat c(steps, v);
  for (const Mat& a : tr.alpha)
    for (std::size_t j = 0; j < v; ++j)
      for (std::size_t t = 0; t < steps; ++t) c(t, j) += a(j, t);
  for (double& x : c.data) x /= static_cast<double>(steps);
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public building blocks

struct CellState {
  std::vector<double> h;
  std::vector<double> c;
};

inline CellState lstm_cell(std::span<const double> x, std::span<const double> h_prev, std::span<const double> c_prev,
                           const LstmLayerParams& p) {
  const std::size_t hid = p.hidden();
  if (p.w_x.rows != 4 * hid || p.w_h.rows != 4 * hid || p.b.size() != 4 * hid)
    throw DimensionError("lstm_cell: inconsistent parameter shapes");
  if (x.size() != p.input() || h_prev.size() != hid || c_prev.size() != hid)
    throw DimensionError("lstm_cell: input " + std::to_string(x.size()) + "/state " + std::to_string(h_prev.size()) +
                         " vs layer " + std::to_string(p.input()) + "/" + std::to_string(hid));
  CellState out{std::vector<double>(hid), std::vector<double>(hid)};
  std::vector<double> gates(4 * hid);
  detail::cell_forward(p, x, h_prev, c_prev, gates, out.h, out.c);
  return out;
}

// Top-layer encoder states, T x h. Pass a generator to enable dropout.
inline Mat encode(const AutoencoderParams& p, const Mat& series, Rng* dropout_rng = nullptr) {
  const auto tr = detail::forward(p, series, dropout_rng);
  Mat h(series.rows, p.hidden);
  for (std::size_t t = 0; t < series.rows; ++t) std::copy_n(tr.enc[1].h.row(t + 1).begin(), p.hidden, h.row(t).begin());
  return h;
}

struct Attention {
  Mat alpha;     // T x v; column j is feature j's distribution over time
  Mat contexts;  // v x h
};

inline Attention attend(const Mat& encoded, std::span<const double> s_prev, const AttentionParams& ap) {
  const std::size_t steps = encoded.rows, hid = encoded.cols, v = ap.u.rows;
  if (ap.u.cols != hid || ap.w.cols != hid || ap.w.rows != v || ap.b.size() != v || s_prev.size() != hid)
    throw DimensionError("attend: shapes do not match hidden size " + std::to_string(hid));
  detail::LayerTrace top = detail::make_trace(steps, 0, hid);
  for (std::size_t t = 0; t < steps; ++t) std::copy_n(encoded.row(t).begin(), hid, top.h.row(t + 1).begin());
  Mat enc_scores(v, steps);
  for (std::size_t j = 0; j < v; ++j)
    for (std::size_t t = 0; t < steps; ++t) {
      double s = 0.0;
      for (std::size_t k = 0; k < hid; ++k) s += ap.w(j, k) * encoded(t, k);
      enc_scores(j, t) = s;
    }
  Mat alpha(v, steps), e(v, steps);
  std::vector<double> z(v * hid);
  detail::attention_step(ap, enc_scores, top, s_prev, alpha, e, z);
  Attention out{Mat(steps, v), Mat(v, hid, std::move(z))};
  for (std::size_t j = 0; j < v; ++j)
    for (std::size_t t = 0; t < steps; ++t) out.alpha(t, j) = alpha(j, t);
  return out;
}

struct Reconstruction {
  Mat series;     // T x v
  Mat attention;  // T x v, per-feature attention averaged over decode steps
};

inline Reconstruction reconstruct(const AutoencoderParams& p, const Mat& series, Rng* dropout_rng = nullptr) {
  auto tr = detail::forward(p, series, dropout_rng);
  return {std::move(tr.output), detail::mean_attention(tr)};
}

// Frobenius norm of the residual: sqrt(sum_t ||x_t - x_hat_t||^2).
inline double reconstruction_loss(const Mat& x, const Mat& x_hat) {
  if (x.rows != x_hat.rows || x.cols != x_hat.cols)
    throw DimensionError("reconstruction_loss: " + x.shape() + " vs " + x_hat.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data[i] - x_hat.data[i];
    s += d * d;
  }
  return std::sqrt(s);
}

struct BatchGradient {
  double loss = 0.0;  // mean reconstruction loss over the batch
  AutoencoderParams grad;
};

// Exact gradient of the mean per-patient loss. Each patient gets its own
// dropout stream when `dropout_rng` is set.
inline BatchGradient gradients(const AutoencoderParams& p, std::span<const Mat> batch, Rng* dropout_rng = nullptr) {
  if (batch.empty()) throw TrainingError("gradients: empty batch");
  BatchGradient out{0.0, zeros_like(p)};
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const Mat& x : batch) {
    const auto tr = detail::forward(p, x, dropout_rng);
    const double loss = reconstruction_loss(x, tr.output);
    out.loss += loss * inv_n;
    if (loss == 0.0) continue;  // subgradient 0 at a perfect fit
    Mat d_out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) d_out.data[i] = (tr.output.data[i] - x.data[i]) / loss * inv_n;
    detail::backward(p, tr, d_out, out.grad);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t max_epochs = 1000;
  std::size_t patience = 50;
  double lr = 0.001;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  double holdout_fraction = 0.1;
  std::size_t batch_size = 1;   // one patient per Adam step
  std::size_t hidden = 0;  // 0 selects 2 x n_features
  double min_delta = 0.0;  // holdout improvement smaller than this counts as none

  void validate() const {
    if (max_epochs == 0) throw ConfigError("train.max_epochs must be >= 1");
    if (patience >= max_epochs) throw ConfigError("train.patience must be smaller than train.max_epochs");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train.dropout must lie in [0,1)");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
      throw ConfigError("train.holdout_fraction must lie in [0,1)");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(min_delta >= 0.0)) throw ConfigError("train.min_delta must be nonnegative");
  }
  bool operator==(const TrainConfig&) const = default;
};

struct TrainLog {
  std::vector<double> train_loss;    // mean training loss per epoch (dropout on)
  std::vector<double> holdout_loss;  // mean holdout loss per epoch (dropout off)
  std::vector<double> best_loss;     // running best holdout loss
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

struct TrainResult {
  AutoencoderParams params;
  TrainLog log;
};

inline double mean_loss(const AutoencoderParams& p, std::span<const Mat> set) {
  double total = 0.0;
  for (const Mat& x : set) total += reconstruction_loss(x, detail::forward(p, x, nullptr).output);
  return total / static_cast<double>(set.size());
}

// Fits the autoencoder on majority-class series only; the caller is
// responsible for passing label-0 patients. A fraction of them is held out
// to drive early stopping; the best-holdout parameters are returned.
inline TrainResult train(std::span<const Mat> negatives, const TrainConfig& cfg) {
  cfg.validate();
  if (negatives.empty()) throw TrainingError("train: no negative-class series");
  const std::size_t steps = negatives[0].rows, v = negatives[0].cols;
  for (const Mat& x : negatives) {
    if (x.rows != steps || x.cols != v) throw DimensionError("train: series shapes differ within the training set");
    if (!all_finite(x)) throw DataError("train: non-finite value in a training series");
  }

  Rng rng(cfg.seed);
  const std::size_t hidden = cfg.hidden ? cfg.hidden : 2 * v;
  AutoencoderParams params = init_params(rng, v, hidden, cfg.dropout);

  std::vector<std::size_t> order(negatives.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::size_t n_hold = 0;
  if (negatives.size() >= 2 && cfg.holdout_fraction > 0.0)
    n_hold = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(negatives.size()))), 1,
        negatives.size() - 1);
  std::vector<Mat> holdout, fit;
  for (std::size_t k = 0; k < order.size(); ++k) (k < n_hold ? holdout : fit).push_back(negatives[order[k]]);
  const std::span<const Mat> monitor = holdout.empty() ? std::span<const Mat>(fit) : std::span<const Mat>(holdout);

  auto tensors = params.tensors();
  std::vector<AdamState> adam(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) adam[i] = AdamState(tensors[i]->rows, tensors[i]->cols, cfg.lr);

  TrainResult result{params, {}};
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> idx(fit.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<Mat> batch;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(idx);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(idx.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(fit[idx[k]]);
      auto bg = gradients(params, batch, cfg.dropout > 0.0 ? &rng : nullptr);
      epoch_loss += bg.loss * static_cast<double>(batch.size());
      const auto grads = bg.grad.tensors();
      for (std::size_t i = 0; i < tensors.size(); ++i) adam_step(adam[i], *tensors[i], *grads[i]);
    }
    epoch_loss /= static_cast<double>(idx.size());
    const double monitored = mean_loss(params, monitor);
    if (!std::isfinite(epoch_loss) || !std::isfinite(monitored))
      throw TrainingError("train: loss diverged at epoch " + std::to_string(epoch + 1));
    result.log.train_loss.push_back(epoch_loss);
    result.log.holdout_loss.push_back(monitored);
    if (monitored < best - cfg.min_delta) {
      best = monitored;
      since_best = 0;
      result.params = params;
      result.log.best_epoch = epoch;
    } else if (++since_best >= cfg.patience) {
      result.log.best_loss.push_back(best);
      result.log.stopped_early = true;
      break;
    }
    result.log.best_loss.push_back(best);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scoring

struct DynamicScore {
  double error = 0.0;
  Mat attention;  // T x v
  bool operator==(const DynamicScore&) const = default;
};

inline DynamicScore score_one(const AutoencoderParams& p, const Mat& series) {
  for (double x : series.data)
    if (!(x >= -0.01 && x <= 1.01))
      throw DataError("score: input outside the scaled range [0,1]; scale series before scoring");
  auto rec = reconstruct(p, series);
  return {reconstruction_loss(series, rec.series), std::move(rec.attention)};
}

inline std::vector<DynamicScore> score(const AutoencoderParams& p, std::span<const Mat> series_set) {
  std::vector<DynamicScore> out;
  out.reserve(series_set.size());
  for (const Mat& x : series_set) out.push_back(score_one(p, x));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint

inline nlohmann::json to_checkpoint(const AutoencoderParams& p, const TrainConfig& cfg) {
  nlohmann::json tensors = nlohmann::json::array();
  const auto ts = p.tensors();
  const auto& names = AutoencoderParams::tensor_names();
  for (std::size_t i = 0; i < ts.size(); ++i)
    tensors.push_back({{"name", names[i]}, {"rows", ts[i]->rows}, {"cols", ts[i]->cols}, {"data", ts[i]->data}});
  return {{"format", "kdop-dynamic-kd"},
          {"version", 1},
          {"n_features", p.n_features},
          {"hidden", p.hidden},
          {"dropout", p.dropout},
          {"train_config",
           {{"max_epochs", cfg.max_epochs},
            {"patience", cfg.patience},
            {"lr", cfg.lr},
            {"dropout", cfg.dropout},
            {"seed", cfg.seed},
            {"holdout_fraction", cfg.holdout_fraction},
            {"batch_size", cfg.batch_size},
            {"hidden", cfg.hidden},
            {"min_delta", cfg.min_delta}}},
          {"tensors", std::move(tensors)}};
}

inline std::pair<AutoencoderParams, TrainConfig> from_checkpoint(const nlohmann::json& j) {
  if (j.value("format", "") != "kdop-dynamic-kd" || j.value("version", 0) != 1)
    throw ParseError("dynamic-kd checkpoint: unsupported format or version");
  TrainConfig cfg;
  const auto& c = j.at("train_config");
  c.at("max_epochs").get_to(cfg.max_epochs);
  c.at("patience").get_to(cfg.patience);
  c.at("lr").get_to(cfg.lr);
  c.at("dropout").get_to(cfg.dropout);
  c.at("seed").get_to(cfg.seed);
  c.at("holdout_fraction").get_to(cfg.holdout_fraction);
  c.at("batch_size").get_to(cfg.batch_size);
  c.at("hidden").get_to(cfg.hidden);
  c.at("min_delta").get_to(cfg.min_delta);

  Rng rng(0);
  AutoencoderParams p = init_params(rng, j.at("n_features").get<std::size_t>(), j.at("hidden").get<std::size_t>(),
                                    j.at("dropout").get<double>());
  const auto ts = p.tensors();
  const auto& names = AutoencoderParams::tensor_names();
  const auto& jt = j.at("tensors");
  if (jt.size() != ts.size()) throw ParseError("dynamic-kd checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& e = jt[i];
    if (e.at("name").get<std::string>() != names[i] || e.at("rows").get<std::size_t>() != ts[i]->rows ||
        e.at("cols").get<std::size_t>() != ts[i]->cols)
      throw ParseError("dynamic-kd checkpoint: unexpected tensor " + e.at("name").get<std::string>());
    e.at("data").get_to(ts[i]->data);
    if (ts[i]->data.size() != ts[i]->rows * ts[i]->cols)
      throw ParseError("dynamic-kd checkpoint: wrong element count in " + names[i]);
  }
  return {std::move(p), cfg};
}

}  // namespace kdop::dynamic_kd
