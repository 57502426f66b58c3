// Copyright 2026 The mixpgd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mixpgd/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mixpgd/kernels.hpp"
#include "mixpgd/util.hpp"

namespace mixpgd {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model.") + field + ": " + what);
  };
  require(n_feats >= 1, "n_feats", "must be >= 1");
  require(cnn_channels >= 1, "cnn_channels", "must be >= 1");
  require(n_birnn_layers >= 1, "n_birnn_layers", "must be >= 1");
  require(rnn_dim >= 1, "rnn_dim", "must be >= 1");
  require(rnn_hidden >= 1, "rnn_hidden", "must be >= 1");
  require(n_classes >= 2, "n_classes", "must be >= 2");
  require(conv_downsample_factor >= 1, "conv_downsample_factor", "must be >= 1");
  require(freq_stride >= 1, "freq_stride", "must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout", "must lie in [0, 1)");
}

void ModelConfig::validate(const Alphabet& alphabet) const {
  validate();
  if (n_classes != alphabet.n_classes()) {
    throw std::invalid_argument("model.n_classes: " + std::to_string(n_classes) +
                                " does not equal alphabet size + 1 (" +
                                std::to_string(alphabet.n_classes()) + ")");
  }
}

// ---------------------------------------------------------------------------
// ParameterSet

void ParameterSet::add(std::string name, Tensor value) {
  params_.push_back({std::move(name), std::move(value)});
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& p : params_) out.add(p.name, Tensor(p.value.shape()));
  return out;
}

void ParameterSet::add_scaled(const ParameterSet& other, double scale) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i].value;
    const auto& src = other.params_[i].value;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
  }
}

void ParameterSet::scale(double s) {
  for (auto& p : params_) {
    for (auto& v : p.value.values()) v *= s;
  }
}

double ParameterSet::squared_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    for (double v : p.value.values()) s += v * v;
  }
  return s;
}

std::string ParameterSet::hash() const {
  Fnv1a h;
  for (const auto& p : params_) {
    h.update(p.name);
    for (auto d : p.value.shape()) h.update(&d, sizeof(d));
    h.update(p.value.span());
  }
  return h.hex();
}

Tensor ModelOutput::example(std::size_t i) const {
  const std::size_t t = out_lengths.at(i), k = n_classes();
  Tensor m({t, k});
  const double* src = log_probs.data() + i * log_probs.dim(1) * k;
  std::copy(src, src + t * k, m.data());
  return m;
}

// ---------------------------------------------------------------------------
// Layout

namespace {

struct DirSlots {
  std::size_t w_ih, w_hh, b_ih, b_hh;
};
struct BlockSlots {
  std::size_t ln1_g, ln1_b, c1_w, c1_b, ln2_g, ln2_b, c2_w, c2_b;
};
struct RnnSlots {
  std::size_t ln_g, ln_b;
  DirSlots dir[2];
};
struct Slots {
  std::size_t conv_w, conv_b;
  std::vector<BlockSlots> blocks;
  std::size_t proj_w, proj_b;
  std::vector<RnnSlots> rnns;
  std::size_t fc1_w, fc1_b, fc2_w, fc2_b;
};

struct Dims {
  std::size_t f_out;     // frequency bins after the front-end
  std::size_t flat;      // channels * f_out
  std::size_t h;         // GRU hidden
  std::size_t k;         // classes
};

Dims dims_of(const ModelConfig& c) {
  const std::size_t f_out = downsampled_length(c.n_feats, c.freq_stride);
  return {f_out, c.cnn_channels * f_out, c.rnn_hidden, c.n_classes};
}

// Builds the parameter list in a fixed order, recording each slot.
ParameterSet build_layout(const ModelConfig& c, Slots* slots) {
  const Dims d = dims_of(c);
  ParameterSet ps;
  Slots s;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    ps.add(std::move(name), Tensor(std::move(shape)));
    return ps.size() - 1;
  };
  const std::size_t ch = c.cnn_channels;
  s.conv_w = add("conv_in.weight", {ch, 1, 3, 3});
  s.conv_b = add("conv_in.bias", {ch});
  for (std::size_t b = 0; b < c.n_rescnn_blocks; ++b) {
    const std::string p = "rescnn" + std::to_string(b) + ".";
    BlockSlots bs;
    bs.ln1_g = add(p + "norm1.gamma", {d.f_out});
    bs.ln1_b = add(p + "norm1.beta", {d.f_out});
    bs.c1_w = add(p + "conv1.weight", {ch, ch, 3, 3});
    bs.c1_b = add(p + "conv1.bias", {ch});
    bs.ln2_g = add(p + "norm2.gamma", {d.f_out});
    bs.ln2_b = add(p + "norm2.beta", {d.f_out});
    bs.c2_w = add(p + "conv2.weight", {ch, ch, 3, 3});
    bs.c2_b = add(p + "conv2.bias", {ch});
    s.blocks.push_back(bs);
  }
  s.proj_w = add("proj.weight", {c.rnn_dim, d.flat});
  s.proj_b = add("proj.bias", {c.rnn_dim});
  for (std::size_t l = 0; l < c.n_birnn_layers; ++l) {
    const std::size_t in = l == 0 ? c.rnn_dim : 2 * d.h;
    const std::string p = "birnn" + std::to_string(l) + ".";
    RnnSlots rs;
    rs.ln_g = add(p + "norm.gamma", {in});
    rs.ln_b = add(p + "norm.beta", {in});
    const char* dir_names[2] = {"fwd.", "bwd."};
    for (int dir = 0; dir < 2; ++dir) {
      const std::string q = p + dir_names[dir];
      rs.dir[dir].w_ih = add(q + "w_ih", {3 * d.h, in});
      rs.dir[dir].w_hh = add(q + "w_hh", {3 * d.h, d.h});
      rs.dir[dir].b_ih = add(q + "b_ih", {3 * d.h});
      rs.dir[dir].b_hh = add(q + "b_hh", {3 * d.h});
    }
    s.rnns.push_back(rs);
  }
  s.fc1_w = add("classifier.fc1.weight", {d.h, 2 * d.h});
  s.fc1_b = add("classifier.fc1.bias", {d.h});
  s.fc2_w = add("classifier.fc2.weight", {d.k, d.h});
  s.fc2_b = add("classifier.fc2.bias", {d.k});
  if (slots) *slots = std::move(s);
  return ps;
}

// ---------------------------------------------------------------------------
// Elementwise layers

constexpr double kLayerNormEps = 1e-5;

void layer_norm_forward(const double* x, std::size_t rows, std::size_t dim, const double* gamma,
                        const double* beta, double* y, double* xhat, double* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * dim;
    double mean = 0.0;
    for (std::size_t i = 0; i < dim; ++i) mean += xr[i];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t i = 0; i < dim; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(dim);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[r] = rs;
    for (std::size_t i = 0; i < dim; ++i) {
      const double xh = (xr[i] - mean) * rs;
      xhat[r * dim + i] = xh;
      y[r * dim + i] = xh * gamma[i] + beta[i];
    }
  }
}

void layer_norm_backward(const double* dy, const double* xhat, const double* rstd, std::size_t rows,
                         std::size_t dim, const double* gamma, double* dx, double* dgamma,
                         double* dbeta) {
  const double inv = 1.0 / static_cast<double>(dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* dyr = dy + r * dim;
    const double* xh = xhat + r * dim;
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double g = dyr[i] * gamma[i];
      m1 += g;
      m2 += g * xh[i];
      if (dgamma) dgamma[i] += dyr[i] * xh[i];
      if (dbeta) dbeta[i] += dyr[i];
    }
    m1 *= inv;
    m2 *= inv;
    for (std::size_t i = 0; i < dim; ++i) {
      dx[r * dim + i] = rstd[r] * (dyr[i] * gamma[i] - m1 - xh[i] * m2);
    }
  }
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = gelu(x) then dropout; mask is empty in eval mode.
void gelu_dropout_forward(const std::vector<double>& x, std::vector<double>& y,
                          std::vector<double>& mask, double p, Rng* rng) {
  y.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
  mask.clear();
  if (rng && p > 0.0) {
    mask.resize(x.size());
    std::bernoulli_distribution keep(1.0 - p);
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = keep(*rng) ? scale : 0.0;
      y[i] *= mask[i];
    }
  }
}

// In place: dy -> dx through dropout then gelu.
void gelu_dropout_backward(const std::vector<double>& x, const std::vector<double>& mask,
                           std::vector<double>& grad) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    double g = grad[i];
    if (!mask.empty()) g *= mask[i];
    grad[i] = g * gelu_grad(x[i]);
  }
}

void dropout_forward(std::vector<double>& x, std::vector<double>& mask, double p, Rng* rng) {
  mask.clear();
  if (!rng || p <= 0.0) return;
  mask.resize(x.size());
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = keep(*rng) ? scale : 0.0;
    x[i] *= mask[i];
  }
}

void dropout_backward(const std::vector<double>& mask, std::vector<double>& grad) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
}

// ---------------------------------------------------------------------------
// Per-example forward/backward

struct BlockCache {
  std::vector<double> in;            // residual input [C, T, F]
  std::vector<double> ln1_xhat, ln1_rstd, ln1_out, act1, mask1;
  std::vector<double> c1_out;
  std::vector<double> ln2_xhat, ln2_rstd, ln2_out, act2, mask2;
};

struct DirCache {
  std::vector<double> r, z, n, hn;  // [T, h], in time order
};

struct RnnCache {
  std::vector<double> in;  // [T, Din]
  std::vector<double> ln_xhat, ln_rstd, ln_out, act, mask_act;
  DirCache dir[2];
  std::vector<double> out;  // [T, 2h] before dropout
  std::vector<double> mask_out;
};

struct ExampleCache {
  std::size_t t_in = 0, t_out = 0;
  std::vector<double> x0;  // [T, F] time-major input
  std::vector<BlockCache> blocks;
  std::vector<double> conv_out;  // [C, To, Fo] after residual stack
  std::vector<double> flat;      // [To, C*Fo]
  std::vector<RnnCache> rnns;
  std::vector<double> rnn_final;  // [To, 2h] after dropout
  std::vector<double> fc1_pre, fc1_act, fc1_mask;
  std::vector<double> log_probs;  // [To, K]
};

class ExampleRunner {
 public:
  ExampleRunner(const ModelConfig& cfg, const ParameterSet& params, const Slots& slots)
      : cfg_(cfg), params_(params), slots_(slots), d_(dims_of(cfg)) {}

  void forward(const double* features, std::size_t feat_stride, std::size_t frames, Rng* rng,
               ExampleCache& c) const;
  // dlog_probs: [To, K]. Writes d features into dx ([T, F] time-major) when
  // non-null; accumulates parameter gradients into grads when non-null.
  void backward(const ExampleCache& c, const double* dlog_probs, double* dx,
                ParameterSet* grads) const;

 private:
  const double* p(std::size_t slot) const { return params_[slot].value.data(); }
  double* g(ParameterSet* grads, std::size_t slot) const {
    return grads ? grads->operator[](slot).value.data() : nullptr;
  }

  kernels::Conv2dShape front_shape(std::size_t t) const {
    return {1, cfg_.cnn_channels, t, cfg_.n_feats, 3, cfg_.conv_downsample_factor, cfg_.freq_stride};
  }
  kernels::Conv2dShape block_shape(std::size_t t) const {
    return {cfg_.cnn_channels, cfg_.cnn_channels, t, d_.f_out, 3, 1, 1};
  }

  void gru_forward(const std::vector<double>& x, std::size_t t_len, std::size_t din,
                   const DirSlots& s, bool reverse, DirCache& dc, std::vector<double>& out,
                   std::size_t out_offset) const;
  void gru_backward(const std::vector<double>& x, std::size_t t_len, std::size_t din,
                    const DirSlots& s, bool reverse, const DirCache& dc,
                    const std::vector<double>& out, const std::vector<double>& dout,
                    std::size_t out_offset, std::vector<double>& dx, ParameterSet* grads) const;

  const ModelConfig& cfg_;
  const ParameterSet& params_;
  const Slots& slots_;
  Dims d_;
};

void ExampleRunner::gru_forward(const std::vector<double>& x, std::size_t t_len, std::size_t din,
                                const DirSlots& s, bool reverse, DirCache& dc,
                                std::vector<double>& out, std::size_t out_offset) const {
  const std::size_t h = d_.h, h3 = 3 * h, width = 2 * h;
  std::vector<double> gx(t_len * h3);
  kernels::gemm_nt(t_len, h3, din, x.data(), p(s.w_ih), gx.data(), false);
  const double* b_ih = p(s.b_ih);
  const double* b_hh = p(s.b_hh);
  dc.r.assign(t_len * h, 0.0);
  dc.z.assign(t_len * h, 0.0);
  dc.n.assign(t_len * h, 0.0);
  dc.hn.assign(t_len * h, 0.0);
  std::vector<double> h_prev(h, 0.0), gh(h3);
  for (std::size_t step = 0; step < t_len; ++step) {
    const std::size_t t = reverse ? t_len - 1 - step : step;
    kernels::gemm_nt(1, h3, h, h_prev.data(), p(s.w_hh), gh.data(), false);
    const double* gxt = gx.data() + t * h3;
    double* ht = out.data() + t * width + out_offset;
    for (std::size_t j = 0; j < h; ++j) {
      const double r = sigmoid(gxt[j] + b_ih[j] + gh[j] + b_hh[j]);
      const double z = sigmoid(gxt[h + j] + b_ih[h + j] + gh[h + j] + b_hh[h + j]);
      const double hn = gh[2 * h + j] + b_hh[2 * h + j];
      const double n = std::tanh(gxt[2 * h + j] + b_ih[2 * h + j] + r * hn);
      dc.r[t * h + j] = r;
      dc.z[t * h + j] = z;
      dc.n[t * h + j] = n;
      dc.hn[t * h + j] = hn;
      ht[j] = (1.0 - z) * n + z * h_prev[j];
    }
    std::copy(ht, ht + h, h_prev.begin());
  }
}

void ExampleRunner::gru_backward(const std::vector<double>& x, std::size_t t_len, std::size_t din,
                                 const DirSlots& s, bool reverse, const DirCache& dc,
                                 const std::vector<double>& out, const std::vector<double>& dout,
                                 std::size_t out_offset, std::vector<double>& dx,
                                 ParameterSet* grads) const {
  const std::size_t h = d_.h, h3 = 3 * h, width = 2 * h;
  std::vector<double> dgx(t_len * h3), dgh(t_len * h3), hprev_all(t_len * h, 0.0);
  std::vector<double> dh_next(h, 0.0), dh_prev(h);
  for (std::size_t step = t_len; step-- > 0;) {
    const std::size_t t = reverse ? t_len - 1 - step : step;
    const bool first = step == 0;
    const std::size_t t_prev = reverse ? t + 1 : t - 1;
    const double* hp = first ? nullptr : out.data() + t_prev * width + out_offset;
    const double* dyt = dout.data() + t * width + out_offset;
    double* dgxt = dgx.data() + t * h3;
    double* dght = dgh.data() + t * h3;
    for (std::size_t j = 0; j < h; ++j) {
      const double r = dc.r[t * h + j], z = dc.z[t * h + j], n = dc.n[t * h + j];
      const double hn = dc.hn[t * h + j];
      const double hprev = hp ? hp[j] : 0.0;
      hprev_all[t * h + j] = hprev;
      const double dh = dyt[j] + dh_next[j];
      const double dn = dh * (1.0 - z);
      const double dz = dh * (hprev - n);
      const double dn_pre = dn * (1.0 - n * n);
      const double dr_pre = dn_pre * hn * r * (1.0 - r);
      const double dz_pre = dz * z * (1.0 - z);
      dgxt[j] = dr_pre;
      dgxt[h + j] = dz_pre;
      dgxt[2 * h + j] = dn_pre;
      dght[j] = dr_pre;
      dght[h + j] = dz_pre;
      dght[2 * h + j] = dn_pre * r;
      dh_prev[j] = dh * z;
    }
    // dh_prev += W_hh^T dgh
    kernels::gemm_nn(1, h, h3, dght, p(s.w_hh), dh_prev.data(), true);
    dh_next.swap(dh_prev);
  }
  // dx += dgx * W_ih
  kernels::gemm_nn(t_len, din, h3, dgx.data(), p(s.w_ih), dx.data(), true);
  if (grads) {
    kernels::gemm_tn(h3, din, t_len, dgx.data(), x.data(), g(grads, s.w_ih), true);
    kernels::gemm_tn(h3, h, t_len, dgh.data(), hprev_all.data(), g(grads, s.w_hh), true);
    double* gb_ih = g(grads, s.b_ih);
    double* gb_hh = g(grads, s.b_hh);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t j = 0; j < h3; ++j) {
        gb_ih[j] += dgx[t * h3 + j];
        gb_hh[j] += dgh[t * h3 + j];
      }
    }
  }
}

void ExampleRunner::forward(const double* features, std::size_t feat_stride, std::size_t frames,
                            Rng* rng, ExampleCache& c) const {
  const std::size_t F = cfg_.n_feats, C = cfg_.cnn_channels, Fo = d_.f_out;
  const double pdrop = cfg_.dropout;
  c.t_in = frames;
  c.x0.resize(frames * F);
  for (std::size_t m = 0; m < F; ++m) {
    for (std::size_t t = 0; t < frames; ++t) c.x0[t * F + m] = features[m * feat_stride + t];
  }

  const auto fs = front_shape(frames);
  const std::size_t To = fs.out_h();
  c.t_out = To;
  std::vector<double> a(C * To * Fo);
  kernels::conv2d_forward(fs, c.x0.data(), p(slots_.conv_w), p(slots_.conv_b), a.data());

  const auto bshape = block_shape(To);
  const std::size_t rows = C * To;
  c.blocks.resize(cfg_.n_rescnn_blocks);
  for (std::size_t b = 0; b < cfg_.n_rescnn_blocks; ++b) {
    const BlockSlots& s = slots_.blocks[b];
    BlockCache& bc = c.blocks[b];
    bc.in = a;
    bc.ln1_xhat.resize(a.size());
    bc.ln1_rstd.resize(rows);
    bc.ln1_out.resize(a.size());
    layer_norm_forward(a.data(), rows, Fo, p(s.ln1_g), p(s.ln1_b), bc.ln1_out.data(),
                       bc.ln1_xhat.data(), bc.ln1_rstd.data());
    gelu_dropout_forward(bc.ln1_out, bc.act1, bc.mask1, pdrop, rng);
    bc.c1_out.resize(a.size());
    kernels::conv2d_forward(bshape, bc.act1.data(), p(s.c1_w), p(s.c1_b), bc.c1_out.data());
    bc.ln2_xhat.resize(a.size());
    bc.ln2_rstd.resize(rows);
    bc.ln2_out.resize(a.size());
    layer_norm_forward(bc.c1_out.data(), rows, Fo, p(s.ln2_g), p(s.ln2_b), bc.ln2_out.data(),
                       bc.ln2_xhat.data(), bc.ln2_rstd.data());
    gelu_dropout_forward(bc.ln2_out, bc.act2, bc.mask2, pdrop, rng);
    std::vector<double> c2(a.size());
    kernels::conv2d_forward(bshape, bc.act2.data(), p(s.c2_w), p(s.c2_b), c2.data());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += c2[i];
  }
  c.conv_out = a;

  // [C, To, Fo] -> [To, C*Fo]
  c.flat.resize(To * C * Fo);
  for (std::size_t ch = 0; ch < C; ++ch) {
    for (std::size_t t = 0; t < To; ++t) {
      for (std::size_t f = 0; f < Fo; ++f) c.flat[t * C * Fo + ch * Fo + f] = a[(ch * To + t) * Fo + f];
    }
  }

  std::vector<double> seq(To * cfg_.rnn_dim);
  kernels::gemm_nt(To, cfg_.rnn_dim, C * Fo, c.flat.data(), p(slots_.proj_w), seq.data(), false);
  const double* pb = p(slots_.proj_b);
  for (std::size_t t = 0; t < To; ++t) {
    for (std::size_t j = 0; j < cfg_.rnn_dim; ++j) seq[t * cfg_.rnn_dim + j] += pb[j];
  }

  c.rnns.resize(cfg_.n_birnn_layers);
  std::size_t din = cfg_.rnn_dim;
  for (std::size_t l = 0; l < cfg_.n_birnn_layers; ++l) {
    const RnnSlots& s = slots_.rnns[l];
    RnnCache& rc = c.rnns[l];
    rc.in = seq;
    rc.ln_xhat.resize(seq.size());
    rc.ln_rstd.resize(To);
    rc.ln_out.resize(seq.size());
    layer_norm_forward(seq.data(), To, din, p(s.ln_g), p(s.ln_b), rc.ln_out.data(),
                       rc.ln_xhat.data(), rc.ln_rstd.data());
    gelu_dropout_forward(rc.ln_out, rc.act, rc.mask_act, 0.0, nullptr);
    rc.out.assign(To * 2 * d_.h, 0.0);
    gru_forward(rc.act, To, din, s.dir[0], false, rc.dir[0], rc.out, 0);
    gru_forward(rc.act, To, din, s.dir[1], true, rc.dir[1], rc.out, d_.h);
    seq = rc.out;
    dropout_forward(seq, rc.mask_out, pdrop, rng);
    din = 2 * d_.h;
  }
  c.rnn_final = seq;

  c.fc1_pre.resize(To * d_.h);
  kernels::gemm_nt(To, d_.h, 2 * d_.h, seq.data(), p(slots_.fc1_w), c.fc1_pre.data(), false);
  const double* b1 = p(slots_.fc1_b);
  for (std::size_t t = 0; t < To; ++t) {
    for (std::size_t j = 0; j < d_.h; ++j) c.fc1_pre[t * d_.h + j] += b1[j];
  }
  gelu_dropout_forward(c.fc1_pre, c.fc1_act, c.fc1_mask, pdrop, rng);

  c.log_probs.resize(To * d_.k);
  kernels::gemm_nt(To, d_.k, d_.h, c.fc1_act.data(), p(slots_.fc2_w), c.log_probs.data(), false);
  const double* b2 = p(slots_.fc2_b);
  for (std::size_t t = 0; t < To; ++t) {
    double* row = c.log_probs.data() + t * d_.k;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d_.k; ++j) {
      row[j] += b2[j];
      mx = std::max(mx, row[j]);
    }
    double se = 0.0;
    for (std::size_t j = 0; j < d_.k; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < d_.k; ++j) row[j] -= lse;
  }
}

void ExampleRunner::backward(const ExampleCache& c, const double* dlog_probs, double* dx,
                             ParameterSet* grads) const {
  const std::size_t C = cfg_.cnn_channels, Fo = d_.f_out, To = c.t_out, K = d_.k, H = d_.h;

  // log-softmax
  std::vector<double> dlogits(To * K);
  for (std::size_t t = 0; t < To; ++t) {
    const double* gy = dlog_probs + t * K;
    const double* lp = c.log_probs.data() + t * K;
    double sum = 0.0;
    for (std::size_t j = 0; j < K; ++j) sum += gy[j];
    for (std::size_t j = 0; j < K; ++j) dlogits[t * K + j] = gy[j] - std::exp(lp[j]) * sum;
  }

  // fc2
  std::vector<double> dact1(To * H);
  kernels::gemm_nn(To, H, K, dlogits.data(), p(slots_.fc2_w), dact1.data(), false);
  if (grads) {
    kernels::gemm_tn(K, H, To, dlogits.data(), c.fc1_act.data(), g(grads, slots_.fc2_w), true);
    double* gb = g(grads, slots_.fc2_b);
    for (std::size_t t = 0; t < To; ++t) {
      for (std::size_t j = 0; j < K; ++j) gb[j] += dlogits[t * K + j];
    }
  }
  gelu_dropout_backward(c.fc1_pre, c.fc1_mask, dact1);

  // fc1
  std::vector<double> dseq(To * 2 * H);
  kernels::gemm_nn(To, 2 * H, H, dact1.data(), p(slots_.fc1_w), dseq.data(), false);
  if (grads) {
    kernels::gemm_tn(H, 2 * H, To, dact1.data(), c.rnn_final.data(), g(grads, slots_.fc1_w), true);
    double* gb = g(grads, slots_.fc1_b);
    for (std::size_t t = 0; t < To; ++t) {
      for (std::size_t j = 0; j < H; ++j) gb[j] += dact1[t * H + j];
    }
  }

  // recurrent stack
  for (std::size_t l = cfg_.n_birnn_layers; l-- > 0;) {
    const RnnSlots& s = slots_.rnns[l];
    const RnnCache& rc = c.rnns[l];
    const std::size_t din = l == 0 ? cfg_.rnn_dim : 2 * H;
    dropout_backward(rc.mask_out, dseq);
    std::vector<double> dact(To * din, 0.0);
    gru_backward(rc.act, To, din, s.dir[0], false, rc.dir[0], rc.out, dseq, 0, dact, grads);
    gru_backward(rc.act, To, din, s.dir[1], true, rc.dir[1], rc.out, dseq, H, dact, grads);
    gelu_dropout_backward(rc.ln_out, rc.mask_act, dact);
    std::vector<double> din_grad(To * din);
    layer_norm_backward(dact.data(), rc.ln_xhat.data(), rc.ln_rstd.data(), To, din, p(s.ln_g),
                        din_grad.data(), g(grads, s.ln_g), g(grads, s.ln_b));
    dseq.swap(din_grad);
  }

  // projection
  std::vector<double> dflat(To * C * Fo);
  kernels::gemm_nn(To, C * Fo, cfg_.rnn_dim, dseq.data(), p(slots_.proj_w), dflat.data(), false);
  if (grads) {
    kernels::gemm_tn(cfg_.rnn_dim, C * Fo, To, dseq.data(), c.flat.data(), g(grads, slots_.proj_w), true);
    double* gb = g(grads, slots_.proj_b);
    for (std::size_t t = 0; t < To; ++t) {
      for (std::size_t j = 0; j < cfg_.rnn_dim; ++j) gb[j] += dseq[t * cfg_.rnn_dim + j];
    }
  }
  std::vector<double> da(C * To * Fo);
  for (std::size_t ch = 0; ch < C; ++ch) {
    for (std::size_t t = 0; t < To; ++t) {
      for (std::size_t f = 0; f < Fo; ++f) da[(ch * To + t) * Fo + f] = dflat[t * C * Fo + ch * Fo + f];
    }
  }

  // residual blocks
  const auto bshape = block_shape(To);
  const std::size_t rows = C * To;
  std::vector<double> tmp(da.size()), tmp2(da.size());
  for (std::size_t b = cfg_.n_rescnn_blocks; b-- > 0;) {
    const BlockSlots& s = slots_.blocks[b];
    const BlockCache& bc = c.blocks[b];
    // conv2 (input act2), upstream grad is da (residual passes da through).
    kernels::conv2d_backward_input(bshape, da.data(), p(s.c2_w), tmp.data());
    if (grads) kernels::conv2d_backward_params(bshape, bc.act2.data(), da.data(), g(grads, s.c2_w), g(grads, s.c2_b));
    gelu_dropout_backward(bc.ln2_out, bc.mask2, tmp);
    layer_norm_backward(tmp.data(), bc.ln2_xhat.data(), bc.ln2_rstd.data(), rows, Fo, p(s.ln2_g),
                        tmp2.data(), g(grads, s.ln2_g), g(grads, s.ln2_b));
    kernels::conv2d_backward_input(bshape, tmp2.data(), p(s.c1_w), tmp.data());
    if (grads) kernels::conv2d_backward_params(bshape, bc.act1.data(), tmp2.data(), g(grads, s.c1_w), g(grads, s.c1_b));
    gelu_dropout_backward(bc.ln1_out, bc.mask1, tmp);
    layer_norm_backward(tmp.data(), bc.ln1_xhat.data(), bc.ln1_rstd.data(), rows, Fo, p(s.ln1_g),
                        tmp2.data(), g(grads, s.ln1_g), g(grads, s.ln1_b));
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += tmp2[i];
  }

  // front-end
  const auto fs = front_shape(c.t_in);
  if (grads) {
    kernels::conv2d_backward_params(fs, c.x0.data(), da.data(), g(grads, slots_.conv_w),
                                    g(grads, slots_.conv_b));
  }
  if (dx) kernels::conv2d_backward_input(fs, da.data(), p(slots_.conv_w), dx);
}

void check_shapes(const ModelConfig& cfg, const ParameterSet& params) {
  const ParameterSet expected = build_layout(cfg, nullptr);
  if (params.size() != expected.size()) {
    throw std::invalid_argument("model: expected " + std::to_string(expected.size()) +
                                " parameter tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params[i].name != expected[i].name) {
      throw std::invalid_argument("model: parameter " + std::to_string(i) + " is '" + params[i].name +
                                  "', expected '" + expected[i].name + "'");
    }
    if (!params[i].value.same_shape(expected[i].value)) {
      throw std::invalid_argument("model: layer '" + params[i].name + "' has shape " +
                                  params[i].value.shape_string() + ", config requires " +
                                  expected[i].value.shape_string());
    }
  }
}

const Slots& slots_for(const ModelConfig& cfg) {
  // Slots depend only on the config; recomputing is cheap but happens on
  // every call, so cache the last one per thread.
  thread_local ModelConfig cached_cfg{};
  thread_local Slots cached{};
  thread_local bool valid = false;
  if (!valid || !(cached_cfg == cfg)) {
    build_layout(cfg, &cached);
    cached_cfg = cfg;
    valid = true;
  }
  return cached;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

ParameterSet Model::layout(const ModelConfig& config) { return build_layout(config, nullptr); }

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  params_ = build_layout(config_, nullptr);
  Rng rng(mix_seed(seed, 0x1417));
  for (auto& prm : params_) {
    const auto& name = prm.name;
    auto& v = prm.value;
    const bool is_gamma = name.ends_with(".gamma");
    const bool is_beta = name.ends_with(".beta");
    if (is_gamma) {
      v.fill(1.0);
      continue;
    }
    if (is_beta) continue;
    double fan_in;
    if (name.find("birnn") != std::string::npos) {
      fan_in = static_cast<double>(config_.rnn_hidden);
    } else if (name.ends_with(".bias")) {
      // Bias bound follows the fan-in of the matching weight.
      const std::string wname = name.substr(0, name.size() - 5) + ".weight";
      const Parameter* w = params_.find(wname);
      fan_in = static_cast<double>(w->value.size() / w->value.dim(0));
    } else {
      fan_in = static_cast<double>(v.size() / v.dim(0));
    }
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& x : v.values()) x = u(rng);
  }
}

Model::Model(ModelConfig config, ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  check_shapes(config_, params_);
}

Model::Model(const Model& other)
    : config_(other.config_), params_(other.params_), gradient_queries_(other.gradient_queries()) {}

Model& Model::operator=(const Model& other) {
  config_ = other.config_;
  params_ = other.params_;
  gradient_queries_ = other.gradient_queries();
  return *this;
}

ModelOutput Model::forward(const FeatureBatch& batch, Mode mode, std::uint64_t dropout_seed) const {
  return forward(batch.features, batch.feature_lengths, mode, dropout_seed);
}

namespace {

void check_input(const ModelConfig& cfg, const Tensor& features, std::span<const std::size_t> lengths) {
  if (features.rank() != 3) {
    throw std::invalid_argument("model: features must be [batch, mel_bins, frames], got " +
                                features.shape_string());
  }
  if (features.dim(1) != cfg.n_feats) {
    throw std::invalid_argument("model: layer 'conv_in' expects " + std::to_string(cfg.n_feats) +
                                " mel bins, got " + std::to_string(features.dim(1)));
  }
  if (lengths.size() != features.dim(0)) {
    throw std::invalid_argument("model: lengths vector size does not match batch size");
  }
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] == 0 || lengths[i] > features.dim(2)) {
      throw std::invalid_argument("model: feature length " + std::to_string(lengths[i]) +
                                  " of example " + std::to_string(i) + " outside [1, " +
                                  std::to_string(features.dim(2)) + "]");
    }
  }
}

struct BatchRun {
  std::vector<ExampleCache> caches;
  ModelOutput output;
};

BatchRun run_forward(const ModelConfig& cfg, const ParameterSet& params, const Tensor& features,
                     std::span<const std::size_t> lengths, Mode mode, std::uint64_t dropout_seed) {
  check_input(cfg, features, lengths);
  const std::size_t B = lengths.size(), T = features.dim(2), F = features.dim(1);
  BatchRun run;
  run.caches.resize(B);
  parallel_for(B, [&](std::size_t i) {
    const Slots& slots = slots_for(cfg);
    ExampleRunner runner(cfg, params, slots);
    Rng rng(mix_seed(dropout_seed, 0xd0, i));
    runner.forward(features.data() + i * F * T, T, lengths[i],
                   mode == Mode::train ? &rng : nullptr, run.caches[i]);
  });
  std::size_t max_out = 0;
  for (const auto& c : run.caches) max_out = std::max(max_out, c.t_out);
  run.output.log_probs = Tensor({B, max_out, cfg.n_classes});
  for (std::size_t i = 0; i < B; ++i) {
    const auto& c = run.caches[i];
    std::copy(c.log_probs.begin(), c.log_probs.end(),
              run.output.log_probs.data() + i * max_out * cfg.n_classes);
    run.output.out_lengths.push_back(c.t_out);
  }
  return run;
}

}  // namespace

ModelOutput Model::forward(const Tensor& features, std::span<const std::size_t> lengths, Mode mode,
                           std::uint64_t dropout_seed) const {
  return run_forward(config_, params_, features, lengths, mode, dropout_seed).output;
}

GradientResult Model::gradients(const Tensor& features, std::span<const std::size_t> lengths,
                                Mode mode, const Objective& objective, GradientRequest request,
                                std::uint64_t dropout_seed) const {
  ++gradient_queries_;
  BatchRun run = run_forward(config_, params_, features, lengths, mode, dropout_seed);
  ObjectiveResult obj = objective(run.output);
  require_same_shape(run.output.log_probs, obj.grad, "objective gradient");

  const std::size_t B = lengths.size(), F = features.dim(1);
  const std::size_t max_out = run.output.log_probs.dim(1), K = config_.n_classes;
  GradientResult result;
  if (request.input) result.input_grad = Tensor(features.shape());
  std::vector<ParameterSet> per_example(request.params ? B : 0);
  parallel_for(B, [&](std::size_t i) {
    const Slots& slots = slots_for(config_);
    ExampleRunner runner(config_, params_, slots);
    const auto& c = run.caches[i];
    std::vector<double> dx(request.input ? c.t_in * F : 0);
    ParameterSet* grads = nullptr;
    if (request.params) {
      per_example[i] = params_.zeros_like();
      grads = &per_example[i];
    }
    runner.backward(c, obj.grad.data() + i * max_out * K, request.input ? dx.data() : nullptr, grads);
    if (request.input) {
      for (std::size_t m = 0; m < F; ++m) {
        for (std::size_t t = 0; t < c.t_in; ++t) result.input_grad(i, m, t) = dx[t * F + m];
      }
    }
  });
  if (request.params) {
    result.param_grad = params_.zeros_like();
    for (const auto& g : per_example) result.param_grad.add_scaled(g, 1.0);
  }
  result.value = obj.value;
  result.output = std::move(run.output);
  return result;
}

// ---------------------------------------------------------------------------
// Decoding

std::string collapse_ctc(std::span<const int> frame_classes, const Alphabet& alphabet) {
  std::string out;
  int prev = -1;
  for (int k : frame_classes) {
    if (k != prev && k != alphabet.blank_index()) out.push_back(alphabet.symbol(k));
    prev = k;
  }
  return out;
}

std::vector<std::string> greedy_decode(const ModelOutput& output, const Alphabet& alphabet) {
  std::vector<std::string> out;
  const std::size_t K = output.n_classes(), Tmax = output.log_probs.dim(1);
  if (K != alphabet.n_classes()) {
    throw std::invalid_argument("greedy_decode: output has " + std::to_string(K) +
                                " classes, alphabet needs " + std::to_string(alphabet.n_classes()));
  }
  for (std::size_t i = 0; i < output.batch_size(); ++i) {
    std::vector<int> best(output.out_lengths[i]);
    for (std::size_t t = 0; t < best.size(); ++t) {
      const double* row = output.log_probs.data() + (i * Tmax + t) * K;
      best[t] = static_cast<int>(std::max_element(row, row + K) - row);
    }
    out.push_back(collapse_ctc(best, alphabet));
  }
  return out;
}

}  // namespace mixpgd
