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

#include "mixpgd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mixpgd::kernels {
namespace {

bool env_deterministic() {
  const char* v = std::getenv("MIXPGD_DETERMINISTIC");
  return v != nullptr && std::strcmp(v, "0") != 0 && *v != '\0';
}

std::atomic<bool> g_deterministic{env_deterministic()};

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 15;

// One output row of each kernel. The serial and parallel drivers share these
// so both produce identical bits.

inline void gemm_nt_row(std::size_t i, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c, bool accumulate) {
  const double* ai = a + i * k;
  double* ci = c + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
    ci[j] = accumulate ? ci[j] + s : s;
  }
}

inline void gemm_nn_row(std::size_t i, std::size_t n, std::size_t k, const double* a,
                        const double* b, double* c, bool accumulate) {
  const double* ai = a + i * k;
  double* ci = c + i * n;
  if (!accumulate) std::memset(ci, 0, n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ai[p];
    if (av == 0.0) continue;
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

inline void gemm_tn_row(std::size_t i, std::size_t m, std::size_t n, std::size_t k,
                        const double* a, const double* b, double* c, bool accumulate) {
  double* ci = c + i * n;
  if (!accumulate) std::memset(ci, 0, n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    if (av == 0.0) continue;
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

inline void conv_forward_channel(const Conv2dShape& s, std::size_t co, const double* in,
                                 const double* weight, const double* bias, double* out) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w(), k = s.kernel, pad = s.pad();
  const long ih_n = static_cast<long>(s.in_h), iw_n = static_cast<long>(s.in_w);
  double* o = out + co * oh_n * ow_n;
  for (std::size_t oh = 0; oh < oh_n; ++oh) {
    for (std::size_t ow = 0; ow < ow_n; ++ow) {
      double acc = bias ? bias[co] : 0.0;
      for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
        const double* w = weight + (co * s.in_channels + ci) * k * k;
        const double* x = in + ci * s.in_h * s.in_w;
        for (std::size_t kh = 0; kh < k; ++kh) {
          const long ih = static_cast<long>(oh * s.stride_h + kh) - static_cast<long>(pad);
          if (ih < 0 || ih >= ih_n) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const long iw = static_cast<long>(ow * s.stride_w + kw) - static_cast<long>(pad);
            if (iw < 0 || iw >= iw_n) continue;
            acc += w[kh * k + kw] * x[ih * iw_n + iw];
          }
        }
      }
      o[oh * ow_n + ow] = acc;
    }
  }
}

inline void conv_backward_input_channel(const Conv2dShape& s, std::size_t ci, const double* dout,
                                        const double* weight, double* din) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w(), k = s.kernel, pad = s.pad();
  const long ih_n = static_cast<long>(s.in_h), iw_n = static_cast<long>(s.in_w);
  double* dx = din + ci * s.in_h * s.in_w;
  std::memset(dx, 0, s.in_h * s.in_w * sizeof(double));
  for (std::size_t co = 0; co < s.out_channels; ++co) {
    const double* w = weight + (co * s.in_channels + ci) * k * k;
    const double* g = dout + co * oh_n * ow_n;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        const double gv = g[oh * ow_n + ow];
        if (gv == 0.0) continue;
        for (std::size_t kh = 0; kh < k; ++kh) {
          const long ih = static_cast<long>(oh * s.stride_h + kh) - static_cast<long>(pad);
          if (ih < 0 || ih >= ih_n) continue;
          for (std::size_t kw = 0; kw < k; ++kw) {
            const long iw = static_cast<long>(ow * s.stride_w + kw) - static_cast<long>(pad);
            if (iw < 0 || iw >= iw_n) continue;
            dx[ih * iw_n + iw] += w[kh * k + kw] * gv;
          }
        }
      }
    }
  }
}

inline void conv_backward_params_channel(const Conv2dShape& s, std::size_t co, const double* in,
                                         const double* dout, double* dweight, double* dbias) {
  const std::size_t oh_n = s.out_h(), ow_n = s.out_w(), k = s.kernel, pad = s.pad();
  const long ih_n = static_cast<long>(s.in_h), iw_n = static_cast<long>(s.in_w);
  const double* g = dout + co * oh_n * ow_n;
  if (dbias) {
    double sb = 0.0;
    for (std::size_t i = 0; i < oh_n * ow_n; ++i) sb += g[i];
    dbias[co] += sb;
  }
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    const double* x = in + ci * s.in_h * s.in_w;
    double* dw = dweight + (co * s.in_channels + ci) * k * k;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        double acc = 0.0;
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const long ih = static_cast<long>(oh * s.stride_h + kh) - static_cast<long>(pad);
          if (ih < 0 || ih >= ih_n) continue;
          for (std::size_t ow = 0; ow < ow_n; ++ow) {
            const long iw = static_cast<long>(ow * s.stride_w + kw) - static_cast<long>(pad);
            if (iw < 0 || iw >= iw_n) continue;
            acc += g[oh * ow_n + ow] * x[ih * iw_n + iw];
          }
        }
        dw[kh * k + kw] += acc;
      }
    }
  }
}

std::size_t conv_work(const Conv2dShape& s) {
  return s.weight_size() * s.out_h() * s.out_w();
}

}  // namespace

void set_deterministic(bool on) { g_deterministic = on; }
bool deterministic() { return g_deterministic; }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace reference {

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(i, n, k, a, b, c, accumulate);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(i, n, k, a, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_tn_row(i, m, n, k, a, b, c, accumulate);
}

void conv2d_forward(const Conv2dShape& s, const double* in, const double* weight,
                    const double* bias, double* out) {
  for (std::size_t co = 0; co < s.out_channels; ++co)
    conv_forward_channel(s, co, in, weight, bias, out);
}

void conv2d_backward_input(const Conv2dShape& s, const double* dout, const double* weight,
                           double* din) {
  for (std::size_t ci = 0; ci < s.in_channels; ++ci)
    conv_backward_input_channel(s, ci, dout, weight, din);
}

void conv2d_backward_params(const Conv2dShape& s, const double* in, const double* dout,
                            double* dweight, double* dbias) {
  for (std::size_t co = 0; co < s.out_channels; ++co)
    conv_backward_params_channel(s, co, in, dout, dweight, dbias);
}

}  // namespace reference

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (deterministic()) return reference::gemm_nt(m, n, k, a, b, c, accumulate);
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long i = 0; i < rows; ++i) gemm_nt_row(static_cast<std::size_t>(i), n, k, a, b, c, accumulate);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (deterministic()) return reference::gemm_nn(m, n, k, a, b, c, accumulate);
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long i = 0; i < rows; ++i) gemm_nn_row(static_cast<std::size_t>(i), n, k, a, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (deterministic()) return reference::gemm_tn(m, n, k, a, b, c, accumulate);
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k >= kParallelWork)
  for (long i = 0; i < rows; ++i)
    gemm_tn_row(static_cast<std::size_t>(i), m, n, k, a, b, c, accumulate);
}

void conv2d_forward(const Conv2dShape& s, const double* in, const double* weight,
                    const double* bias, double* out) {
  if (deterministic()) return reference::conv2d_forward(s, in, weight, bias, out);
  const long channels = static_cast<long>(s.out_channels);
#pragma omp parallel for schedule(static) if (conv_work(s) >= kParallelWork)
  for (long co = 0; co < channels; ++co)
    conv_forward_channel(s, static_cast<std::size_t>(co), in, weight, bias, out);
}

void conv2d_backward_input(const Conv2dShape& s, const double* dout, const double* weight,
                           double* din) {
  if (deterministic()) return reference::conv2d_backward_input(s, dout, weight, din);
  const long channels = static_cast<long>(s.in_channels);
#pragma omp parallel for schedule(static) if (conv_work(s) >= kParallelWork)
  for (long ci = 0; ci < channels; ++ci)
    conv_backward_input_channel(s, static_cast<std::size_t>(ci), dout, weight, din);
}

void conv2d_backward_params(const Conv2dShape& s, const double* in, const double* dout,
                            double* dweight, double* dbias) {
  if (deterministic()) return reference::conv2d_backward_params(s, in, dout, dweight, dbias);
  const long channels = static_cast<long>(s.out_channels);
#pragma omp parallel for schedule(static) if (conv_work(s) >= kParallelWork)
  for (long co = 0; co < channels; ++co)
    conv_backward_params_channel(s, static_cast<std::size_t>(co), in, dout, dweight, dbias);
}

}  // namespace mixpgd::kernels
