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

#pragma once

#include <cstddef>

// Dense compute kernels. Every kernel exists twice: an OpenMP-parallel
// version in `mixpgd::kernels` and a serial version in
// `mixpgd::kernels::reference`. Both compute each output element with the
// same accumulation order, so their results are bit-identical; the serial
// versions are kept for testing and for deterministic mode.

namespace mixpgd::kernels {

/// Routes every parallel kernel to its serial reference when enabled.
/// Initialized from the MIXPGD_DETERMINISTIC environment variable.
void set_deterministic(bool on);
bool deterministic();

/// Number of OpenMP threads the parallel kernels may use.
int max_threads();

struct Conv2dShape {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_h = 0;  // time
  std::size_t in_w = 0;  // frequency
  std::size_t kernel = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;

  std::size_t pad() const { return kernel / 2; }
  std::size_t out_h() const { return in_h == 0 ? 0 : (in_h + 2 * pad() - kernel) / stride_h + 1; }
  std::size_t out_w() const { return in_w == 0 ? 0 : (in_w + 2 * pad() - kernel) / stride_w + 1; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);

// Zero-padded "same"-style 2D convolution over [channels, h, w] buffers.
void conv2d_forward(const Conv2dShape& s, const double* in, const double* weight,
                    const double* bias, double* out);
// din is overwritten.
void conv2d_backward_input(const Conv2dShape& s, const double* dout, const double* weight,
                           double* din);
// dweight and dbias are accumulated into.
void conv2d_backward_params(const Conv2dShape& s, const double* in, const double* dout,
                            double* dweight, double* dbias);

namespace reference {

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void conv2d_forward(const Conv2dShape& s, const double* in, const double* weight,
                    const double* bias, double* out);
void conv2d_backward_input(const Conv2dShape& s, const double* dout, const double* weight,
                           double* din);
void conv2d_backward_params(const Conv2dShape& s, const double* in, const double* dout,
                            double* dweight, double* dbias);

}  // namespace reference
}  // namespace mixpgd::kernels
