// Copyright 2026 The Rollback Authors
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

// Dense row-major kernels used by the autodiff ops. All loops run in a fixed
// order so results are bit-reproducible on a given build.

#include <cstddef>
#include <cstring>
#include <vector>

namespace rollback::kernels {

namespace detail {

inline constexpr std::size_t kRows = 4;
inline constexpr std::size_t kCols = 16;
inline constexpr std::size_t kDepth = 256;

// C[m x n] += A * B[k x n], with A(i, p) read at a[i * rs + p * ps]. Each
// 4x16 block of C is accumulated in registers over a 256-deep slice of k,
// then added to C.
template <typename T>
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  std::size_t rs, std::size_t ps, const T* b, T* c) {
  const std::size_t m4 = m - m % kRows;
  const std::size_t n16 = n - n % kCols;
  for (std::size_t p0 = 0; p0 < k; p0 += kDepth) {
    const std::size_t kc = p0 + kDepth < k ? kDepth : k - p0;
    for (std::size_t i = 0; i < m4; i += kRows) {
      for (std::size_t j = 0; j < n16; j += kCols) {
        typedef T V __attribute__((vector_size(kCols * sizeof(T))));
        V acc0{}, acc1{}, acc2{}, acc3{};
        const T* ap = a + i * rs + p0 * ps;
        const T* bp = b + p0 * n + j;
        for (std::size_t p = 0; p < kc; ++p, ap += ps, bp += n) {
          V bv;
          std::memcpy(&bv, bp, sizeof bv);
          acc0 += ap[0] * bv;
          acc1 += ap[rs] * bv;
          acc2 += ap[2 * rs] * bv;
          acc3 += ap[3 * rs] * bv;
        }
        T* c0 = c + i * n + j;
        for (std::size_t u = 0; u < kCols; ++u) {
          c0[u] += acc0[u];
          c0[n + u] += acc1[u];
          c0[2 * n + u] += acc2[u];
          c0[3 * n + u] += acc3[u];
        }
      }
    }
  }
  // Ragged right columns, then ragged bottom rows.
  if (n16 < n) {
    for (std::size_t i = 0; i < m4; ++i) {
      for (std::size_t j = n16; j < n; ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += a[i * rs + p * ps] * b[p * n + j];
        c[i * n + j] += acc;
      }
    }
  }
  for (std::size_t i = m4; i < m; ++i) {
    T* __restrict crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * rs + p * ps];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  detail::gemm_strided(m, n, k, a, k, 1, b, c);
}

// C[m x n] += A^T * B, where A is stored [k x m] and B is [k x n].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  detail::gemm_strided(m, n, k, a, 1, m, b, c);
}

// C[m x n] += A * B^T, where A is [m x k] and B is stored [n x k]. B is
// transposed into a zero-padded scratch buffer whose width is a multiple of
// the register block, so every column goes through the blocked path.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  const std::size_t np = (n + detail::kCols - 1) / detail::kCols * detail::kCols;
  std::vector<T> bt(k * np, T(0));
  for (std::size_t p0 = 0; p0 < k; p0 += 64) {
    const std::size_t p1 = p0 + 64 < k ? p0 + 64 : k;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = p0; p < p1; ++p) bt[p * np + j] = b[j * k + p];
  }
  std::vector<T> ct(m * np, T(0));
  detail::gemm_strided(m, np, k, a, k, 1, bt.data(), ct.data());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += ct[i * np + j];
}

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw, stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_pixels() const { return out_h * out_w; }
  std::size_t columns() const { return batch * out_pixels(); }
};

// cols[(c,ki,kj) x (n,oh,ow)] gathered from x[n,c,h,w] with zero padding.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t ncols = g.columns();
  const std::size_t opix = g.out_pixels();
  const std::size_t img = g.channels * g.height * g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* plane = x + n * img + c * g.height * g.width;
          T* dst = row + n * opix;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                            static_cast<std::ptrdiff_t>(g.pad);
            T* drow = dst + oh * g.out_w;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
              for (std::size_t ow = 0; ow < g.out_w; ++ow) drow[ow] = T{0};
              continue;
            }
            const T* srow = plane + static_cast<std::size_t>(ih) * g.width;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                              static_cast<std::ptrdiff_t>(g.pad);
              drow[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width))
                             ? T{0}
                             : srow[iw];
            }
          }
        }
      }
    }
  }
}

// Scatter-add of im2col columns back into dx[n,c,h,w].
template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t ncols = g.columns();
  const std::size_t opix = g.out_pixels();
  const std::size_t img = g.channels * g.height * g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          T* plane = dx + n * img + c * g.height * g.width;
          const T* src = row + n * opix;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
            T* drow = plane + static_cast<std::size_t>(ih) * g.width;
            const T* srow = src + oh * g.out_w;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                              static_cast<std::ptrdiff_t>(g.pad);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.width)) continue;
              drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace rollback::kernels
