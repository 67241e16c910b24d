#pragma once

// Direct 3x3 convolution kernels for layers with few channels, where im2col + GEMM
// leaves the matrix too thin to run fast. Inputs are zero-padded plane stacks:
// [C][H+2][stride] with the image at row 1, column 1.

#include <algorithm>
#include <cstddef>

namespace popmap::nn::direct {

constexpr int kLanes = 16;

inline int padded_stride(int w) { return (w + kLanes - 1) / kLanes * kLanes + kLanes; }

template <typename T>
void pad_planes(const T* in, int channels, int h, int w, int stride, T* out) {
  const std::size_t plane = static_cast<std::size_t>(h + 2) * stride;
  std::fill(out, out + plane * channels, T(0));
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(in + (static_cast<std::size_t>(c) * h + y) * w, w,
                  out + c * plane + static_cast<std::size_t>(y + 1) * stride + 1);
}

// out[o0..o0+OB) = relu?(bias + w * in); w is [O][C][3][3].
template <typename T, int OB>
void conv_rows(const T* inpad, int channels, int h, int w, int stride, const T* weights, int o0,
               const T* bias, bool relu, T* out) {
  constexpr int L = kLanes;
  const std::size_t plane = static_cast<std::size_t>(h + 2) * stride;
  for (int y = 0; y < h; ++y) {
    for (int x0 = 0; x0 < w; x0 += L) {
      T acc[OB][L];
      for (int ob = 0; ob < OB; ++ob)
        for (int l = 0; l < L; ++l)
          acc[ob][l] = bias ? bias[o0 + ob] : T(0);
      for (int c = 0; c < channels; ++c) {
        const T* __restrict base = inpad + c * plane + static_cast<std::size_t>(y) * stride + x0;
        T wl[9][OB];
        for (int ob = 0; ob < OB; ++ob)
          for (int k = 0; k < 9; ++k)
            wl[k][ob] = weights[(static_cast<std::size_t>(o0 + ob) * channels + c) * 9 + k];
#pragma GCC unroll 3
        for (int ky = 0; ky < 3; ++ky) {
#pragma GCC unroll 3
          for (int kx = 0; kx < 3; ++kx) {
            const T* __restrict s = base + static_cast<std::size_t>(ky) * stride + kx;
#pragma GCC unroll 8
            for (int ob = 0; ob < OB; ++ob) {
              const T wv = wl[ky * 3 + kx][ob];
#pragma omp simd
              for (int l = 0; l < L; ++l)
                acc[ob][l] += wv * s[l];
            }
          }
        }
      }
      const int n = std::min(L, w - x0);
      for (int ob = 0; ob < OB; ++ob) {
        T* dst = out + (static_cast<std::size_t>(o0 + ob) * h + y) * w + x0;
        for (int l = 0; l < n; ++l)
          dst[l] = relu ? std::max(acc[ob][l], T(0)) : acc[ob][l];
      }
    }
  }
}

template <typename T>
void conv(const T* inpad, int channels, int h, int w, int stride, const T* weights,
          int out_channels, const T* bias, bool relu, T* out) {
  int o = 0;
  for (; o + 8 <= out_channels; o += 8)
    conv_rows<T, 8>(inpad, channels, h, w, stride, weights, o, bias, relu, out);
  for (; o + 4 <= out_channels; o += 4)
    conv_rows<T, 4>(inpad, channels, h, w, stride, weights, o, bias, relu, out);
  for (; o < out_channels; ++o)
    conv_rows<T, 1>(inpad, channels, h, w, stride, weights, o, bias, relu, out);
}

// dw[o][c][k] += sum_yx dz[o][y][x] * in[c][y+ky-1][x+kx-1]. Both operands are padded
// stacks with the same stride; dz must be zero outside the image.
template <typename T, int OB>
void weight_grad_rows(const T* inpad, int channels, int h, int w, int stride, const T* dzpad,
                      int o0, T* dw) {
  constexpr int L = kLanes;
  const std::size_t plane = static_cast<std::size_t>(h + 2) * stride;
  for (int c = 0; c < channels; ++c) {
    T acc[OB][9][L] = {};
    for (int y = 0; y < h; ++y) {
      const T* __restrict r0 = inpad + c * plane + static_cast<std::size_t>(y) * stride;
      for (int x0 = 0; x0 < w; x0 += L) {
#pragma GCC unroll 8
        for (int ob = 0; ob < OB; ++ob) {
          const T* __restrict d =
              dzpad + (o0 + ob) * plane + static_cast<std::size_t>(y + 1) * stride + 1 + x0;
#pragma GCC unroll 3
          for (int ky = 0; ky < 3; ++ky)
#pragma GCC unroll 3
            for (int kx = 0; kx < 3; ++kx) {
              const T* __restrict s = r0 + static_cast<std::size_t>(ky) * stride + x0 + kx;
#pragma omp simd
              for (int l = 0; l < L; ++l)
                acc[ob][ky * 3 + kx][l] += d[l] * s[l];
            }
        }
      }
    }
    for (int ob = 0; ob < OB; ++ob)
      for (int k = 0; k < 9; ++k) {
        T s = 0;
        for (int l = 0; l < L; ++l)
          s += acc[ob][k][l];
        dw[(static_cast<std::size_t>(o0 + ob) * channels + c) * 9 + k] += s;
      }
  }
}

template <typename T>
void weight_grad(const T* inpad, int channels, int h, int w, int stride, const T* dzpad,
                 int out_channels, T* dw) {
  int o = 0;
  for (; o + 2 <= out_channels; o += 2)
    weight_grad_rows<T, 2>(inpad, channels, h, w, stride, dzpad, o, dw);
  for (; o < out_channels; ++o)
    weight_grad_rows<T, 1>(inpad, channels, h, w, stride, dzpad, o, dw);
}

} // namespace popmap::nn::direct
