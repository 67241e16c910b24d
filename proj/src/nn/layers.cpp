#include "popmap/nn/layers.hpp"

#include "popmap/error.hpp"
#include "popmap/nn/blas.hpp"
#include "direct_conv.hpp"

#include <algorithm>
#include <cstring>

namespace popmap::nn {
namespace {

// Unfolds a C x H x W plane stack into (C*9) x (H*W) rows for a 3x3, pad-1 kernel.
template <typename T>
void im2col3x3(const T* in, int channels, int h, int w, T* col) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* src_plane = in + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < h; ++y) {
          T* row = dst + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* src = src_plane + static_cast<std::size_t>(sy) * w;
          if (kx == 0) {
            row[0] = T(0);
            std::memcpy(row + 1, src, sizeof(T) * (w - 1));
          } else if (kx == 1) {
            std::memcpy(row, src, sizeof(T) * w);
          } else {
            std::memcpy(row, src + 1, sizeof(T) * (w - 1));
            row[w - 1] = T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col3x3: accumulates columns back into a zeroed plane stack.
template <typename T>
void col2im3x3(const T* col, int channels, int h, int w, T* out) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* dst_plane = out + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= h)
            continue;
          const T* row = src + static_cast<std::size_t>(y) * w;
          T* dst = dst_plane + static_cast<std::size_t>(sy) * w;
          if (kx == 0) {
            for (int x = 1; x < w; ++x)
              dst[x - 1] += row[x];
          } else if (kx == 1) {
            for (int x = 0; x < w; ++x)
              dst[x] += row[x];
          } else {
            for (int x = 0; x + 1 < w; ++x)
              dst[x + 1] += row[x];
          }
        }
      }
    }
  }
}

template <typename T>
Param<T> make_param(std::string name, std::vector<int> dims, bool decay) {
  std::size_t count = 1;
  for (int d : dims)
    count *= static_cast<std::size_t>(d);
  Param<T> p;
  p.name = std::move(name);
  p.dims = std::move(dims);
  p.value.assign(count, T(0));
  p.grad.assign(count, T(0));
  p.decay = decay;
  return p;
}

} // namespace

// ---- Conv2d -------------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel, bool relu)
    : name_(std::move(name)), in_channels_(in_channels), out_channels_(out_channels),
      kernel_(kernel), relu_(relu) {
  if (kernel != 1 && kernel != 3)
    fail(ErrorCode::Spec, "Conv2d " + name_ + ": only 1x1 and 3x3 kernels are supported");
  if (in_channels <= 0 || out_channels <= 0)
    fail(ErrorCode::Spec, "Conv2d " + name_ + ": channel counts must be positive");
  weights_ = make_param<T>(name_ + "/weights", {out_channels, in_channels, kernel, kernel}, true);
  biases_ = make_param<T>(name_ + "/biases", {out_channels}, false);
  // Thin layers starve the GEMM; below this size the direct kernel wins.
  direct_ = kernel == 3 && in_channels * out_channels <= 1024;
}

template <typename T>
void Conv2d<T>::forward(const Tensor<T>& in, Tensor<T>& out, RunContext&) {
  if (in.c != in_channels_)
    fail(ErrorCode::ShapeMismatch, name_ + ": expected " + std::to_string(in_channels_) +
                                       " input channels, got " + std::to_string(in.c));
  out.reshape_like(in.n, out_channels_, in.h, in.w);
  if (direct_) {
    const int stride = direct::padded_stride(in.w);
    pad_.resize(static_cast<std::size_t>(in_channels_) * (in.h + 2) * stride);
    for (int i = 0; i < in.n; ++i) {
      direct::pad_planes(in.sample(i), in_channels_, in.h, in.w, stride, pad_.data());
      direct::conv(pad_.data(), in_channels_, in.h, in.w, stride, weights_.value.data(),
                   out_channels_, biases_.value.data(), relu_, out.sample(i));
    }
    return;
  }
  const int hw = in.h * in.w;
  const int k = in_channels_ * kernel_ * kernel_;
  if (kernel_ == 3)
    col_.resize(static_cast<std::size_t>(k) * hw);
  for (int i = 0; i < in.n; ++i) {
    const T* cols = in.sample(i);
    if (kernel_ == 3) {
      im2col3x3(in.sample(i), in_channels_, in.h, in.w, col_.data());
      cols = col_.data();
    }
    T* y = out.sample(i);
    gemm(false, false, out_channels_, hw, k, T(1), weights_.value.data(), k, cols, hw, T(0), y, hw);
    for (int o = 0; o < out_channels_; ++o) {
      T* row = y + static_cast<std::size_t>(o) * hw;
      const T b = biases_.value[o];
      if (relu_) {
        for (int j = 0; j < hw; ++j)
          row[j] = std::max(row[j] + b, T(0));
      } else {
        for (int j = 0; j < hw; ++j)
          row[j] += b;
      }
    }
  }
}

template <typename T>
void Conv2d<T>::backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                         Tensor<T>* din) {
  if (direct_) {
    backward_direct(in, out, dout, din);
    return;
  }
  const int hw = in.h * in.w;
  const int k = in_channels_ * kernel_ * kernel_;
  dz_.resize(static_cast<std::size_t>(out_channels_) * hw);
  if (kernel_ == 3)
    col_.resize(static_cast<std::size_t>(k) * hw);
  if (din)
    din->resize(in.n, in.c, in.h, in.w);
  for (int i = 0; i < in.n; ++i) {
    const T* dy = dout.sample(i);
    const T* y = out.sample(i);
    for (std::size_t j = 0; j < dz_.size(); ++j)
      dz_[j] = (!relu_ || y[j] > T(0)) ? dy[j] : T(0);
    for (int o = 0; o < out_channels_; ++o) {
      const T* row = dz_.data() + static_cast<std::size_t>(o) * hw;
      T acc = 0;
      for (int j = 0; j < hw; ++j)
        acc += row[j];
      biases_.grad[o] += acc;
    }
    const T* cols = in.sample(i);
    if (kernel_ == 3) {
      im2col3x3(in.sample(i), in_channels_, in.h, in.w, col_.data());
      cols = col_.data();
    }
    gemm(false, true, out_channels_, k, hw, T(1), dz_.data(), hw, cols, hw, T(1),
         weights_.grad.data(), k);
    if (din) {
      if (kernel_ == 1) {
        gemm(true, false, k, hw, out_channels_, T(1), weights_.value.data(), k, dz_.data(), hw,
             T(0), din->sample(i), hw);
      } else {
        gemm(true, false, k, hw, out_channels_, T(1), weights_.value.data(), k, dz_.data(), hw,
             T(0), col_.data(), hw);
        col2im3x3(col_.data(), in_channels_, in.h, in.w, din->sample(i));
      }
    }
  }
}

template <typename T>
void Conv2d<T>::backward_direct(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                                Tensor<T>* din) {
  const int h = in.h;
  const int w = in.w;
  const int stride = direct::padded_stride(w);
  const std::size_t plane = static_cast<std::size_t>(h + 2) * stride;
  pad_.resize(plane * in_channels_);
  dz_.assign(plane * out_channels_, T(0));
  if (din) {
    din->resize(in.n, in.c, h, w);
    // Input gradient is a 3x3 convolution with the kernel transposed and rotated.
    flipped_.resize(weights_.value.size());
    for (int o = 0; o < out_channels_; ++o)
      for (int c = 0; c < in_channels_; ++c)
        for (int k = 0; k < 9; ++k)
          flipped_[(static_cast<std::size_t>(c) * out_channels_ + o) * 9 + (8 - k)] =
              weights_.value[(static_cast<std::size_t>(o) * in_channels_ + c) * 9 + k];
  }
  for (int i = 0; i < in.n; ++i) {
    const T* dy = dout.sample(i);
    const T* y = out.sample(i);
    for (int o = 0; o < out_channels_; ++o) {
      T acc = 0;
      for (int r = 0; r < h; ++r) {
        const std::size_t src = (static_cast<std::size_t>(o) * h + r) * w;
        T* dst = dz_.data() + o * plane + static_cast<std::size_t>(r + 1) * stride + 1;
        for (int x = 0; x < w; ++x) {
          const T g = (!relu_ || y[src + x] > T(0)) ? dy[src + x] : T(0);
          dst[x] = g;
          acc += g;
        }
      }
      biases_.grad[o] += acc;
    }
    direct::pad_planes(in.sample(i), in_channels_, h, w, stride, pad_.data());
    direct::weight_grad(pad_.data(), in_channels_, h, w, stride, dz_.data(), out_channels_,
                        weights_.grad.data());
    if (din)
      direct::conv(dz_.data(), out_channels_, h, w, stride, flipped_.data(), in_channels_,
                   static_cast<const T*>(nullptr), false, din->sample(i));
  }
}

// ---- MaxPool2 -----------------------------------------------------------------------------

template <typename T>
void MaxPool2<T>::forward(const Tensor<T>& in, Tensor<T>& out, RunContext&) {
  const int oh = in.h / 2;
  const int ow = in.w / 2;
  out.reshape_like(in.n, in.c, oh, ow);
  for (int i = 0; i < in.n; ++i) {
    for (int c = 0; c < in.c; ++c) {
      const T* src = in.sample(i) + static_cast<std::size_t>(c) * in.plane();
      T* dst = out.sample(i) + static_cast<std::size_t>(c) * out.plane();
      for (int y = 0; y < oh; ++y) {
        const T* r0 = src + static_cast<std::size_t>(2 * y) * in.w;
        const T* r1 = r0 + in.w;
        for (int x = 0; x < ow; ++x)
          dst[y * ow + x] = std::max(std::max(r0[2 * x], r0[2 * x + 1]),
                                     std::max(r1[2 * x], r1[2 * x + 1]));
      }
    }
  }
}

template <typename T>
void MaxPool2<T>::backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                           Tensor<T>* din) {
  if (!din)
    return;
  din->resize(in.n, in.c, in.h, in.w);
  const int oh = out.h;
  const int ow = out.w;
  for (int i = 0; i < in.n; ++i) {
    for (int c = 0; c < in.c; ++c) {
      const std::size_t ioff = static_cast<std::size_t>(c) * in.plane();
      const std::size_t ooff = static_cast<std::size_t>(c) * out.plane();
      const T* src = in.sample(i) + ioff;
      T* dsrc = din->sample(i) + ioff;
      const T* y = out.sample(i) + ooff;
      const T* dy = dout.sample(i) + ooff;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const T m = y[oy * ow + ox];
          // First maximal element in row-major window order receives the gradient.
          const std::size_t cand[4] = {
              static_cast<std::size_t>(2 * oy) * in.w + 2 * ox,
              static_cast<std::size_t>(2 * oy) * in.w + 2 * ox + 1,
              static_cast<std::size_t>(2 * oy + 1) * in.w + 2 * ox,
              static_cast<std::size_t>(2 * oy + 1) * in.w + 2 * ox + 1};
          for (std::size_t idx : cand) {
            if (src[idx] == m) {
              dsrc[idx] += dy[oy * ow + ox];
              break;
            }
          }
        }
      }
    }
  }
}

// ---- Linear -------------------------------------------------------------------------------

template <typename T>
Linear<T>::Linear(std::string name, int in_features, int out_features, bool relu)
    : name_(std::move(name)), in_features_(in_features), out_features_(out_features),
      relu_(relu) {
  if (in_features <= 0 || out_features <= 0)
    fail(ErrorCode::Spec, "Linear " + name_ + ": feature counts must be positive");
  weights_ = make_param<T>(name_ + "/weights", {out_features, in_features}, true);
  biases_ = make_param<T>(name_ + "/biases", {out_features}, false);
}

template <typename T>
void Linear<T>::forward(const Tensor<T>& in, Tensor<T>& out, RunContext&) {
  if (static_cast<int>(in.sample_size()) != in_features_)
    fail(ErrorCode::ShapeMismatch, name_ + ": expected " + std::to_string(in_features_) +
                                       " input features, got " +
                                       std::to_string(in.sample_size()));
  out.reshape_like(in.n, out_features_, 1, 1);
  for (int i = 0; i < in.n; ++i)
    std::copy(biases_.value.begin(), biases_.value.end(), out.sample(i));
  gemm(false, true, in.n, out_features_, in_features_, T(1), in.data.data(), in_features_,
       weights_.value.data(), in_features_, T(1), out.data.data(), out_features_);
  if (relu_)
    for (auto& v : out.data)
      v = std::max(v, T(0));
}

template <typename T>
void Linear<T>::backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                         Tensor<T>* din) {
  dz_.resize(dout.size());
  for (std::size_t j = 0; j < dz_.size(); ++j)
    dz_[j] = (!relu_ || out.data[j] > T(0)) ? dout.data[j] : T(0);
  for (int i = 0; i < in.n; ++i)
    for (int o = 0; o < out_features_; ++o)
      biases_.grad[o] += dz_[static_cast<std::size_t>(i) * out_features_ + o];
  gemm(true, false, out_features_, in_features_, in.n, T(1), dz_.data(), out_features_,
       in.data.data(), in_features_, T(1), weights_.grad.data(), in_features_);
  if (din) {
    din->reshape_like(in.n, in.c, in.h, in.w);
    gemm(false, false, in.n, in_features_, out_features_, T(1), dz_.data(), out_features_,
         weights_.value.data(), in_features_, T(0), din->data.data(), in_features_);
  }
}

// ---- Dropout ------------------------------------------------------------------------------

template <typename T>
void Dropout<T>::forward(const Tensor<T>& in, Tensor<T>& out, RunContext& ctx) {
  out.reshape_like(in.n, in.c, in.h, in.w);
  if (!ctx.train || keep_ >= 1.0) {
    mask_.clear();
    std::copy(in.data.begin(), in.data.end(), out.data.begin());
    return;
  }
  if (!ctx.rng)
    fail(ErrorCode::Internal, "dropout in training mode needs an rng");
  const T scale = T(1) / static_cast<T>(keep_);
  mask_.resize(in.size());
  for (std::size_t j = 0; j < in.size(); ++j) {
    mask_[j] = bernoulli(*ctx.rng, keep_) ? scale : T(0);
    out.data[j] = in.data[j] * mask_[j];
  }
}

template <typename T>
void Dropout<T>::backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& dout,
                          Tensor<T>* din) {
  if (!din)
    return;
  din->reshape_like(in.n, in.c, in.h, in.w);
  if (mask_.empty()) {
    std::copy(dout.data.begin(), dout.data.end(), din->data.begin());
    return;
  }
  for (std::size_t j = 0; j < dout.size(); ++j)
    din->data[j] = dout.data[j] * mask_[j];
}

// ---- Sequential ---------------------------------------------------------------------------

template <typename T>
Shape Sequential<T>::output_shape(Shape in) const {
  for (const auto& layer : layers_)
    in = layer->output_shape(in);
  return in;
}

template <typename T>
const Tensor<T>& Sequential<T>::forward(const Tensor<T>& in, RunContext& ctx) {
  input_ = &in;
  acts_.resize(layers_.size());
  const Tensor<T>* cur = &in;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->forward(*cur, acts_[i], ctx);
    cur = &acts_[i];
  }
  return *cur;
}

template <typename T>
void Sequential<T>::backward(const Tensor<T>& dout, Tensor<T>* din) {
  if (!input_ || acts_.size() != layers_.size())
    fail(ErrorCode::Internal, "Sequential::backward without a matching forward pass");
  grads_.resize(layers_.size());
  const Tensor<T>* upstream = &dout;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const Tensor<T>& in = idx == 0 ? *input_ : acts_[idx - 1];
    Tensor<T>* target = idx == 0 ? din : &grads_[idx - 1];
    layers_[idx]->backward(in, acts_[idx], *upstream, target);
    upstream = target;
  }
}

template <typename T>
std::vector<Param<T>*> Sequential<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& layer : layers_)
    for (auto* p : layer->params())
      out.push_back(p);
  return out;
}

template <typename T>
void Sequential<T>::clear_activations() {
  acts_.clear();
  grads_.clear();
  input_ = nullptr;
}

template class Conv2d<float>;
template class Conv2d<double>;
template class MaxPool2<float>;
template class MaxPool2<double>;
template class Linear<float>;
template class Linear<double>;
template class Dropout<float>;
template class Dropout<double>;
template class Sequential<float>;
template class Sequential<double>;

} // namespace popmap::nn
