#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

namespace popmap::nn {

// Dense NCHW tensor. Fully-connected activations use h == w == 1.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0)) { resize(n_, c_, h_, w_, fill); }

  void resize(int n_, int c_, int h_, int w_, T fill = T(0)) {
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
  }
  // Reshape without clearing when the element count is unchanged.
  void reshape_like(int n_, int c_, int h_, int w_) {
    const auto count = static_cast<std::size_t>(n_) * c_ * h_ * w_;
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    if (data.size() != count)
      data.resize(count);
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t sample_size() const noexcept { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  T* sample(int i) noexcept { return data.data() + i * sample_size(); }
  const T* sample(int i) const noexcept { return data.data() + i * sample_size(); }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  T& at(int in, int ic, int iy, int ix) {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  T at(int in, int ic, int iy, int ix) const {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
};

struct Shape {
  int c = 0;
  int h = 0;
  int w = 0;
  bool operator==(const Shape&) const = default;
};

template <typename T>
struct Param {
  std::string name;
  std::vector<int> dims;
  std::vector<T> value;
  std::vector<T> grad;
  // Weight decay applies to weights, not biases.
  bool decay = true;

  std::size_t size() const noexcept { return value.size(); }
};

} // namespace popmap::nn
