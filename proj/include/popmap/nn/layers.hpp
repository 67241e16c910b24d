#pragma once

#include "popmap/nn/tensor.hpp"
#include "popmap/rng.hpp"

#include <memory>
#include <string>
#include <vector>

namespace popmap::nn {

struct RunContext {
  bool train = false;
  Rng* rng = nullptr; // required when train is true and the graph has dropout
};

template <typename T>
class Layer {
public:
  virtual ~Layer() = default;

  virtual std::string name() const = 0;
  virtual Shape output_shape(Shape in) const = 0;
  virtual void forward(const Tensor<T>& in, Tensor<T>& out, RunContext& ctx) = 0;
  // `din` is null when the caller does not need the input gradient.
  virtual void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                        Tensor<T>* din) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
};

// 3x3 (padding 1) or 1x1 convolution, stride 1, optional fused ReLU.
template <typename T>
class Conv2d final : public Layer<T> {
public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, bool relu);

  std::string name() const override { return name_; }
  Shape output_shape(Shape in) const override { return {out_channels_, in.h, in.w}; }
  void forward(const Tensor<T>& in, Tensor<T>& out, RunContext& ctx) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                Tensor<T>* din) override;
  std::vector<Param<T>*> params() override { return {&weights_, &biases_}; }

  int in_channels() const noexcept { return in_channels_; }
  int out_channels() const noexcept { return out_channels_; }
  int kernel() const noexcept { return kernel_; }

private:
  void backward_direct(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                       Tensor<T>* din);

  std::string name_;
  int in_channels_;
  int out_channels_;
  int kernel_;
  bool relu_;
  Param<T> weights_; // [out, in, k, k]
  Param<T> biases_;  // [out]
  bool direct_;
  std::vector<T> col_;
  std::vector<T> dz_;
  std::vector<T> pad_;
  std::vector<T> flipped_;
};

template <typename T>
class MaxPool2 final : public Layer<T> {
public:
  explicit MaxPool2(std::string name) : name_(std::move(name)) {}
  std::string name() const override { return name_; }
  Shape output_shape(Shape in) const override { return {in.c, in.h / 2, in.w / 2}; }
  void forward(const Tensor<T>& in, Tensor<T>& out, RunContext& ctx) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                Tensor<T>* din) override;

private:
  std::string name_;
};

// Fully connected over the flattened C*H*W input.
template <typename T>
class Linear final : public Layer<T> {
public:
  Linear(std::string name, int in_features, int out_features, bool relu);

  std::string name() const override { return name_; }
  Shape output_shape(Shape) const override { return {out_features_, 1, 1}; }
  void forward(const Tensor<T>& in, Tensor<T>& out, RunContext& ctx) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                Tensor<T>* din) override;
  std::vector<Param<T>*> params() override { return {&weights_, &biases_}; }

  int in_features() const noexcept { return in_features_; }
  int out_features() const noexcept { return out_features_; }

private:
  std::string name_;
  int in_features_;
  int out_features_;
  bool relu_;
  Param<T> weights_; // [out, in]
  Param<T> biases_;  // [out]
  std::vector<T> dz_;
};

// Inverted dropout; identity outside training.
template <typename T>
class Dropout final : public Layer<T> {
public:
  Dropout(std::string name, double keep_prob) : name_(std::move(name)), keep_(keep_prob) {}
  std::string name() const override { return name_; }
  Shape output_shape(Shape in) const override { return in; }
  void forward(const Tensor<T>& in, Tensor<T>& out, RunContext& ctx) override;
  void backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& dout,
                Tensor<T>* din) override;

private:
  std::string name_;
  double keep_;
  std::vector<T> mask_; // empty when the last forward was not in training mode
};

template <typename T>
class Sequential {
public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Shape output_shape(Shape in) const;
  // The input must stay alive until backward() has run.
  const Tensor<T>& forward(const Tensor<T>& in, RunContext& ctx);
  // Accumulates parameter gradients; writes the input gradient when din is non-null.
  void backward(const Tensor<T>& dout, Tensor<T>* din);

  std::vector<Param<T>*> params();
  const std::vector<std::unique_ptr<Layer<T>>>& layers() const noexcept { return layers_; }
  bool empty() const noexcept { return layers_.empty(); }
  // Releases cached activations.
  void clear_activations();

private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Tensor<T>> acts_;
  std::vector<Tensor<T>> grads_;
  const Tensor<T>* input_ = nullptr;
};

} // namespace popmap::nn
