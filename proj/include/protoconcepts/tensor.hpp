#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace protoconcepts {

/// Dense C x H x W feature map.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, 0.0) {}

  double& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
};

/// A trainable tensor with its accumulated gradient.
struct Param {
  std::vector<double> value;
  std::vector<double> grad;

  explicit Param(size_t n = 0) : value(n, 0.0), grad(n, 0.0) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding);

  /// Kaiming-normal weights, zero bias.
  void init(std::mt19937_64& rng);

  Tensor3 forward(const Tensor3& input) const;
  /// Accumulates weight/bias gradients; returns d loss / d input when requested.
  Tensor3 backward(const Tensor3& input, const Tensor3& grad_output, bool need_input_grad);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_size(int input_size) const { return (input_size + 2 * pad_ - k_) / stride_ + 1; }

  Param weight;
  Param bias;

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  int stride_ = 1;
  int pad_ = 0;
};

void relu_inplace(Tensor3& t);
/// grad *= (activation > 0)
void relu_backward(const Tensor3& activation, Tensor3& grad);
void sigmoid_inplace(Tensor3& t);
/// grad *= s (1 - s) where s is the sigmoid output.
void sigmoid_backward(const Tensor3& output, Tensor3& grad);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace protoconcepts
