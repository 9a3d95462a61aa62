#include "protoconcepts/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace protoconcepts {

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding)
    : weight(static_cast<size_t>(out_channels) * in_channels * kernel * kernel),
      bias(static_cast<size_t>(out_channels)),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding) {}

void Conv2d::init(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(in_) * k_ * k_;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& w : weight.value) w = dist(rng);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Tensor3 Conv2d::forward(const Tensor3& input) const {
  const int oh = output_size(input.height);
  const int ow = output_size(input.width);
  Tensor3 out(out_, oh, ow);
  for (int o = 0; o < out_; ++o) {
    double* dst = out.data.data() + static_cast<size_t>(o) * oh * ow;
    std::fill(dst, dst + static_cast<size_t>(oh) * ow, bias.value[static_cast<size_t>(o)]);
    for (int i = 0; i < in_; ++i) {
      const double* src = input.data.data() + static_cast<size_t>(i) * input.height * input.width;
      const double* w = weight.value.data() + (static_cast<size_t>(o) * in_ + i) * k_ * k_;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const double wv = w[ky * k_ + kx];
          for (int y = 0; y < oh; ++y) {
            const int iy = y * stride_ + ky - pad_;
            if (iy < 0 || iy >= input.height) continue;
            const double* row = src + static_cast<size_t>(iy) * input.width;
            double* drow = dst + static_cast<size_t>(y) * ow;
            for (int x = 0; x < ow; ++x) {
              const int ix = x * stride_ + kx - pad_;
              if (ix < 0 || ix >= input.width) continue;
              drow[x] += wv * row[ix];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor3 Conv2d::backward(const Tensor3& input, const Tensor3& grad_output, bool need_input_grad) {
  const int oh = grad_output.height;
  const int ow = grad_output.width;
  Tensor3 grad_in;
  if (need_input_grad) grad_in = Tensor3(in_, input.height, input.width);
  for (int o = 0; o < out_; ++o) {
    const double* g = grad_output.data.data() + static_cast<size_t>(o) * oh * ow;
    double bsum = 0.0;
    for (size_t n = 0; n < static_cast<size_t>(oh) * ow; ++n) bsum += g[n];
    bias.grad[static_cast<size_t>(o)] += bsum;
    for (int i = 0; i < in_; ++i) {
      const double* src = input.data.data() + static_cast<size_t>(i) * input.height * input.width;
      double* gsrc = need_input_grad ? grad_in.data.data() + static_cast<size_t>(i) * input.height * input.width
                                     : nullptr;
      const size_t wbase = (static_cast<size_t>(o) * in_ + i) * k_ * k_;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const double wv = weight.value[wbase + static_cast<size_t>(ky * k_ + kx)];
          double acc = 0.0;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * stride_ + ky - pad_;
            if (iy < 0 || iy >= input.height) continue;
            const double* row = src + static_cast<size_t>(iy) * input.width;
            const double* grow = g + static_cast<size_t>(y) * ow;
            double* girow = gsrc ? gsrc + static_cast<size_t>(iy) * input.width : nullptr;
            for (int x = 0; x < ow; ++x) {
              const int ix = x * stride_ + kx - pad_;
              if (ix < 0 || ix >= input.width) continue;
              acc += grow[x] * row[ix];
              if (girow) girow[ix] += grow[x] * wv;
            }
          }
          weight.grad[wbase + static_cast<size_t>(ky * k_ + kx)] += acc;
        }
      }
    }
  }
  return grad_in;
}

void relu_inplace(Tensor3& t) {
  for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward(const Tensor3& activation, Tensor3& grad) {
  for (size_t i = 0; i < grad.data.size(); ++i)
    if (!(activation.data[i] > 0.0)) grad.data[i] = 0.0;
}

void sigmoid_inplace(Tensor3& t) {
  for (auto& v : t.data) v = 1.0 / (1.0 + std::exp(-v));
}

void sigmoid_backward(const Tensor3& output, Tensor3& grad) {
  for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] *= output.data[i] * (1.0 - output.data[i]);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace protoconcepts
