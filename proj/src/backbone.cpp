#include "protoconcepts/backbone.hpp"

#include "protoconcepts/diagnostics.hpp"

namespace protoconcepts {

TinyCnnBackbone::TinyCnnBackbone(std::mt19937_64& rng) {
  const int widths[] = {3, 8, 16, 32};
  for (int b = 0; b < 3; ++b) {
    blocks_.emplace_back(widths[b], widths[b + 1], 3, 2, 1);
    blocks_.back().init(rng);
  }
}

int TinyCnnBackbone::output_size(int resolution) const {
  int s = resolution;
  for (const auto& b : blocks_) s = b.output_size(s);
  return s;
}

Tensor3 TinyCnnBackbone::forward(const Tensor3& image, LayerTrace* trace) const {
  if (trace) {
    trace->activations.clear();
    trace->activations.push_back(image);
  }
  Tensor3 x = image;
  for (const auto& b : blocks_) {
    x = b.forward(x);
    relu_inplace(x);
    if (trace) trace->activations.push_back(x);
  }
  return x;
}

void TinyCnnBackbone::backward(const LayerTrace& trace, const Tensor3& grad_output) {
  Tensor3 g = grad_output;
  for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
    relu_backward(trace.activations[static_cast<size_t>(b) + 1], g);
    g = blocks_[static_cast<size_t>(b)].backward(trace.activations[static_cast<size_t>(b)], g, b > 0);
  }
}

std::vector<Param*> TinyCnnBackbone::parameters() {
  std::vector<Param*> out;
  for (auto& b : blocks_) {
    out.push_back(&b.weight);
    out.push_back(&b.bias);
  }
  return out;
}

std::unique_ptr<BackboneAdapter> TinyCnnBackbone::clone() const {
  auto copy = std::unique_ptr<TinyCnnBackbone>(new TinyCnnBackbone());
  copy->blocks_ = blocks_;
  return copy;
}

std::unique_ptr<BackboneAdapter> make_backbone(const std::string& name, std::mt19937_64& rng) {
  if (name == "tiny-cnn") return std::make_unique<TinyCnnBackbone>(rng);
  throw ConfigError("backbone '" + name + "' is not available in this build (available: tiny-cnn)");
}

AddOnLayers::AddOnLayers(int in_channels, int latent_dim, Geometry geometry, std::mt19937_64& rng)
    : first_(in_channels, latent_dim, 1, 1, 0),
      second_(latent_dim, latent_dim, 1, 1, 0),
      squash_(geometry == Geometry::Log) {
  first_.init(rng);
  second_.init(rng);
}

Tensor3 AddOnLayers::forward(const Tensor3& features, LayerTrace* trace) const {
  Tensor3 h = first_.forward(features);
  relu_inplace(h);
  Tensor3 z = second_.forward(h);
  if (squash_) sigmoid_inplace(z);
  if (trace) trace->activations = {features, h, z};
  return z;
}

Tensor3 AddOnLayers::backward(const LayerTrace& trace, const Tensor3& grad_output, bool need_input_grad) {
  Tensor3 g = grad_output;
  if (squash_) sigmoid_backward(trace.activations[2], g);
  Tensor3 gh = second_.backward(trace.activations[1], g, true);
  relu_backward(trace.activations[1], gh);
  return first_.backward(trace.activations[0], gh, need_input_grad);
}

std::vector<Param*> AddOnLayers::parameters() { return {&first_.weight, &first_.bias, &second_.weight, &second_.bias}; }

}  // namespace protoconcepts
