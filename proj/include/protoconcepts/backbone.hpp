#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "protoconcepts/geometry.hpp"
#include "protoconcepts/tensor.hpp"

namespace protoconcepts {

/// Intermediate activations kept for the backward pass.
struct LayerTrace {
  std::vector<Tensor3> activations;
};

/// Feature extractor f. Implementations are pluggable; the repo ships "tiny-cnn".
class BackboneAdapter {
 public:
  virtual ~BackboneAdapter() = default;

  virtual std::string name() const = 0;
  virtual int output_channels() const = 0;
  /// Output grid side for a square input of side `resolution`.
  virtual int output_size(int resolution) const = 0;

  virtual Tensor3 forward(const Tensor3& image, LayerTrace* trace) const = 0;
  virtual void backward(const LayerTrace& trace, const Tensor3& grad_output) = 0;
  virtual std::vector<Param*> parameters() = 0;
  virtual std::unique_ptr<BackboneAdapter> clone() const = 0;
};

/// Three conv3x3/stride-2/ReLU blocks (3 -> 8 -> 16 -> 32 channels); overall stride 8.
class TinyCnnBackbone final : public BackboneAdapter {
 public:
  explicit TinyCnnBackbone(std::mt19937_64& rng);

  std::string name() const override { return "tiny-cnn"; }
  int output_channels() const override { return 32; }
  int output_size(int resolution) const override;

  Tensor3 forward(const Tensor3& image, LayerTrace* trace) const override;
  void backward(const LayerTrace& trace, const Tensor3& grad_output) override;
  std::vector<Param*> parameters() override;
  std::unique_ptr<BackboneAdapter> clone() const override;

 private:
  TinyCnnBackbone() = default;
  std::vector<Conv2d> blocks_;
};

/// Builds a backbone by id. Unknown ids (e.g. pretrained ImageNet adapters
/// that are not compiled in) raise ConfigError.
std::unique_ptr<BackboneAdapter> make_backbone(const std::string& name, std::mt19937_64& rng);

/// Two 1x1 convolutions mapping backbone channels to the latent dimension D:
/// conv -> ReLU -> conv -> sigmoid (the sigmoid is omitted for COSINE geometry).
class AddOnLayers {
 public:
  AddOnLayers() = default;
  AddOnLayers(int in_channels, int latent_dim, Geometry geometry, std::mt19937_64& rng);

  Tensor3 forward(const Tensor3& features, LayerTrace* trace) const;
  /// Returns d loss / d features when requested.
  Tensor3 backward(const LayerTrace& trace, const Tensor3& grad_output, bool need_input_grad);
  std::vector<Param*> parameters();

  int latent_dim() const { return second_.out_channels(); }
  bool squashed() const { return squash_; }

 private:
  Conv2d first_;
  Conv2d second_;
  bool squash_ = true;
};

}  // namespace protoconcepts
