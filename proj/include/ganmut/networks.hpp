#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "ganmut/common.hpp"
#include "ganmut/emotion_space.hpp"

namespace ganmut {

/// Batches of images are (B, 3, S, S) tensors with values in [-1, 1].
using ImageBatch = torch::Tensor;

struct ModelConfig {
  int image_size = 128;
  int base_channels = 64;
  int num_residual_blocks = 6;
  int num_labels = 7;
  std::int64_t seed = 0;
  torch::Dtype dtype = torch::kFloat32;

  /// Throws ConfigError on unsupported values.
  void validate() const;
  /// Stable digest over all fields; stored in checkpoints.
  std::uint64_t digest() const;
  bool operator==(const ModelConfig&) const = default;
};

struct DiscriminatorOutput {
  torch::Tensor src;         // (B,) unbounded critic score
  torch::Tensor cls_logits;  // (B, M)
  torch::Tensor coor;        // (B, 2) cartesian estimate of the condition
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::Sequential body_;
};
TORCH_MODULE(ResidualBlock);

/// Down-sample / residual / up-sample image-to-image generator. The 2-D
/// condition enters as two constant channels tiled over the input.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const ModelConfig& config);
  /// images (B,3,S,S), codes (B,2) cartesian. Output matches the input shape,
  /// bounded to [-1,1] by a tanh.
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& codes);

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  torch::nn::Sequential layers_;
};
TORCH_MODULE(Generator);

/// Strided-convolution critic without normalization layers; the realness,
/// classification and coordinate heads share the trunk and branch at the end.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const ModelConfig& config);
  DiscriminatorOutput forward(const torch::Tensor& images);
  /// Realness head only; used by the gradient penalty.
  torch::Tensor src(const torch::Tensor& images);

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  torch::nn::Sequential trunk_;
  torch::nn::Conv2d src_head_{nullptr};
  torch::nn::Conv2d cls_head_{nullptr};
  torch::nn::Conv2d coor_head_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Builds both networks with seeded parameter initialization.
std::pair<Generator, Discriminator> build_models(const ModelConfig& config);

/// Shape-checked forwards matching the module contracts.
torch::Tensor generator_forward(Generator& g, const torch::Tensor& images,
                                const torch::Tensor& codes);
DiscriminatorOutput discriminator_forward(Discriminator& d, const torch::Tensor& images);

/// (B,2) codes -> (B,2,S,S) constant spatial channels (differentiable).
torch::Tensor tile_codes(const torch::Tensor& codes, std::int64_t size);

/// Cartesian (B,2) tensor view of a code batch.
torch::Tensor codes_to_tensor(const std::vector<EmotionCode>& codes,
                              torch::Dtype dtype = torch::kFloat32);

/// Throws ValidationError unless t is a finite (B,3,S,S) batch in [-1,1].
void validate_image_batch(const torch::Tensor& t, int image_size);

/// Order-stable FNV digest over all named parameters (name + raw bytes).
std::uint64_t parameter_digest(const torch::nn::Module& module);

}  // namespace ganmut
