#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <torch/torch.h>

#include "ganmut/data.hpp"
#include "ganmut/metrics.hpp"

namespace ganmut {

/// Which activations extract_features returns.
enum class FeatureLayer { kPenultimate, kLogits };

struct ClassifierConfig {
  int image_size = 16;
  int num_labels = 7;
  int base_channels = 8;
  std::int64_t seed = 0;
  FeatureLayer feature_layer = FeatureLayer::kPenultimate;

  void validate() const;
};

class TinyClassifierNetImpl : public torch::nn::Module {
 public:
  explicit TinyClassifierNetImpl(const ClassifierConfig& config);
  /// Returns (penultimate features, logits).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& images);

 private:
  torch::nn::Sequential trunk_;
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(TinyClassifierNet);

/// Small seeded convolutional emotion classifier; stands in for large
/// fine-tuned recognition backbones behind the EmotionClassifier interface.
class TinyClassifier : public EmotionClassifier {
 public:
  explicit TinyClassifier(const ClassifierConfig& config);

  torch::Tensor classify(const torch::Tensor& images) override;
  torch::Tensor extract_features(const torch::Tensor& images) override;
  int num_labels() const override { return config_.num_labels; }

  const ClassifierConfig& config() const { return config_; }
  TinyClassifierNet& net() { return net_; }

  void save(const std::string& path) const;
  static TinyClassifier load(const std::string& path);

 private:
  ClassifierConfig config_;
  TinyClassifierNet net_{nullptr};
};

/// Cross-entropy training over `steps` batches from `data`.
TinyClassifier train_tiny_classifier(const ClassifierConfig& config, BatchSource& data,
                                     int steps, double lr = 1e-3);

}  // namespace ganmut
