#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ganmut/classifier.hpp"
#include "ganmut/data.hpp"
#include "ganmut/metrics.hpp"
#include "ganmut/networks.hpp"

namespace ganmut::testing {

inline ModelConfig tiny_model_config(torch::Dtype dtype = torch::kFloat32,
                                     std::int64_t seed = 7) {
  ModelConfig mc;
  mc.image_size = 16;
  mc.base_channels = 4;
  mc.num_residual_blocks = 1;
  mc.num_labels = 7;
  mc.seed = seed;
  mc.dtype = dtype;
  return mc;
}

inline torch::Tensor random_images(std::int64_t batch, int size, torch::Dtype dtype,
                                   std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::rand({batch, 3, size, size}, gen, torch::TensorOptions().dtype(dtype)) * 2.0 -
         1.0;
}

/// In-memory batch source over fixed tensors; cycles deterministically.
class TensorSource : public ganmut::BatchSource {
 public:
  TensorSource(torch::Tensor images, torch::Tensor labels, std::int64_t batch_size)
      : images_(std::move(images)), labels_(std::move(labels)), batch_size_(batch_size) {}

  ganmut::Batch next() override {
    const auto n = images_.size(0);
    std::vector<std::int64_t> idx(batch_size_);
    for (std::int64_t i = 0; i < batch_size_; ++i) idx[i] = (cursor_ + i) % n;
    cursor_ = (cursor_ + batch_size_) % n;
    auto index = torch::tensor(idx, torch::kInt64);
    return {images_.index_select(0, index), labels_.index_select(0, index)};
  }

  std::int64_t size() const override { return images_.size(0); }

  std::vector<int> labels_present() const override {
    std::vector<int> out;
    auto distinct = std::get<0>(torch::_unique(labels_));
    for (std::int64_t i = 0; i < distinct.numel(); ++i) {
      out.push_back(static_cast<int>(distinct[i].item<std::int64_t>()));
    }
    return out;
  }

 private:
  torch::Tensor images_;
  torch::Tensor labels_;
  std::int64_t batch_size_;
  std::int64_t cursor_ = 0;
};

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    auto base = std::filesystem::temp_directory_path() / "ganmut_tests";
    std::filesystem::create_directories(base);
    static std::atomic<int> counter{0};
    path_ = base / (tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

/// Feature extractor for closed-form FED oracles: one feature per image, the
/// mean pixel value.
class MeanPixelClassifier : public ganmut::EmotionClassifier {
 public:
  torch::Tensor classify(const torch::Tensor& images) override {
    auto b = images.size(0);
    return torch::full({b, 7}, 1.0 / 7.0, torch::kFloat64);
  }
  torch::Tensor extract_features(const torch::Tensor& images) override {
    return images.mean({1, 2, 3}).unsqueeze(1).to(torch::kFloat64);
  }
  int num_labels() const override { return 7; }
};

/// Emits scripted per-row confidence series, one classify() call per image.
/// Row j of a call gets probability series[call][j] for every label.
class ScriptedSeriesClassifier : public ganmut::EmotionClassifier {
 public:
  explicit ScriptedSeriesClassifier(std::vector<std::vector<double>> series_per_call)
      : series_(std::move(series_per_call)) {}

  torch::Tensor classify(const torch::Tensor& images) override {
    const auto& series = series_[std::min(call_, series_.size() - 1)];
    ++call_;
    auto out = torch::zeros({images.size(0), 7}, torch::kFloat64);
    for (std::int64_t j = 0; j < images.size(0); ++j) {
      const double p = series[static_cast<std::size_t>(j) % series.size()];
      for (int m = 0; m < 7; ++m) out.index_put_({j, m}, p);
    }
    return out;
  }
  torch::Tensor extract_features(const torch::Tensor& images) override {
    return images.mean({1, 2, 3}).unsqueeze(1).to(torch::kFloat64);
  }
  int num_labels() const override { return 7; }

 private:
  std::vector<std::vector<double>> series_;
  std::size_t call_ = 0;
};

}  // namespace ganmut::testing
