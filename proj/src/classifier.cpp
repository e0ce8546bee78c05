#include "ganmut/classifier.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace ganmut {

namespace nn = torch::nn;

void ClassifierConfig::validate() const {
  if (image_size < 8) throw ConfigError("classifier image_size must be at least 8");
  if (num_labels < 2) throw ConfigError("classifier needs at least two labels");
  if (base_channels < 1) throw ConfigError("base_channels must be positive");
}

TinyClassifierNetImpl::TinyClassifierNetImpl(const ClassifierConfig& config) {
  const int c = config.base_channels;
  trunk_ = nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(3, c, 3).stride(2).padding(1)),
      nn::ReLU(nn::ReLUOptions().inplace(true)),
      nn::Conv2d(nn::Conv2dOptions(c, 2 * c, 3).stride(2).padding(1)),
      nn::ReLU(nn::ReLUOptions().inplace(true)),
      nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1)));
  head_ = nn::Linear(2 * c, config.num_labels);
  register_module("trunk", trunk_);
  register_module("head", head_);
}

std::pair<torch::Tensor, torch::Tensor> TinyClassifierNetImpl::forward(
    const torch::Tensor& images) {
  auto features = trunk_->forward(images).flatten(1);
  return {features, head_->forward(features)};
}

TinyClassifier::TinyClassifier(const ClassifierConfig& config) : config_(config) {
  config.validate();
  torch::manual_seed(static_cast<std::uint64_t>(config.seed));
  net_ = TinyClassifierNet(config);
}

torch::Tensor TinyClassifier::classify(const torch::Tensor& images) {
  auto [features, logits] = net_->forward(images.to(torch::kFloat32));
  return torch::softmax(logits, /*dim=*/1);
}

torch::Tensor TinyClassifier::extract_features(const torch::Tensor& images) {
  auto [features, logits] = net_->forward(images.to(torch::kFloat32));
  return config_.feature_layer == FeatureLayer::kPenultimate ? features : logits;
}

namespace {

constexpr char kMagic[4] = {'G', 'M', 'C', 'L'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void TinyClassifier::save(const std::string& path) const {
  std::string payload;
  auto put_i32 = [&payload](std::int32_t v) {
    payload.append(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put_i32(config_.image_size);
  put_i32(config_.num_labels);
  put_i32(config_.base_channels);
  put_i32(config_.feature_layer == FeatureLayer::kLogits ? 1 : 0);
  std::int64_t seed = config_.seed;
  payload.append(reinterpret_cast<const char*>(&seed), sizeof(seed));

  torch::serialize::OutputArchive archive;
  net_->save(archive);
  std::ostringstream blob;
  archive.save_to(blob);
  const auto bytes = blob.str();
  std::uint64_t size = bytes.size();
  payload.append(reinterpret_cast<const char*>(&size), sizeof(size));
  payload.append(bytes);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  const auto checksum = fnv1a64(payload.data(), payload.size());
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!out.good()) throw IoError("cannot write classifier: " + path);
}

TinyClassifier TinyClassifier::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open classifier: " + path);
  std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < 8 + 8) throw IoError("truncated classifier file");
  if (std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a classifier file (bad magic)");
  }
  std::uint32_t version;
  std::memcpy(&version, file.data() + 4, sizeof(version));
  if (version != kVersion) throw IoError("unsupported classifier version");

  const char* payload = file.data() + 8;
  const std::size_t payload_size = file.size() - 8 - 8;
  std::uint64_t checksum;
  std::memcpy(&checksum, file.data() + 8 + payload_size, sizeof(checksum));
  if (fnv1a64(payload, payload_size) != checksum) {
    throw IoError("classifier payload checksum mismatch");
  }

  std::size_t pos = 0;
  auto get_i32 = [&]() {
    std::int32_t v;
    if (pos + sizeof(v) > payload_size) throw IoError("truncated classifier file");
    std::memcpy(&v, payload + pos, sizeof(v));
    pos += sizeof(v);
    return v;
  };
  ClassifierConfig config;
  config.image_size = get_i32();
  config.num_labels = get_i32();
  config.base_channels = get_i32();
  config.feature_layer = get_i32() ? FeatureLayer::kLogits : FeatureLayer::kPenultimate;
  std::int64_t seed;
  if (pos + sizeof(seed) > payload_size) throw IoError("truncated classifier file");
  std::memcpy(&seed, payload + pos, sizeof(seed));
  pos += sizeof(seed);
  config.seed = seed;

  std::uint64_t blob_size;
  if (pos + sizeof(blob_size) > payload_size) throw IoError("truncated classifier file");
  std::memcpy(&blob_size, payload + pos, sizeof(blob_size));
  pos += sizeof(blob_size);
  if (pos + blob_size != payload_size) throw IoError("truncated classifier file");

  TinyClassifier classifier(config);
  torch::serialize::InputArchive archive;
  archive.load_from(payload + pos, blob_size);
  classifier.net_->load(archive);
  return classifier;
}

TinyClassifier train_tiny_classifier(const ClassifierConfig& config, BatchSource& data,
                                     int steps, double lr) {
  if (steps < 1) throw ValidationError("steps must be positive");
  if (data.size() == 0) throw ValidationError("data source is empty");
  TinyClassifier classifier(config);
  torch::optim::Adam opt(classifier.net()->parameters(), torch::optim::AdamOptions(lr));
  for (int i = 0; i < steps; ++i) {
    auto batch = data.next();
    auto [features, logits] = classifier.net()->forward(batch.images.to(torch::kFloat32));
    auto loss = torch::nll_loss(torch::log_softmax(logits, 1), batch.labels);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  return classifier;
}

}  // namespace ganmut
