#include "ganmut/networks.hpp"

#include <cmath>

namespace ganmut {

namespace nn = torch::nn;

void ModelConfig::validate() const {
  if (image_size != 16 && image_size != 32 && image_size != 64 && image_size != 128) {
    throw ConfigError("image_size must be one of 16, 32, 64, 128; got " +
                      std::to_string(image_size));
  }
  if (base_channels < 1) {
    throw ConfigError("base_channels must be positive");
  }
  if (num_residual_blocks < 0) {
    throw ConfigError("num_residual_blocks must be non-negative");
  }
  if (num_labels < 2) {
    throw ConfigError("need at least two labels (one emotion plus neutral)");
  }
  if (dtype != torch::kFloat32 && dtype != torch::kFloat64) {
    throw ConfigError("dtype must be float32 or float64");
  }
}

std::uint64_t ModelConfig::digest() const {
  std::uint64_t h = kFnvOffset;
  auto mix = [&h](std::int64_t v) { h = fnv1a64(&v, sizeof(v), h); };
  mix(image_size);
  mix(base_channels);
  mix(num_residual_blocks);
  mix(num_labels);
  mix(seed);
  mix(dtype == torch::kFloat64 ? 1 : 0);
  return h;
}

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  body_ = nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).stride(1).padding(1).bias(false)),
      nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true)),
      nn::ReLU(nn::ReLUOptions().inplace(true)),
      nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).stride(1).padding(1).bias(false)),
      nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true)));
  register_module("body", body_);
}

torch::Tensor ResidualBlockImpl::forward(torch::Tensor x) {
  return x + body_->forward(x);
}

GeneratorImpl::GeneratorImpl(const ModelConfig& config) : config_(config) {
  config.validate();
  const int f = config.base_channels;

  layers_->push_back(nn::Conv2d(nn::Conv2dOptions(5, f, 7).stride(1).padding(3).bias(false)));
  layers_->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(f).affine(true)));
  layers_->push_back(nn::ReLU(nn::ReLUOptions().inplace(true)));

  int c = f;
  for (int i = 0; i < 2; ++i) {  // S -> S/4 bottleneck
    layers_->push_back(nn::Conv2d(nn::Conv2dOptions(c, c * 2, 4).stride(2).padding(1).bias(false)));
    layers_->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c * 2).affine(true)));
    layers_->push_back(nn::ReLU(nn::ReLUOptions().inplace(true)));
    c *= 2;
  }
  for (int i = 0; i < config.num_residual_blocks; ++i) {
    layers_->push_back(ResidualBlock(c));
  }
  for (int i = 0; i < 2; ++i) {
    layers_->push_back(nn::ConvTranspose2d(
        nn::ConvTranspose2dOptions(c, c / 2, 4).stride(2).padding(1).bias(false)));
    layers_->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(c / 2).affine(true)));
    layers_->push_back(nn::ReLU(nn::ReLUOptions().inplace(true)));
    c /= 2;
  }
  layers_->push_back(nn::Conv2d(nn::Conv2dOptions(c, 3, 7).stride(1).padding(3).bias(false)));
  layers_->push_back(nn::Tanh());
  register_module("layers", layers_);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& images, const torch::Tensor& codes) {
  auto input = torch::cat({images, tile_codes(codes, images.size(2))}, /*dim=*/1);
  return layers_->forward(input);
}

DiscriminatorImpl::DiscriminatorImpl(const ModelConfig& config) : config_(config) {
  config.validate();
  const int num_layers = static_cast<int>(std::log2(config.image_size)) - 1;  // 2x2 feature map

  int c_in = 3;
  int c_out = config.base_channels;
  for (int i = 0; i < num_layers; ++i) {
    trunk_->push_back(nn::Conv2d(nn::Conv2dOptions(c_in, c_out, 4).stride(2).padding(1)));
    trunk_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.01)));
    c_in = c_out;
    c_out *= 2;
  }
  register_module("trunk", trunk_);

  src_head_ = nn::Conv2d(nn::Conv2dOptions(c_in, 1, 3).stride(1).padding(1).bias(false));
  cls_head_ = nn::Conv2d(nn::Conv2dOptions(c_in, config.num_labels, 2).bias(false));
  coor_head_ = nn::Conv2d(nn::Conv2dOptions(c_in, 2, 2).bias(false));
  register_module("src_head", src_head_);
  register_module("cls_head", cls_head_);
  register_module("coor_head", coor_head_);
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& images) {
  auto h = trunk_->forward(images);
  auto src = src_head_->forward(h).mean({1, 2, 3});
  auto cls = cls_head_->forward(h).flatten(1);
  auto coor = coor_head_->forward(h).flatten(1);
  return DiscriminatorOutput{src, cls, coor};
}

torch::Tensor DiscriminatorImpl::src(const torch::Tensor& images) {
  return src_head_->forward(trunk_->forward(images)).mean({1, 2, 3});
}

std::pair<Generator, Discriminator> build_models(const ModelConfig& config) {
  config.validate();
  torch::manual_seed(static_cast<std::uint64_t>(config.seed));
  Generator g(config);
  Discriminator d(config);
  g->to(config.dtype);
  d->to(config.dtype);
  return {std::move(g), std::move(d)};
}

torch::Tensor generator_forward(Generator& g, const torch::Tensor& images,
                                const torch::Tensor& codes) {
  validate_image_batch(images, g->config().image_size);
  if (codes.dim() != 2 || codes.size(1) != 2 || codes.size(0) != images.size(0)) {
    throw ValidationError("codes must be (B, 2) with B matching the image batch");
  }
  return g->forward(images, codes);
}

DiscriminatorOutput discriminator_forward(Discriminator& d, const torch::Tensor& images) {
  validate_image_batch(images, d->config().image_size);
  auto out = d->forward(images);
  if (!out.src.isfinite().all().item<bool>() ||
      !out.cls_logits.isfinite().all().item<bool>() ||
      !out.coor.isfinite().all().item<bool>()) {
    throw ValidationError("discriminator produced non-finite outputs");
  }
  return out;
}

torch::Tensor tile_codes(const torch::Tensor& codes, std::int64_t size) {
  return codes.unsqueeze(-1).unsqueeze(-1).expand({codes.size(0), 2, size, size});
}

torch::Tensor codes_to_tensor(const std::vector<EmotionCode>& codes, torch::Dtype dtype) {
  auto out = torch::empty({static_cast<std::int64_t>(codes.size()), 2}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  for (std::size_t i = 0; i < codes.size(); ++i) {
    acc[i][0] = codes[i].x();
    acc[i][1] = codes[i].y();
  }
  return out.to(dtype);
}

void validate_image_batch(const torch::Tensor& t, int image_size) {
  if (t.dim() != 4 || t.size(1) != 3 || t.size(2) != image_size || t.size(3) != image_size) {
    throw ValidationError("image batch must be (B, 3, " + std::to_string(image_size) +
                          ", " + std::to_string(image_size) + ")");
  }
  if (!t.isfinite().all().item<bool>()) {
    throw ValidationError("image batch contains non-finite values");
  }
}

std::uint64_t parameter_digest(const torch::nn::Module& module) {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : module.named_parameters(/*recurse=*/true)) {
    h = fnv1a64(p.key(), h);
    auto flat = p.value().detach().contiguous();
    h = fnv1a64(flat.data_ptr(), flat.numel() * flat.element_size(), h);
  }
  return h;
}

}  // namespace ganmut
