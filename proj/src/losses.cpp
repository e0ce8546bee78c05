#include "ganmut/losses.hpp"

#include <cmath>

namespace ganmut {

void LossWeights::validate() const {
  for (double v : {cls, rec, gp, info_d, info_g, rho}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ValidationError("loss weights must be finite and non-negative");
    }
  }
}

torch::Tensor wasserstein_gap(const torch::Tensor& src_real, const torch::Tensor& src_fake) {
  if (src_real.size(0) != src_fake.size(0)) {
    throw ValidationError("real and fake batches must have equal size");
  }
  return src_real.mean() - src_fake.mean();
}

torch::Tensor target_cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets) {
  return torch::nll_loss(torch::log_softmax(logits, /*dim=*/1), targets);
}

torch::Tensor coordinate_regression(const torch::Tensor& coor, const torch::Tensor& codes) {
  return (coor - codes).pow(2).sum(/*dim=*/1).mean();
}

torch::Tensor intensity_regression(const torch::Tensor& coor, const torch::Tensor& rho,
                                   double threshold) {
  auto rho_hat = coor.pow(2).sum(/*dim=*/1).sqrt();
  auto mask = rho > threshold;
  auto count = mask.sum();
  if (count.item<std::int64_t>() == 0) {
    return torch::zeros({}, coor.options());
  }
  auto sq = (rho_hat - rho).pow(2) * mask.to(coor.dtype());
  return sq.sum() / count.to(coor.dtype());
}

torch::Tensor cycle_l1(const torch::Tensor& x, const torch::Tensor& cycled) {
  return (x - cycled).abs().mean();
}

torch::Tensor gradient_penalty(const SrcFn& src_fn, const torch::Tensor& real,
                               const torch::Tensor& fake, const torch::Tensor& eps) {
  if (real.sizes() != fake.sizes()) {
    throw ValidationError("real and fake batches must have equal shape");
  }
  auto mix = eps.view({-1, 1, 1, 1}).to(real.dtype());
  auto xhat = (mix * real + (1.0 - mix) * fake).detach().requires_grad_(true);
  auto src = src_fn(xhat);
  torch::Tensor grad;
  if (src.requires_grad()) {
    auto grads = torch::autograd::grad({src.sum()}, {xhat},
                                       /*grad_outputs=*/{},
                                       /*retain_graph=*/true,
                                       /*create_graph=*/true,
                                       /*allow_unused=*/true);
    grad = grads[0];
  }
  if (!grad.defined()) {  // constant critic: gradient is identically zero
    grad = torch::zeros_like(xhat);
  }
  auto norm = grad.flatten(1).pow(2).sum(/*dim=*/1).sqrt();
  return (norm - 1.0).pow(2).mean();
}

torch::Tensor adversarial_loss(Discriminator& d, const torch::Tensor& real,
                               const torch::Tensor& fake) {
  if (real.size(0) != fake.size(0)) {
    throw ValidationError("real and fake batches must have equal size");
  }
  return wasserstein_gap(d->src(real), d->src(fake));
}

torch::Tensor classification_loss_real(Discriminator& d, const torch::Tensor& real,
                                       const torch::Tensor& labels) {
  auto out = d->forward(real);
  if (labels.size(0) != real.size(0)) {
    throw ValidationError("labels must match the batch size");
  }
  return target_cross_entropy(out.cls_logits, labels);
}

torch::Tensor classification_loss_fake(Discriminator& d, const torch::Tensor& fake,
                                       const std::vector<EmotionCode>& codes,
                                       const DirectionTable& table) {
  auto targets = target_labels_for_codes(codes, table);
  return target_cross_entropy(d->forward(fake).cls_logits, targets);
}

torch::Tensor info_loss(Discriminator& d, const torch::Tensor& fake,
                        const torch::Tensor& codes) {
  return coordinate_regression(d->forward(fake).coor, codes);
}

torch::Tensor interpolation_loss(Discriminator& d, const torch::Tensor& fake,
                                 const std::vector<EmotionCode>& codes, double threshold) {
  auto dtype = fake.scalar_type();
  return intensity_regression(d->forward(fake).coor, rho_to_tensor(codes, dtype), threshold);
}

torch::Tensor reconstruction_loss(Generator& g, Discriminator& d, const torch::Tensor& real,
                                  const torch::Tensor& codes) {
  auto recovered = d->forward(real).coor;
  auto cycled = g->forward(g->forward(real, codes), recovered);
  return cycle_l1(real, cycled);
}

torch::Tensor gradient_penalty(Discriminator& d, const torch::Tensor& real,
                               const torch::Tensor& fake, torch::Generator& gen) {
  auto eps = torch::rand({real.size(0)}, gen, torch::TensorOptions().dtype(real.dtype()));
  return gradient_penalty([&d](const torch::Tensor& x) { return d->src(x); }, real, fake, eps);
}

torch::Tensor total_discriminator_loss(const torch::Tensor& adv, const torch::Tensor& cls_real,
                                       const torch::Tensor& info, const torch::Tensor& gp,
                                       const LossWeights& w) {
  return -adv + w.cls * cls_real + w.info_d * info + w.gp * gp;
}

torch::Tensor total_generator_loss(const torch::Tensor& adv, const torch::Tensor& cls_fake,
                                   const torch::Tensor& rec, const torch::Tensor& info,
                                   const torch::Tensor& rho, const LossWeights& w) {
  return adv + w.cls * cls_fake + w.rec * rec + w.info_g * info + w.rho * rho;
}

torch::Tensor rho_to_tensor(const std::vector<EmotionCode>& codes, torch::Dtype dtype) {
  auto out = torch::empty({static_cast<std::int64_t>(codes.size())}, torch::kFloat64);
  auto acc = out.accessor<double, 1>();
  for (std::size_t i = 0; i < codes.size(); ++i) acc[i] = codes[i].rho;
  return out.to(dtype);
}

torch::Tensor target_labels_for_codes(const std::vector<EmotionCode>& codes,
                                      const DirectionTable& table) {
  auto out = torch::empty({static_cast<std::int64_t>(codes.size())}, torch::kInt64);
  auto acc = out.accessor<std::int64_t, 1>();
  for (std::size_t i = 0; i < codes.size(); ++i) {
    acc[i] = label_for_code(table, codes[i]);
  }
  return out;
}

}  // namespace ganmut
