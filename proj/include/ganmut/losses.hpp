#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "ganmut/common.hpp"
#include "ganmut/emotion_space.hpp"
#include "ganmut/networks.hpp"

namespace ganmut {

struct LossWeights {
  double cls = 1.0;
  double rec = 10.0;
  double gp = 10.0;
  double info_d = 1.0;
  double info_g = 1.0;
  double rho = 1.0;

  void validate() const;
};

/// Scalar values of every term computed during one training step. Terms that a
/// step does not touch stay empty.
struct LossBreakdown {
  std::optional<double> adv;
  std::optional<double> cls_real;
  std::optional<double> cls_fake;
  std::optional<double> info;
  std::optional<double> rho;
  std::optional<double> rec;
  std::optional<double> gp;
  std::optional<double> total_d;
  std::optional<double> total_g;
};

// ---- head-level primitives (single discriminator pass, reused by the trainer)

/// E[src_real] - E[src_fake], the Wasserstein critic gap.
torch::Tensor wasserstein_gap(const torch::Tensor& src_real, const torch::Tensor& src_fake);

/// Mean negative log softmax probability of the target labels.
torch::Tensor target_cross_entropy(const torch::Tensor& logits, const torch::Tensor& targets);

/// Mean squared euclidean distance between coordinate estimates and codes (B,2).
torch::Tensor coordinate_regression(const torch::Tensor& coor, const torch::Tensor& codes);

/// Squared error between ||coor||_2 and the sampled intensity, averaged over
/// samples with rho > threshold; 0 when the mask is empty.
torch::Tensor intensity_regression(const torch::Tensor& coor, const torch::Tensor& rho,
                                   double threshold = 0.2);

/// Mean elementwise L1 distance.
torch::Tensor cycle_l1(const torch::Tensor& x, const torch::Tensor& cycled);

using SrcFn = std::function<torch::Tensor(const torch::Tensor&)>;

/// WGAN-GP penalty E[(||grad_xhat src(xhat)||_2 - 1)^2] with xhat the per-sample
/// interpolate eps*real + (1-eps)*fake. `eps` is a (B,) tensor of mixing factors.
torch::Tensor gradient_penalty(const SrcFn& src_fn, const torch::Tensor& real,
                               const torch::Tensor& fake, const torch::Tensor& eps);

// ---- model-level forms

torch::Tensor adversarial_loss(Discriminator& d, const torch::Tensor& real,
                               const torch::Tensor& fake);

torch::Tensor classification_loss_real(Discriminator& d, const torch::Tensor& real,
                                       const torch::Tensor& labels);

/// Targets are decoded from the sampled codes: neutral below the threshold,
/// the sampled emotion otherwise.
torch::Tensor classification_loss_fake(Discriminator& d, const torch::Tensor& fake,
                                       const std::vector<EmotionCode>& codes,
                                       const DirectionTable& table);

torch::Tensor info_loss(Discriminator& d, const torch::Tensor& fake,
                        const torch::Tensor& codes);

torch::Tensor interpolation_loss(Discriminator& d, const torch::Tensor& fake,
                                 const std::vector<EmotionCode>& codes,
                                 double threshold = 0.2);

/// Cycle consistency |x - G(G(x,z), D_coor(x))|_1 with the recovered condition
/// taken from the coordinate head on the original image.
torch::Tensor reconstruction_loss(Generator& g, Discriminator& d, const torch::Tensor& real,
                                  const torch::Tensor& codes);

/// eps is drawn U[0,1] per sample from `gen`.
torch::Tensor gradient_penalty(Discriminator& d, const torch::Tensor& real,
                               const torch::Tensor& fake, torch::Generator& gen);

/// -adv + cls*cls_real + info_d*info + gp_weight*gp. The penalty is added to the
/// minimized objective (WGAN-GP convention).
torch::Tensor total_discriminator_loss(const torch::Tensor& adv, const torch::Tensor& cls_real,
                                       const torch::Tensor& info, const torch::Tensor& gp,
                                       const LossWeights& w);

/// adv + cls*cls_fake + rec*rec + info_g*info + rho_weight*rho.
torch::Tensor total_generator_loss(const torch::Tensor& adv, const torch::Tensor& cls_fake,
                                   const torch::Tensor& rec, const torch::Tensor& info,
                                   const torch::Tensor& rho, const LossWeights& w);

/// (B,) tensor of the sampled intensities.
torch::Tensor rho_to_tensor(const std::vector<EmotionCode>& codes,
                            torch::Dtype dtype = torch::kFloat32);

/// (B,) int64 tensor of decoded target labels, one per code.
torch::Tensor target_labels_for_codes(const std::vector<EmotionCode>& codes,
                                      const DirectionTable& table);

}  // namespace ganmut
