#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "ganmut/common.hpp"
#include "ganmut/emotion_space.hpp"
#include "ganmut/networks.hpp"

namespace ganmut {

/// Gaussian fit of a feature set: sample mean and unbiased covariance
/// (symmetrized).
struct FeatureStats {
  torch::Tensor mean;        // (d,) float64
  torch::Tensor covariance;  // (d, d) float64, symmetric
  std::int64_t n = 0;
};

/// Throws ValidationError unless features is (n, d) with n >= 2.
FeatureStats feature_stats(const torch::Tensor& features);

/// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), the matrix square root
/// taken through the symmetrized product sqrt(Sa) Sb sqrt(Sa) with eigenvalues
/// clamped at zero; the result is clamped at zero.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

/// Probabilistic emotion classifier with a feature-extraction view; metric
/// computations are generic over this interface.
class EmotionClassifier {
 public:
  virtual ~EmotionClassifier() = default;
  /// (B, M) probabilities, rows summing to 1.
  virtual torch::Tensor classify(const torch::Tensor& images) = 0;
  /// (B, d) feature rows.
  virtual torch::Tensor extract_features(const torch::Tensor& images) = 0;
  virtual int num_labels() const = 0;
};

/// Frechet distance between Gaussian fits of classifier features on real and
/// generated sets. Lower is better; identical sets give 0.
double fed_score(EmotionClassifier& classifier, const torch::Tensor& real_images,
                 const torch::Tensor& generated_images);

/// Largest absolute jump between consecutive confidences divided by the series
/// range (max - min). Degenerate ranges below 1e-6 score 1 (maximally abrupt by
/// convention). Input must be exactly 10 values in [0, 1].
double smoothness_from_series(const std::vector<double>& series);

/// Renders each neutral input at intensities rho_j = 0.1*j, j=1..10 along the
/// emotion's direction and scores the classifier-confidence series; averaged
/// over inputs. The emotion must not be neutral.
double smoothness_score(Generator& g, const DirectionTable& table,
                        EmotionClassifier& classifier, const torch::Tensor& neutral_images,
                        int emotion_label);

/// Mean smoothness over all non-neutral emotions.
double average_smoothness(Generator& g, const DirectionTable& table,
                          EmotionClassifier& classifier, const torch::Tensor& neutral_images);

struct F1Report {
  double f1_real = 0.0;
  double f1_fake = 0.0;
  double f1_average = 0.0;
  double threshold = 0.0;  // calibrated critic-score decision threshold
};

/// Calibrates a real/fake decision threshold as the midpoint of mean critic
/// scores on a leading calibration split of each set, then scores the
/// remainder. Zero-denominator F1 values are defined as 0.
F1Report discriminator_f1(Discriminator& d, const torch::Tensor& real_images,
                          const torch::Tensor& generated_images,
                          double calibration_fraction = 0.2);

/// discriminator_f1 on precomputed critic scores; exposed for oracle tests.
F1Report f1_from_scores(const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                        double calibration_fraction);

}  // namespace ganmut
