#include "ganmut/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace ganmut {

FeatureStats feature_stats(const torch::Tensor& features) {
  if (features.dim() != 2) throw ValidationError("features must be a (n, d) array");
  const auto n = features.size(0);
  if (n < 2) throw ValidationError("need at least two feature rows");
  auto f = features.to(torch::kFloat64);
  auto mean = f.mean(0);
  auto centered = f - mean.unsqueeze(0);
  auto cov = centered.t().matmul(centered) / static_cast<double>(n - 1);
  cov = (cov + cov.t()) / 2.0;
  return FeatureStats{mean, cov, n};
}

namespace {

torch::Tensor psd_sqrt(const torch::Tensor& sym) {
  auto decompose = [](const torch::Tensor& m) {
    auto [vals, vecs] = torch::linalg_eigh(m);
    auto clamped = vals.clamp_min(0.0);
    return vecs.matmul(torch::diag(clamped.sqrt())).matmul(vecs.t());
  };
  try {
    return decompose(sym);
  } catch (const std::exception&) {
    // near-singular stats from tiny sets: regularize and retry
    auto eye = torch::eye(sym.size(0), sym.options());
    return decompose(sym + 1e-6 * eye);
  }
}

torch::Tensor clamped_eigenvalues(const torch::Tensor& sym) {
  try {
    return std::get<0>(torch::linalg_eigh(sym)).clamp_min(0.0);
  } catch (const std::exception&) {
    auto eye = torch::eye(sym.size(0), sym.options());
    return std::get<0>(torch::linalg_eigh(sym + 1e-6 * eye)).clamp_min(0.0);
  }
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.size(0) != b.mean.size(0)) {
    throw ValidationError("feature stats have mismatched dimensions");
  }
  auto diff = a.mean - b.mean;
  const double mean_term = diff.dot(diff).item<double>();

  auto sqrt_a = psd_sqrt(a.covariance);
  auto inner = sqrt_a.matmul(b.covariance).matmul(sqrt_a);
  inner = (inner + inner.t()) / 2.0;
  const double tr_sqrt = clamped_eigenvalues(inner).sqrt().sum().item<double>();

  const double value = mean_term + a.covariance.trace().item<double>() +
                       b.covariance.trace().item<double>() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

double fed_score(EmotionClassifier& classifier, const torch::Tensor& real_images,
                 const torch::Tensor& generated_images) {
  torch::NoGradGuard no_grad;
  auto real = feature_stats(classifier.extract_features(real_images));
  auto generated = feature_stats(classifier.extract_features(generated_images));
  return frechet_distance(real, generated);
}

double smoothness_from_series(const std::vector<double>& series) {
  if (series.size() != 10) {
    throw ValidationError("confidence series must have exactly 10 steps");
  }
  for (double s : series) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ValidationError("confidence values must lie in [0, 1]");
    }
  }
  const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  const double range = *hi - *lo;
  if (range < 1e-6) return 1.0;
  double max_jump = 0.0;
  for (std::size_t j = 0; j + 1 < series.size(); ++j) {
    max_jump = std::max(max_jump, std::fabs(series[j + 1] - series[j]));
  }
  return max_jump / range;
}

double smoothness_score(Generator& g, const DirectionTable& table,
                        EmotionClassifier& classifier, const torch::Tensor& neutral_images,
                        int emotion_label) {
  if (table.labels.is_neutral(emotion_label)) {
    throw ValidationError("smoothness is defined for non-neutral emotions");
  }
  if (neutral_images.size(0) < 1) throw ValidationError("need at least one neutral image");
  validate_image_batch(neutral_images, g->config().image_size);

  torch::NoGradGuard no_grad;
  const double theta = table.angle_for(emotion_label);
  std::vector<EmotionCode> ramp;
  ramp.reserve(10);
  for (int j = 1; j <= 10; ++j) {
    ramp.push_back(EmotionCode{theta, 0.1 * j});
  }
  const auto codes = codes_to_tensor(ramp, g->config().dtype);

  double total = 0.0;
  for (std::int64_t i = 0; i < neutral_images.size(0); ++i) {
    auto tiles = neutral_images.index({i}).unsqueeze(0).expand({10, -1, -1, -1});
    auto generated = g->forward(tiles.to(g->config().dtype), codes);
    auto probs = classifier.classify(generated);
    std::vector<double> series(10);
    for (int j = 0; j < 10; ++j) {
      series[j] = probs.index({j, emotion_label}).item<double>();
    }
    total += smoothness_from_series(series);
  }
  return total / static_cast<double>(neutral_images.size(0));
}

double average_smoothness(Generator& g, const DirectionTable& table,
                          EmotionClassifier& classifier,
                          const torch::Tensor& neutral_images) {
  const auto ids = table.labels.emotion_ids();
  double total = 0.0;
  for (int id : ids) {
    total += smoothness_score(g, table, classifier, neutral_images, id);
  }
  return total / static_cast<double>(ids.size());
}

F1Report f1_from_scores(const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                        double calibration_fraction) {
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw ValidationError("calibration_fraction must lie in (0, 1)");
  }
  const auto n_real = real_scores.size(0);
  const auto n_fake = fake_scores.size(0);
  if (n_real < 1 || n_fake < 1) throw ValidationError("both score sets must be non-empty");

  auto split = [calibration_fraction](std::int64_t n) {
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(n * calibration_fraction)));
  };
  const auto k_real = split(n_real);
  const auto k_fake = split(n_fake);
  if (k_real >= n_real || k_fake >= n_fake) {
    throw ValidationError("calibration split leaves an empty evaluation class");
  }

  const double threshold = (real_scores.slice(0, 0, k_real).mean().item<double>() +
                            fake_scores.slice(0, 0, k_fake).mean().item<double>()) /
                           2.0;

  auto real_eval = real_scores.slice(0, k_real);
  auto fake_eval = fake_scores.slice(0, k_fake);
  const double tp_real = (real_eval > threshold).sum().item<double>();
  const double fn_real = static_cast<double>(real_eval.size(0)) - tp_real;
  const double tp_fake = (fake_eval <= threshold).sum().item<double>();
  const double fn_fake = static_cast<double>(fake_eval.size(0)) - tp_fake;

  auto f1 = [](double tp, double fp, double fn) {
    const double denom = 2.0 * tp + fp + fn;
    return denom > 0.0 ? 2.0 * tp / denom : 0.0;
  };
  F1Report report;
  report.threshold = threshold;
  report.f1_real = f1(tp_real, /*fp=*/fn_fake, /*fn=*/fn_real);
  report.f1_fake = f1(tp_fake, /*fp=*/fn_real, /*fn=*/fn_fake);
  report.f1_average = (report.f1_real + report.f1_fake) / 2.0;
  return report;
}

F1Report discriminator_f1(Discriminator& d, const torch::Tensor& real_images,
                          const torch::Tensor& generated_images,
                          double calibration_fraction) {
  torch::NoGradGuard no_grad;
  validate_image_batch(real_images, d->config().image_size);
  validate_image_batch(generated_images, d->config().image_size);
  auto real_scores = d->src(real_images.to(d->config().dtype)).to(torch::kFloat64);
  auto fake_scores = d->src(generated_images.to(d->config().dtype)).to(torch::kFloat64);
  return f1_from_scores(real_scores, fake_scores, calibration_fraction);
}

}  // namespace ganmut
