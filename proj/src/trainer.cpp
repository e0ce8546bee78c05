#include "ganmut/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace ganmut {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (total_steps < 0) throw ValidationError("total_steps must be non-negative");
  if (n_critic < 1) throw ValidationError("n_critic must be at least 1");
  if (!(lr_g >= 0.0) || !(lr_d >= 0.0) || !std::isfinite(lr_g) || !std::isfinite(lr_d)) {
    throw ValidationError("learning rates must be finite and non-negative");
  }
  if (batch_size < 2) throw ValidationError("batch_size must be at least 2");
  if (checkpoint_every < 1) throw ValidationError("checkpoint_every must be positive");
  if (!(labeled_fraction >= 0.0 && labeled_fraction <= 1.0)) {
    throw ValidationError("labeled_fraction must lie in [0, 1]");
  }
  weights.validate();
}

TrainState::TrainState(const ModelConfig& model_config, const TrainConfig& train_config,
                       const LabelSet& labels)
    : model_config_(model_config),
      train_config_(train_config),
      labels_(labels),
      cond_rng_(derive_seed(train_config.seed, "conditions")),
      gp_gen_(at::detail::createCPUGenerator(derive_seed(train_config.seed, "gp"))) {
  model_config.validate();
  train_config.validate();
  if (labels.size() != model_config.num_labels) {
    throw ConfigError("label set size does not match ModelConfig::num_labels");
  }
  auto [g, d] = build_models(model_config);
  g_ = g;
  d_ = d;

  auto table = init_directions(labels_);
  neutral_threshold_ = table.neutral_threshold;
  directions_ = torch::from_blob(table.angles.data(),
                                 {static_cast<std::int64_t>(table.angles.size())},
                                 torch::kFloat64)
                    .clone()
                    .to(model_config.dtype)
                    .set_requires_grad(true);

  auto adam = [](double lr) {
    return torch::optim::AdamOptions(lr).betas({0.5, 0.999});
  };
  auto g_params = g_->parameters();
  g_params.push_back(directions_);
  opt_g_ = std::make_unique<torch::optim::Adam>(g_params, adam(train_config.lr_g));
  opt_d_ = std::make_unique<torch::optim::Adam>(d_->parameters(), adam(train_config.lr_d));

  for (int i = 0; i < labels_.size(); ++i) labels_present_.push_back(i);
}

void TrainState::set_labels_present(std::vector<int> ids) {
  if (ids.empty()) throw ValidationError("labels_present must not be empty");
  for (int id : ids) labels_.name(id);  // range check
  std::sort(ids.begin(), ids.end());
  labels_present_ = std::move(ids);
}

DirectionTable TrainState::direction_table() const {
  auto values = directions_.detach().to(torch::kFloat64).contiguous();
  std::vector<double> angles(values.data_ptr<double>(),
                             values.data_ptr<double>() + values.numel());
  for (double& a : angles) a = wrap_angle(a);
  return DirectionTable{labels_, std::move(angles), neutral_threshold_};
}

ConditionBatch TrainState::sample_conditions(std::int64_t batch_size, bool differentiable) {
  const auto table = direction_table();
  const double t = neutral_threshold_;
  const auto opts = torch::TensorOptions().dtype(model_config_.dtype);
  const auto n_labeled =
      static_cast<std::int64_t>(std::llround(batch_size * train_config_.labeled_fraction));

  ConditionBatch out;
  out.codes.reserve(batch_size);
  std::vector<torch::Tensor> rows;
  std::vector<double> rhos(batch_size);
  std::vector<std::int64_t> targets(batch_size);

  for (std::int64_t i = 0; i < batch_size; ++i) {
    if (i < n_labeled) {
      const auto pick = static_cast<std::size_t>(uniform01(cond_rng_) * labels_present_.size());
      const int label = labels_present_[std::min(pick, labels_present_.size() - 1)];
      if (labels_.is_neutral(label)) {
        EmotionCode code{uniform(cond_rng_, 0.0, kTwoPi), uniform(cond_rng_, 0.0, t)};
        rows.push_back(torch::tensor({code.x(), code.y()}, opts));
        out.codes.push_back(code);
        rhos[i] = code.rho;
        targets[i] = label;
      } else {
        const double rho = uniform(cond_rng_, t, 1.0);
        const auto idx = table.direction_index(label);
        if (differentiable) {
          auto theta = directions_.index({idx});
          rows.push_back(torch::stack({rho * theta.cos(), rho * theta.sin()}));
        } else {
          EmotionCode code{table.angles[idx], rho};
          rows.push_back(torch::tensor({code.x(), code.y()}, opts));
        }
        out.codes.push_back(EmotionCode{table.angles[idx], rho});
        rhos[i] = rho;
        targets[i] = label;
      }
    } else {
      EmotionCode code{uniform(cond_rng_, 0.0, kTwoPi), uniform01(cond_rng_)};
      rows.push_back(torch::tensor({code.x(), code.y()}, opts));
      out.codes.push_back(code);
      rhos[i] = code.rho;
      targets[i] = label_for_code(table, code);
    }
  }

  out.codes_xy = torch::stack(rows);
  out.rho = torch::from_blob(rhos.data(), {batch_size}, torch::kFloat64).clone().to(opts.dtype());
  out.targets =
      torch::from_blob(targets.data(), {batch_size}, torch::kInt64).clone();
  return out;
}

void TrainState::check_finite(const torch::Tensor& value, const char* term) const {
  if (!value.isfinite().all().item<bool>()) {
    throw TrainingAborted("non-finite " + std::string(term) + " loss at step " +
                          std::to_string(step_));
  }
}

LossBreakdown TrainState::discriminator_step(const Batch& batch) {
  validate_image_batch(batch.images, model_config_.image_size);
  auto real = batch.images.to(model_config_.dtype);
  auto labels = batch.labels.to(torch::kInt64);
  const auto b = real.size(0);

  auto cond = sample_conditions(b, /*differentiable=*/false);
  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    fake = g_->forward(real, cond.codes_xy);
  }

  auto out_real = d_->forward(real);
  auto out_fake = d_->forward(fake);
  auto adv = wasserstein_gap(out_real.src, out_fake.src);
  auto cls_real = target_cross_entropy(out_real.cls_logits, labels);
  auto info = coordinate_regression(out_fake.coor, cond.codes_xy);
  auto eps = torch::rand({b}, gp_gen_, torch::TensorOptions().dtype(real.dtype()));
  auto gp = gradient_penalty([this](const torch::Tensor& x) { return d_->src(x); }, real,
                             fake, eps);
  check_finite(adv, "adv");
  check_finite(cls_real, "cls_real");
  check_finite(info, "info");
  check_finite(gp, "gp");

  auto total = total_discriminator_loss(adv, cls_real, info, gp, train_config_.weights);
  check_finite(total, "total_d");

  opt_g_->zero_grad();
  opt_d_->zero_grad();
  total.backward();
  opt_d_->step();

  LossBreakdown bd;
  bd.adv = adv.item<double>();
  bd.cls_real = cls_real.item<double>();
  bd.info = info.item<double>();
  bd.gp = gp.item<double>();
  bd.total_d = total.item<double>();
  return bd;
}

LossBreakdown TrainState::generator_step(const Batch& batch) {
  validate_image_batch(batch.images, model_config_.image_size);
  auto real = batch.images.to(model_config_.dtype);
  const auto b = real.size(0);

  auto cond = sample_conditions(b, /*differentiable=*/true);
  auto fake = g_->forward(real, cond.codes_xy);
  auto out_fake = d_->forward(fake);

  torch::Tensor src_real, recovered;
  {
    torch::NoGradGuard no_grad;
    auto out_real = d_->forward(real);
    src_real = out_real.src;
    recovered = out_real.coor;
  }

  auto adv = src_real.mean() - out_fake.src.mean();
  auto cls_fake = target_cross_entropy(out_fake.cls_logits, cond.targets);
  auto info = coordinate_regression(out_fake.coor, cond.codes_xy);
  auto rho = intensity_regression(out_fake.coor, cond.rho, neutral_threshold_);
  auto cycled = g_->forward(fake, recovered);
  auto rec = cycle_l1(real, cycled);
  check_finite(adv, "adv");
  check_finite(cls_fake, "cls_fake");
  check_finite(info, "info");
  check_finite(rho, "rho");
  check_finite(rec, "rec");

  auto total = total_generator_loss(adv, cls_fake, rec, info, rho, train_config_.weights);
  check_finite(total, "total_g");

  opt_g_->zero_grad();
  opt_d_->zero_grad();
  total.backward();
  opt_g_->step();
  wrap_directions();

  LossBreakdown bd;
  bd.adv = adv.item<double>();
  bd.cls_fake = cls_fake.item<double>();
  bd.info = info.item<double>();
  bd.rho = rho.item<double>();
  bd.rec = rec.item<double>();
  bd.total_g = total.item<double>();
  return bd;
}

void TrainState::wrap_directions() {
  torch::NoGradGuard no_grad;
  auto wrapped = directions_ - (directions_ / kTwoPi).floor() * kTwoPi;
  directions_.copy_(wrapped);
}

std::uint64_t TrainState::generator_digest() const { return parameter_digest(*g_); }
std::uint64_t TrainState::discriminator_digest() const { return parameter_digest(*d_); }

std::uint64_t TrainState::directions_digest() const {
  auto flat = directions_.detach().contiguous();
  return fnv1a64(flat.data_ptr(), flat.numel() * flat.element_size());
}

namespace {

void merge_breakdown(LossBreakdown& into, const LossBreakdown& from) {
  auto take = [](std::optional<double>& dst, const std::optional<double>& src) {
    if (src) dst = src;
  };
  take(into.adv, from.adv);
  take(into.cls_real, from.cls_real);
  take(into.cls_fake, from.cls_fake);
  take(into.info, from.info);
  take(into.rho, from.rho);
  take(into.rec, from.rec);
  take(into.gp, from.gp);
  take(into.total_d, from.total_d);
  take(into.total_g, from.total_g);
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainTrace::write_csv(const std::string& path, const LabelSet& labels) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write trace: " + path);
  out << "step,term,value\n";
  for (const auto& rec : steps) {
    auto emit = [&](const char* term, const std::optional<double>& v) {
      if (v) out << rec.step << ',' << term << ',' << format_value(*v) << '\n';
    };
    emit("adv", rec.losses.adv);
    emit("cls_real", rec.losses.cls_real);
    emit("cls_fake", rec.losses.cls_fake);
    emit("info", rec.losses.info);
    emit("rho", rec.losses.rho);
    emit("rec", rec.losses.rec);
    emit("gp", rec.losses.gp);
    emit("total_d", rec.losses.total_d);
    emit("total_g", rec.losses.total_g);
    std::size_t k = 0;
    for (int id : labels.emotion_ids()) {
      out << rec.step << ",theta_" << labels.name(id) << ','
          << format_value(rec.angles[k++]) << '\n';
    }
  }
  if (!out.good()) throw IoError("failed writing trace: " + path);
}

TrainTrace train(const ModelConfig& model_config, const TrainConfig& train_config,
                 const LabelSet& labels, BatchSource& data, const std::string& out_dir) {
  model_config.validate();
  train_config.validate();
  if (data.size() == 0) throw ValidationError("data source is empty");
  if (train_config.deterministic) torch::set_num_threads(1);

  fs::create_directories(out_dir);
  TrainState state(model_config, train_config, labels);
  state.set_labels_present(data.labels_present());

  auto ckpt_path = [&](std::int64_t step) {
    return (fs::path(out_dir) / ("step_" + std::to_string(step) + ".ckpt")).string();
  };
  state.save(ckpt_path(0));

  TrainTrace trace;
  for (std::int64_t step = 1; step <= train_config.total_steps; ++step) {
    LossBreakdown merged;
    for (int k = 0; k < train_config.n_critic; ++k) {
      merge_breakdown(merged, state.discriminator_step(data.next()));
    }
    merge_breakdown(merged, state.generator_step(data.next()));
    state.advance_step();
    trace.steps.push_back({step, merged, state.direction_table().angles});
    if (step % train_config.checkpoint_every == 0) {
      state.save(ckpt_path(step));
    }
  }
  if (train_config.total_steps > 0 &&
      train_config.total_steps % train_config.checkpoint_every != 0) {
    state.save(ckpt_path(train_config.total_steps));
  }
  return trace;
}

void TrainState::save(const std::string& path) const { save_checkpoint(*this, path); }
TrainState TrainState::load(const std::string& path) { return load_checkpoint(path); }
TrainState TrainState::load(const std::string& path, const ModelConfig& expected) {
  return load_checkpoint(path, expected);
}

}  // namespace ganmut
