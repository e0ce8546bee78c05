#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ganmut/data.hpp"
#include "ganmut/emotion_space.hpp"
#include "ganmut/losses.hpp"
#include "ganmut/networks.hpp"

namespace ganmut {

struct TrainConfig {
  std::int64_t total_steps = 0;
  int n_critic = 5;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  LossWeights weights;
  int batch_size = 16;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 1000;
  /// Share of condition draws taken along labeled directions; the rest explore
  /// the full gamut.
  double labeled_fraction = 0.5;
  /// Single-threaded substrate execution so traces reproduce bit-for-bit.
  bool deterministic = true;

  void validate() const;
};

/// Condition batch as consumed by one training step. For generator steps the
/// labeled rows of `codes_xy` are differentiable functions of the direction
/// parameters.
struct ConditionBatch {
  std::vector<EmotionCode> codes;
  torch::Tensor codes_xy;  // (B, 2)
  torch::Tensor rho;       // (B,)
  torch::Tensor targets;   // (B,) int64 decoded labels
};

struct StepRecord {
  std::int64_t step = 0;
  LossBreakdown losses;
  std::vector<double> angles;
};

struct TrainTrace {
  std::vector<StepRecord> steps;
  /// Long-format CSV `step,term,value`; direction angles appear as
  /// `theta_<label>` terms.
  void write_csv(const std::string& path, const LabelSet& labels) const;
};

/// Holds the jointly optimized state: generator, discriminator, learnable
/// emotion directions, optimizers and the step counter. Single-writer: steps
/// mutate exactly their declared parameter set.
class TrainState {
 public:
  TrainState(const ModelConfig& model_config, const TrainConfig& train_config,
             const LabelSet& labels);

  /// One critic update. Touches only discriminator parameters.
  LossBreakdown discriminator_step(const Batch& batch);
  /// One generator update. Touches generator parameters and direction angles,
  /// which are re-wrapped into [0, 2pi) afterwards.
  LossBreakdown generator_step(const Batch& batch);

  /// Samples the mixed labeled/gamut condition batch for one step.
  ConditionBatch sample_conditions(std::int64_t batch_size, bool differentiable);

  Generator& generator() { return g_; }
  Discriminator& discriminator() { return d_; }
  DirectionTable direction_table() const;
  std::int64_t step() const { return step_; }
  const ModelConfig& model_config() const { return model_config_; }
  const TrainConfig& train_config() const { return train_config_; }
  const LabelSet& labels() const { return labels_; }

  /// Labels eligible for labeled condition draws (defaults to every label).
  void set_labels_present(std::vector<int> ids);

  std::uint64_t generator_digest() const;
  std::uint64_t discriminator_digest() const;
  std::uint64_t directions_digest() const;

  /// The training loop owns the step counter.
  void advance_step() { ++step_; }

  void save(const std::string& path) const;
  static TrainState load(const std::string& path);
  /// Load with a shape expectation; mismatch raises ConfigError.
  static TrainState load(const std::string& path, const ModelConfig& expected);

 private:
  friend TrainState load_checkpoint_impl(const std::string&,
                                         const std::optional<ModelConfig>&);
  friend void save_checkpoint(const TrainState&, const std::string&);
  void wrap_directions();
  void check_finite(const torch::Tensor& value, const char* term) const;

  ModelConfig model_config_;
  TrainConfig train_config_;
  LabelSet labels_;
  Generator g_{nullptr};
  Discriminator d_{nullptr};
  torch::Tensor directions_;  // (M-1,) learnable angles
  double neutral_threshold_ = 0.2;
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
  std::int64_t step_ = 0;
  std::mt19937_64 cond_rng_;
  torch::Generator gp_gen_;
  std::vector<int> labels_present_;
};

/// Runs the n_critic schedule for `total_steps` steps, checkpointing into
/// `out_dir` (`step_<N>.ckpt`). An initial checkpoint is always written. On a
/// non-finite loss the run aborts and the last checkpoint is retained.
TrainTrace train(const ModelConfig& model_config, const TrainConfig& train_config,
                 const LabelSet& labels, BatchSource& data, const std::string& out_dir);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);
TrainState load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace ganmut
