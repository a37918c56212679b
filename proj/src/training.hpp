#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <torch/torch.h>

#include "common.hpp"
#include "data.hpp"
#include "discriminator.hpp"
#include "generator.hpp"
#include "losses.hpp"
#include "synthesis.hpp"

namespace sagan::training {

struct TrainConfig {
  double lr = 5e-5;
  int batch_size = 64;
  std::int64_t max_iterations = 100000;  // generator steps
  std::int64_t lr_decay_every = 1000;
  double lr_decay_factor = 0.95;
  int d_steps_per_g_step = 2;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 1000;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  losses::LossWeights weights;
  // false reproduces the no-unlabeled ablation: the critic sees restored
  // pseudo-anomalies as fakes.
  bool include_unlabeled = true;

  void validate() const;
};

/// lr * factor^floor(iteration / decay_every).
double lr_at(const TrainConfig& config, std::int64_t iteration);

struct ModelConfig {
  generator::GeneratorConfig generator;
  discriminator::CriticConfig critic;
};

/// Everything that evolves during optimization. Owned by a single thread.
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, synthesis::SynthParams synth, torch::Tensor normal_bank,
          torch::Tensor unlabeled_bank);

  /// One critic update on a normal batch and a batch whose restorations act as
  /// fakes (unlabeled images, or pseudo-anomalies of `normals` when unlabeled
  /// data is disabled).
  losses::LossBreakdown step_discriminator(const torch::Tensor& normals, const torch::Tensor& unlabeled);

  /// One generator update: identity on normals, restoration on their
  /// pseudo-anomalies, adversarial on the fakes.
  losses::LossBreakdown step_generator(const torch::Tensor& normals, const torch::Tensor& unlabeled);

  /// d_steps_per_g_step critic steps followed by one generator step, each
  /// drawing fresh batches.
  losses::LossBreakdown iterate();

  std::int64_t iteration() const { return g_steps_; }
  std::int64_t d_steps() const { return d_steps_; }
  std::int64_t g_steps() const { return g_steps_; }
  double lr_current() const { return lr_at(train_, g_steps_); }

  generator::SpatialGenerator& generator() { return generator_; }
  discriminator::PatchCritic& critic() { return critic_; }
  const TrainConfig& train_config() const { return train_; }
  const ModelConfig& model_config() const { return model_; }

  /// Writes the full state into `dir` (created if needed).
  void save(const std::filesystem::path& dir, const std::string& run_config_json) const;
  /// Restores the state written by save(); configs must match.
  void load(const std::filesystem::path& dir);

 private:
  void apply_lr();
  torch::Tensor fake_source(const torch::Tensor& normals, const torch::Tensor& unlabeled);

  ModelConfig model_;
  TrainConfig train_;
  synthesis::SynthParams synth_;
  generator::SpatialGenerator generator_{nullptr};
  discriminator::PatchCritic critic_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
  torch::Generator gen_rng_;
  Rng synth_rng_;
  data::BatchStream normal_stream_, unlabeled_stream_;
  std::int64_t d_steps_ = 0, g_steps_ = 0;
  losses::LossBreakdown last_d_;
};

/// Checkpoint file holding one module's parameters and the JSON of the
/// config that built it.
void save_module(const torch::nn::Module& module, const std::string& config_json, const std::filesystem::path& path);
/// Fails with ErrorKind::Checkpoint when the stored config differs.
void load_module(torch::nn::Module& module, const std::string& expected_config_json, const std::filesystem::path& path);
std::string read_module_config(const std::filesystem::path& path);

std::string to_json(const generator::GeneratorConfig& c);
std::string to_json(const discriminator::CriticConfig& c);
generator::GeneratorConfig generator_config_from_json(const std::string& s);

std::filesystem::path checkpoint_dir(const std::filesystem::path& out, std::int64_t iteration);

struct RunOptions {
  std::filesystem::path output_dir;
  std::string run_config_json;  // snapshot stored with each checkpoint
  std::optional<std::filesystem::path> resume_from;
  std::optional<std::int64_t> stop_at;  // overrides max_iterations
  std::function<void(std::int64_t, const losses::LossBreakdown&)> on_iteration;
};

struct RunResult {
  std::int64_t iterations = 0;
  std::int64_t d_steps = 0;
  std::vector<std::filesystem::path> checkpoints;
};

/// Loads the training splits, optimizes to max_iterations generator steps,
/// appends one loss line per generator step to `loss_log.jsonl` and writes
/// `ckpt_<iteration>/` every checkpoint_every steps and at the end.
RunResult run_training(const ModelConfig& model, const TrainConfig& train, const synthesis::SynthParams& synth,
                       const data::DatasetRepartition& rep, int channels, const RunOptions& options);

}  // namespace sagan::training
