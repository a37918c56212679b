#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "common.hpp"
#include "data.hpp"
#include "generator.hpp"

namespace sagan::evaluation {

enum class ScoreMode { Mean, Max, TopkMean };

ScoreMode parse_score_mode(const std::string& s);
std::string to_string(ScoreMode m);

struct EvalConfig {
  ScoreMode score_mode = ScoreMode::Mean;
  double topk_fraction = 0.05;  // only for TopkMean
  int batch_size = 64;
};

/// Per-pixel channel-mean |x' - x|, shape [H, W].
torch::Tensor heatmap(const torch::Tensor& x, const torch::Tensor& x_prime);

/// Reduction of the heatmap to a scalar; mean by default.
double anomaly_score(const torch::Tensor& x, const torch::Tensor& x_prime, ScoreMode mode = ScoreMode::Mean,
                     double topk_fraction = 0.05);

/// Mann-Whitney estimate: P(s_abnormal > s_normal) + 0.5 * P(tie). Labels are
/// 1 for abnormal, 0 for normal.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Area under the precision-recall step curve with abnormal as the positive
/// class. Tied scores form one threshold (one recall step).
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

struct ScoreEntry {
  std::string id;
  double score = 0;
  data::Label label = data::Label::Normal;
};

struct ScoreReport {
  std::vector<ScoreEntry> entries;
  double auc = 0;
  double ap = 0;
  std::string config_fingerprint;
  std::int64_t checkpoint_iteration = 0;
  ScoreMode score_mode = ScoreMode::Mean;

  /// Recomputes AUC and AP from the entries.
  void finalize();
};

/// Restores every test record in infer mode and scores it.
ScoreReport evaluate(generator::SpatialGenerator& gen, const std::vector<data::ImageRecord>& test,
                     const EvalConfig& config, int channels = 1);

/// Restores a [B, C, H, W] batch in infer mode, chunked by batch_size.
torch::Tensor restore(generator::SpatialGenerator& gen, const torch::Tensor& images, int batch_size);

void write_report(const ScoreReport& report, const std::filesystem::path& path);
ScoreReport read_report(const std::filesystem::path& path);

/// Writes `<id>_heat.png` (per-image min-max scaled to 8 bits) and
/// `<id>_heat.json` holding the raw values and the (min, max) used.
void export_heatmap(const std::string& id, const torch::Tensor& heat, const std::filesystem::path& out_dir);

}  // namespace sagan::evaluation
