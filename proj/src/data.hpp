#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "common.hpp"

namespace sagan::data {

enum class Label { Normal, Abnormal, Unknown };

// Manifest rows name a pool; repartitions name the split a record was drawn into.
enum class Split { NormalTrain, UnlabeledPool, UnlabeledTrain, Test };

std::string_view to_string(Label label);
std::string_view to_string(Split split);
Label parse_label(std::string_view token);
Split parse_split(std::string_view token);

struct ImageRecord {
  std::string id;
  std::filesystem::path path;
  Label label = Label::Unknown;
  Split split = Split::Test;
  // Ground truth of an unlabeled_train record; only used for ratio
  // construction and audit, never handed to training.
  Label hidden_label = Label::Unknown;
};

std::vector<ImageRecord> load_manifest(const std::filesystem::path& path);

struct SplitSizes {
  std::size_t normal_train = 0;
  std::size_t unlabeled = 0;
  std::size_t test_normal = 0;
  std::size_t test_abnormal = 0;
};

struct DatasetRepartition {
  std::vector<ImageRecord> normal_train;
  std::vector<ImageRecord> unlabeled_train;
  std::vector<ImageRecord> test;
  double anomaly_ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t hidden_abnormal_count() const;
  const std::vector<ImageRecord>& split(Split s) const;
};

/// Number of hidden-abnormal records placed in an unlabeled set of the given
/// size; rounds down so the requested ratio is never exceeded.
std::size_t abnormal_quota(double anomaly_ratio, std::size_t unlabeled_size);

DatasetRepartition build_repartition(const std::vector<ImageRecord>& records, double anomaly_ratio,
                                     const SplitSizes& sizes, std::uint64_t seed);

void save_repartition(const DatasetRepartition& rep, const std::filesystem::path& path);
DatasetRepartition load_repartition(const std::filesystem::path& path);

/// Linear intensity map [0, max_value] -> [-1, 1] and back.
torch::Tensor normalize_intensity(const torch::Tensor& raw, double max_value);
torch::Tensor denormalize_intensity(const torch::Tensor& normalized, double max_value);

/// Decodes an image file into a [channels, size, size] float tensor in [-1, 1].
/// Multi-channel inputs are reduced to luminance when channels == 1; bilinear
/// resampling when the stored size differs.
torch::Tensor load_image(const std::filesystem::path& path, int size, int channels = 1);
torch::Tensor load_image(const ImageRecord& record, int size, int channels = 1);

/// Stacks every record of a split into one [N, C, size, size] tensor.
torch::Tensor load_images(const std::vector<ImageRecord>& records, int size, int channels = 1);

/// Writes a [C, H, W] tensor in [-1, 1] as an 8-bit PNG.
void save_image(const torch::Tensor& image, const std::filesystem::path& path);

/// Index batches for one pass over `count` items. The order is a pure function
/// of (seed, epoch); the last batch may be short.
std::vector<std::vector<std::size_t>> batch_order(std::size_t count, std::size_t batch_size,
                                                  std::uint64_t seed, std::uint64_t epoch,
                                                  bool shuffle = true);

/// Materialized batches of one split for one pass.
std::vector<torch::Tensor> batch_iter(const DatasetRepartition& rep, Split split, std::size_t batch_size,
                                      std::uint64_t seed, std::uint64_t epoch, int size, int channels = 1);

/// Endless batch stream over a preloaded image bank; rolls into the next epoch
/// when a pass is exhausted. The cursor is serializable for checkpoints.
class BatchStream {
 public:
  struct Cursor {
    std::uint64_t epoch = 0;
    std::size_t batch = 0;
  };

  BatchStream() = default;
  BatchStream(torch::Tensor bank, std::size_t batch_size, std::uint64_t seed);

  torch::Tensor next();
  std::size_t size() const { return bank_.defined() ? static_cast<std::size_t>(bank_.size(0)) : 0; }
  const Cursor& cursor() const { return cursor_; }
  void set_cursor(const Cursor& c);

 private:
  void refresh_order();

  torch::Tensor bank_;
  std::size_t batch_size_ = 1;
  std::uint64_t seed_ = 0;
  Cursor cursor_;
  std::vector<std::vector<std::size_t>> order_;
};

}  // namespace sagan::data
