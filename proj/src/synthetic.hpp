#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>

#include <torch/torch.h>

namespace sagan::synthetic {

// Desk-scale stand-in for radiograph datasets: every image shares one smooth
// "anatomy" background plus its own mild noise; abnormal images add 1-3 bright
// elliptical blobs.
struct SyntheticSpec {
  std::size_t n_normal = 0;
  std::size_t n_abnormal = 0;
  int size = 64;
  std::uint64_t seed = 0;
  // Pool assignment written to the manifest. Unset counts default to 20% of
  // each class for test and half of the remaining normals for normal_train.
  std::optional<std::size_t> test_normal, test_abnormal, normal_train;
  double noise_sigma = 0.04;
  double blob_intensity = 0.75;
};

struct SyntheticImage {
  torch::Tensor image;      // [1, H, W] in [-1, 1], float64
  torch::Tensor base;       // background + noise, no blobs
  torch::Tensor blob_mask;  // [H, W], 1 on blob pixels
};

torch::Tensor synthetic_background(int size);

SyntheticImage render_synthetic(const SyntheticSpec& spec, std::size_t index, bool abnormal);

struct SyntheticSummary {
  std::size_t normal_train = 0, unlabeled_normal = 0, unlabeled_abnormal = 0, test_normal = 0, test_abnormal = 0;
  std::filesystem::path manifest;
};

/// Writes `images/*.png` and `manifest.csv` under `out_dir`.
SyntheticSummary make_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace sagan::synthetic
