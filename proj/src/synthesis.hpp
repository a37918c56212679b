#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include <torch/torch.h>

#include "common.hpp"

namespace sagan::synthesis {

struct SynthParams {
  // Rectangle side, as a fraction of the image side.
  std::pair<double, double> patch_fraction_range{0.1, 0.4};
  std::pair<double, double> alpha_range{0.2, 1.0};

  void validate() const;
};

struct Rect {
  std::int64_t top = 0, left = 0, height = 0, width = 0;
};

struct PseudoAnomaly {
  torch::Tensor image;  // [C, H, W]
  torch::Tensor mask;   // [H, W], 1 inside the corrupted rectangle
  Rect rect;
  double alpha = 0.0;
  std::string source_id;
};

/// Foreign patch interpolation: inside a random rectangle the output is
/// (1 - alpha) * source + alpha * donor; outside it is the source untouched.
PseudoAnomaly synthesize_pseudo(const torch::Tensor& source, const torch::Tensor& donor, const SynthParams& params,
                                Rng& rng);

struct PairedBatch {
  torch::Tensor pseudo;   // [B, C, H, W]; element i derives from source i
  torch::Tensor source;   // the unmodified normals
  torch::Tensor masks;    // [B, H, W]
  std::vector<double> alphas;
};

/// Corrupts every image of a normal batch with a donor taken from the next
/// index (wrapping). A batch of one has no foreign donor, so it passes through.
PairedBatch paired_batch(const torch::Tensor& normals, const SynthParams& params, Rng& rng);

}  // namespace sagan::synthesis
