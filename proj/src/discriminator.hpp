#pragma once

#include <torch/torch.h>

#include "common.hpp"

namespace sagan::discriminator {

struct CriticConfig {
  int input_size = 64;
  int channels_in = 1;
  // Total conv layers: (num_layers - 1) stride-2 4x4 convs, then a 1x1 projection.
  int num_layers = 4;
  int base_width = 64;

  void validate() const;
  int receptive_field() const;
};

struct CriticOutput {
  torch::Tensor score;      // [B]
  torch::Tensor score_map;  // [B, 1, h, w]
};

/// Patch critic with an unbounded linear output, no normalization layers.
class PatchCriticImpl : public torch::nn::Module {
 public:
  explicit PatchCriticImpl(CriticConfig config);

  CriticOutput criticize(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x) { return criticize(x).score; }

  torch::nn::Conv2d& output_layer() { return output_; }
  const CriticConfig& config() const { return config_; }

 private:
  CriticConfig config_;
  torch::nn::Sequential features_{nullptr};
  torch::nn::Conv2d output_{nullptr};
};
TORCH_MODULE(PatchCritic);

}  // namespace sagan::discriminator
