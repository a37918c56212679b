#include "discriminator.hpp"

#include <algorithm>

namespace nn = torch::nn;

namespace sagan::discriminator {

void CriticConfig::validate() const {
  require(input_size > 0 && channels_in > 0 && base_width > 0, ErrorKind::Usage, "critic sizes must be positive");
  require(num_layers >= 1, ErrorKind::Usage, "critic num_layers must be >= 1");
  require(input_size % (1 << (num_layers - 1)) == 0, ErrorKind::Usage,
          "critic input_size must be divisible by 2^(num_layers - 1)");
  require(receptive_field() < input_size, ErrorKind::Usage,
          "critic receptive field (" + std::to_string(receptive_field()) + ") must be smaller than the image");
}

int CriticConfig::receptive_field() const {
  int rf = 1;
  for (int i = 0; i < num_layers - 1; ++i) rf = (rf - 1) * 2 + 4;
  return rf;
}

PatchCriticImpl::PatchCriticImpl(CriticConfig config) : config_(config) {
  config_.validate();
  features_ = nn::Sequential();
  int in = config_.channels_in;
  for (int i = 0; i < config_.num_layers - 1; ++i) {
    const int out = config_.base_width << std::min(i, 3);
    features_->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    features_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
  }
  register_module("features", features_);
  output_ = register_module("output", nn::Conv2d(nn::Conv2dOptions(in, 1, 1)));
}

CriticOutput PatchCriticImpl::criticize(const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(1) == config_.channels_in && x.size(2) == config_.input_size &&
              x.size(3) == config_.input_size,
          ErrorKind::Usage, "critic input does not match the configured shape");
  auto h = features_->is_empty() ? x : features_->forward(x);
  auto map = output_(h);
  return {map.mean({1, 2, 3}), map};
}

}  // namespace sagan::discriminator
