#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include <torch/torch.h>

#include "common.hpp"

namespace sagan::losses {

struct LossWeights {
  double lambda_id = 10.0;
  double lambda_rec = 10.0;
  double lambda_gp = 10.0;

  void validate() const;
};

struct LossBreakdown {
  double id = 0, rec = 0, g_adv = 0, g_total = 0;
  double d_adv = 0, gp = 0, d_total = 0;

  /// One JSON object on a single line: iteration plus the seven fields.
  std::string to_log_line(std::int64_t iteration) const;
};

/// Per-sample scalar critic, x -> [B].
using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

/// Mean over the batch of each image's mean absolute difference.
torch::Tensor identity_loss(const torch::Tensor& restored_normals, const torch::Tensor& normals);

/// Mean over the batch of each image's root-mean-square difference. Element i
/// of the first argument must derive from element i of the second.
torch::Tensor restoration_loss(const torch::Tensor& restored_pseudo, const torch::Tensor& normals);

torch::Tensor generator_adv_loss(const torch::Tensor& critic_scores_on_fake);

/// eps * real + (1 - eps) * fake, one eps per sample.
torch::Tensor interpolate_xhat(const torch::Tensor& real, const torch::Tensor& fake, const torch::Tensor& eps);
torch::Tensor interpolate_xhat(const torch::Tensor& real, const torch::Tensor& fake, torch::Generator& gen);

/// Mean of (||grad_x D(x_hat)||_2 - 1)^2. Keeps the graph so the penalty can be
/// differentiated with respect to the critic parameters.
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& x_hat);

struct CriticTerms {
  torch::Tensor d_adv, gp, total;
};

/// mean D(fake) - mean D(real) + lambda_gp * gp. `fake` is treated as a constant.
CriticTerms discriminator_loss(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               const LossWeights& weights, torch::Generator& gen);

/// g_adv + lambda_id * id + lambda_rec * rec.
double generator_total(double id, double rec, double g_adv, const LossWeights& weights);
torch::Tensor generator_total(const torch::Tensor& id, const torch::Tensor& rec, const torch::Tensor& g_adv,
                              const LossWeights& weights);

}  // namespace sagan::losses
