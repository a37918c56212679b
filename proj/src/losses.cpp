#include "losses.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

namespace sagan::losses {

void LossWeights::validate() const {
  require(lambda_id >= 0 && lambda_rec >= 0 && lambda_gp >= 0, ErrorKind::Usage, "loss weights must be non-negative");
}

std::string LossBreakdown::to_log_line(std::int64_t iteration) const {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["id"] = id;
  j["rec"] = rec;
  j["g_adv"] = g_adv;
  j["g_total"] = g_total;
  j["d_adv"] = d_adv;
  j["gp"] = gp;
  j["d_total"] = d_total;
  return j.dump();
}

namespace {

void require_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  require(a.sizes() == b.sizes(), ErrorKind::Usage, std::string(what) + ": shape mismatch");
  require(a.dim() >= 1 && a.size(0) > 0, ErrorKind::Usage, std::string(what) + ": empty batch");
}

// sqrt with a zero (not NaN) derivative at 0.
torch::Tensor safe_sqrt(const torch::Tensor& v) {
  return torch::where(v > 0, torch::sqrt(v.clamp_min(1e-30)), torch::zeros_like(v));
}

}  // namespace

torch::Tensor identity_loss(const torch::Tensor& restored_normals, const torch::Tensor& normals) {
  require_same(restored_normals, normals, "identity_loss");
  return (restored_normals - normals).abs().flatten(1).mean(1).mean();
}

torch::Tensor restoration_loss(const torch::Tensor& restored_pseudo, const torch::Tensor& normals) {
  require_same(restored_pseudo, normals, "restoration_loss");
  return safe_sqrt((restored_pseudo - normals).square().flatten(1).mean(1)).mean();
}

torch::Tensor generator_adv_loss(const torch::Tensor& critic_scores_on_fake) {
  require(critic_scores_on_fake.numel() > 0, ErrorKind::Usage, "generator_adv_loss: empty batch");
  return -critic_scores_on_fake.mean();
}

torch::Tensor interpolate_xhat(const torch::Tensor& real, const torch::Tensor& fake, const torch::Tensor& eps) {
  require_same(real, fake, "interpolate_xhat");
  require(eps.dim() == 1 && eps.size(0) == real.size(0), ErrorKind::Usage, "interpolate_xhat: one eps per sample");
  std::vector<std::int64_t> shape(real.dim(), 1);
  shape[0] = real.size(0);
  auto e = eps.to(real.options()).view(shape);
  return e * real + (1 - e) * fake;
}

torch::Tensor interpolate_xhat(const torch::Tensor& real, const torch::Tensor& fake, torch::Generator& gen) {
  auto eps = torch::rand({real.size(0)}, gen, torch::TensorOptions().dtype(torch::kFloat64));
  return interpolate_xhat(real, fake, eps);
}

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& x_hat) {
  require(x_hat.dim() >= 1 && x_hat.size(0) > 0, ErrorKind::Usage, "gradient_penalty: empty batch");
  auto x = x_hat.detach().requires_grad_(true);
  auto scores = critic(x);
  require(scores.dim() == 1 && scores.size(0) == x.size(0), ErrorKind::Usage,
          "gradient_penalty: critic must return one score per sample");
  torch::Tensor grad;
  if (scores.requires_grad()) {
    auto grads = torch::autograd::grad({scores.sum()}, {x}, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                       /*create_graph=*/true, /*allow_unused=*/true);
    grad = grads[0];
  }
  // A critic that ignores its input has a zero gradient everywhere.
  if (!grad.defined()) grad = torch::zeros_like(x);
  const auto norms = safe_sqrt(grad.flatten(1).square().sum(1));
  return (norms - 1).square().mean();
}

CriticTerms discriminator_loss(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               const LossWeights& weights, torch::Generator& gen) {
  require(real.size(0) > 0 && fake.size(0) > 0, ErrorKind::Usage, "discriminator_loss: empty batch");
  const auto fake_c = fake.detach();
  CriticTerms t;
  t.d_adv = critic(fake_c).mean() - critic(real).mean();
  // Interpolation needs paired samples; trim to the shorter batch.
  const auto n = std::min(real.size(0), fake_c.size(0));
  auto x_hat = interpolate_xhat(real.narrow(0, 0, n), fake_c.narrow(0, 0, n), gen);
  t.gp = gradient_penalty(critic, x_hat);
  t.total = t.d_adv + weights.lambda_gp * t.gp;
  return t;
}

double generator_total(double id, double rec, double g_adv, const LossWeights& weights) {
  require(std::isfinite(id) && std::isfinite(rec) && std::isfinite(g_adv), ErrorKind::Numeric,
          "generator_total: non-finite loss component");
  return g_adv + weights.lambda_id * id + weights.lambda_rec * rec;
}

torch::Tensor generator_total(const torch::Tensor& id, const torch::Tensor& rec, const torch::Tensor& g_adv,
                              const LossWeights& weights) {
  return g_adv + weights.lambda_id * id + weights.lambda_rec * rec;
}

}  // namespace sagan::losses
