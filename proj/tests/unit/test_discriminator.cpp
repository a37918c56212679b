#include <doctest.h>

#include "discriminator.hpp"
#include "oracles.hpp"

using namespace sagan;
using namespace sagan::discriminator;

namespace {

CriticConfig small(int size = 16, int layers = 3) {
  CriticConfig c;
  c.input_size = size;
  c.num_layers = layers;
  c.base_width = 4;
  return c;
}

}  // namespace

TEST_SUITE("discriminator") {

TEST_CASE("all-zero parameters score zero") {
  PatchCritic d(small());
  {
    torch::NoGradGuard ng;
    for (auto& p : d->parameters()) p.zero_();
  }
  auto s = d->forward(torch::randn({5, 1, 16, 16}));
  CHECK(s.sizes() == torch::IntArrayRef({5}));
  CHECK(torch::all(s == 0.f).item<bool>());
}

TEST_CASE("doubling the output layer doubles the score") {
  PatchCritic d(small());
  auto x = torch::randn({3, 1, 16, 16});
  auto before = d->forward(x);
  {
    torch::NoGradGuard ng;
    d->output_layer()->weight.mul_(2);
    d->output_layer()->bias.mul_(2);
  }
  CHECK(torch::allclose(d->forward(x), before * 2, 1e-5, 1e-6));
}

TEST_CASE("score is the mean of the patch map") {
  PatchCritic d(small(32, 3));
  auto out = d->criticize(torch::randn({2, 1, 32, 32}));
  CHECK(out.score_map.sizes() == torch::IntArrayRef({2, 1, 8, 8}));
  CHECK(torch::allclose(out.score, out.score_map.mean({1, 2, 3})));
}

TEST_CASE("receptive field stays below the image size") {
  CHECK(small(64, 4).receptive_field() == 22);
  CHECK(small(8, 2).receptive_field() == 4);
  CHECK_THROWS_AS(small(8, 3).validate(), Error);
  CHECK_NOTHROW(CriticConfig{}.validate());
  CHECK_THROWS_AS(PatchCritic(small())->forward(torch::randn({1, 1, 8, 8})), Error);
}

TEST_CASE("input gradient matches finite differences") {
  torch::manual_seed(2);
  PatchCritic d(small(8, 2));
  d->to(torch::kFloat64);
  auto x = torch::randn({2, 1, 8, 8}, torch::kFloat64).requires_grad_(true);
  auto s = d->forward(x).sum();
  auto grad = torch::autograd::grad({s}, {x})[0];
  CHECK(torch::isfinite(grad).all().item<bool>());
  auto target = x.detach().clone();
  auto r = oracle::finite_difference([&] { return d->forward(target).sum().item<double>(); }, target, grad, 128, 1);
  CHECK(r.norm_rel < 1e-3);
  CHECK(r.checked == 128);
}

TEST_CASE("scores are unbounded") {
  torch::manual_seed(3);
  PatchCritic d(small());
  auto x = torch::randn({1, 1, 16, 16});
  // Leaky ReLU layers are positively homogeneous, so far from the origin the
  // score grows linearly with the input scale.
  const double a = std::fabs(d->forward(x * 1e4).item<float>());
  const double b = std::fabs(d->forward(x * 1e6).item<float>());
  CHECK(a > 1.0);
  CHECK(b / a == doctest::Approx(100).epsilon(0.01));
}

}  // TEST_SUITE
