#include "generator.hpp"

#include <algorithm>
#include <bit>

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace sagan::generator {

void GeneratorConfig::validate() const {
  require(input_size > 0 && channels_in > 0 && base_width > 0, ErrorKind::Usage,
          "generator sizes must be positive");
  require(num_levels >= 1 && num_levels <= 8, ErrorKind::Usage, "generator num_levels must be in [1, 8]");
  require(patch_grid_n >= 1, ErrorKind::Usage, "patch_grid_n must be >= 1");
  require(gating_prob >= 0.0 && gating_prob <= 1.0, ErrorKind::Usage, "gating_prob must be in [0, 1]");
  require(input_size % patch_grid_n == 0, ErrorKind::Usage, "input_size must be divisible by patch_grid_n");
  require(input_size % (1 << num_levels) == 0, ErrorKind::Usage, "input_size must be divisible by 2^num_levels");
  if (position_codes) {
    // Codes are appended at every level down to the bottleneck.
    require((input_size >> num_levels) % patch_grid_n == 0, ErrorKind::Usage,
            "input_size / 2^num_levels must be divisible by patch_grid_n when position codes are enabled");
  }
  for (int l : gate_levels)
    require(l >= 0 && l < num_levels, ErrorKind::Usage, "gate level " + std::to_string(l) + " out of range");
}

bool GeneratorConfig::gated(int level) const {
  if (!attention) return false;
  return gate_levels.empty() || std::find(gate_levels.begin(), gate_levels.end(), level) != gate_levels.end();
}

int code_dim(int n) {
  require(n >= 1, ErrorKind::Usage, "patch grid size must be >= 1");
  const auto patches = static_cast<unsigned>(n) * static_cast<unsigned>(n);
  return static_cast<int>(std::bit_width(patches - 1)) + 1;
}

PositionalCodeTable positional_codes(int n) {
  PositionalCodeTable t;
  t.n = n;
  t.dim = code_dim(n);
  t.codes.resize(static_cast<std::size_t>(n) * n);
  for (std::size_t k = 0; k < t.codes.size(); ++k) {
    auto& code = t.codes[k];
    code.resize(t.dim);
    for (int b = 0; b < t.dim; ++b) code[t.dim - 1 - b] = static_cast<std::uint8_t>((k >> b) & 1U);
  }
  return t;
}

torch::Tensor code_planes(const PositionalCodeTable& table, std::int64_t height, std::int64_t width,
                          const torch::TensorOptions& options) {
  require(height % table.n == 0 && width % table.n == 0, ErrorKind::Usage,
          "feature size " + std::to_string(height) + "x" + std::to_string(width) + " is not divisible by the patch grid " +
              std::to_string(table.n));
  auto grid = torch::empty({table.dim, table.n, table.n}, torch::kFloat64);
  auto acc = grid.accessor<double, 3>();
  for (int r = 0; r < table.n; ++r)
    for (int c = 0; c < table.n; ++c)
      for (int b = 0; b < table.dim; ++b) acc[b][r][c] = table.codes[static_cast<std::size_t>(r) * table.n + c][b];
  return grid.repeat_interleave(height / table.n, 1).repeat_interleave(width / table.n, 2).to(options);
}

torch::Tensor append_position_channels(const torch::Tensor& features, const PositionalCodeTable& table) {
  require(features.dim() == 3 || features.dim() == 4, ErrorKind::Usage, "features must be [C,H,W] or [B,C,H,W]");
  const auto h = features.size(-2), w = features.size(-1);
  auto planes = code_planes(table, h, w, features.options());
  if (features.dim() == 3) return torch::cat({features, planes}, 0);
  return torch::cat({features, planes.unsqueeze(0).expand({features.size(0), table.dim, h, w})}, 1);
}

AttentionGateImpl::AttentionGateImpl(int f_channels, int g_channels, int inter_channels) {
  c1 = register_module("c1", nn::Conv2d(nn::Conv2dOptions(f_channels, inter_channels, 1)));
  c2 = register_module("c2", nn::Conv2d(nn::Conv2dOptions(g_channels, inter_channels, 1)));
  c3 = register_module("c3", nn::Conv2d(nn::Conv2dOptions(inter_channels, 1, 1)));
}

GateOutput AttentionGateImpl::forward(const torch::Tensor& f, const torch::Tensor& g) {
  require(f.size(-1) == g.size(-1) && f.size(-2) == g.size(-2), ErrorKind::Usage,
          "attention gate inputs differ in spatial size");
  auto alpha = torch::sigmoid(c3(torch::relu(c1(f) + c2(g))));
  return {alpha * g, alpha};
}

torch::Tensor gated_shortcut(const torch::Tensor& residual, const torch::Tensor& identity, const torch::Tensor& delta) {
  require(residual.sizes() == identity.sizes(), ErrorKind::Usage, "gated_shortcut shape mismatch");
  require(delta.dim() == 1 && delta.size(0) == residual.size(0), ErrorKind::Usage, "delta must hold one value per sample");
  auto d = delta.to(residual.options()).view({-1, 1, 1, 1});
  return residual * d + (1 - d) * identity;
}

torch::Tensor draw_delta(std::int64_t batch, double p, torch::Generator& gen, const torch::TensorOptions& options) {
  return torch::bernoulli(torch::full({batch}, p, torch::kFloat64), gen).to(options);
}

namespace {

nn::Sequential conv_block(int in, int out, bool leaky) {
  nn::Sequential s;
  s->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)));
  s->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out).affine(true)));
  if (leaky) s->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  else s->push_back(nn::ReLU());
  s->push_back(nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)));
  s->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out).affine(true)));
  if (leaky) s->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  else s->push_back(nn::ReLU());
  return s;
}

torch::Tensor upsample_to(const torch::Tensor& t, std::int64_t h, std::int64_t w) {
  if (t.size(-2) == h && t.size(-1) == w) return t;
  return F::interpolate(t, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

SpatialGeneratorImpl::SpatialGeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
  config_.validate();
  codes_ = positional_codes(config_.patch_grid_n);
  const int extra = config_.position_codes ? codes_.dim : 0;
  const int levels = config_.num_levels;

  encoder = register_module("encoder", nn::ModuleList());
  for (int l = 0; l < levels; ++l) {
    const int in = l == 0 ? config_.channels_in + extra : config_.width(l - 1);
    encoder->push_back(conv_block(in, config_.width(l), true));
  }
  extract = register_module("extract", conv_block(config_.width(levels - 1), config_.width(levels), true));
  bottleneck = register_module(
      "bottleneck", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(config_.width(levels) + extra, config_.width(levels), 3).padding(1)),
                                   nn::InstanceNorm2d(nn::InstanceNorm2dOptions(config_.width(levels)).affine(true)),
                                   nn::ReLU()));

  gates = register_module("gates", nn::ModuleList());
  decoder = register_module("decoder", nn::ModuleList());
  fusion_proj = register_module("fusion_proj", nn::ModuleList());
  gate_slot_.assign(levels, -1);
  for (int l = 0; l < levels; ++l) {
    const int f_ch = config_.width(l + 1);
    const int g_ch = config_.width(l) + extra;
    if (config_.gated(l)) {
      gate_slot_[l] = static_cast<int>(gates->size());
      gates->push_back(AttentionGate(f_ch, g_ch, std::max(1, config_.width(l) / 2)));
    }
    decoder->push_back(conv_block(f_ch + g_ch, config_.width(l), false));
    fusion_proj->push_back(nn::Conv2d(nn::Conv2dOptions(config_.width(l), config_.base_width, 1)));
  }
  fusion_head = register_module(
      "fusion_head",
      nn::Sequential(nn::Conv2d(nn::Conv2dOptions(config_.base_width, config_.base_width, 3).padding(1)), nn::ReLU()));
  residual_head = register_module("residual_head", nn::Conv2d(nn::Conv2dOptions(config_.base_width, config_.channels_in, 1)));
}

torch::Tensor SpatialGeneratorImpl::with_codes(const torch::Tensor& f) const {
  return config_.position_codes ? append_position_channels(f, codes_) : f;
}

torch::Tensor SpatialGeneratorImpl::residual_map(const torch::Tensor& x, const torch::Tensor& skip_delta,
                                                 std::vector<torch::Tensor>* alphas) {
  const int levels = config_.num_levels;
  std::vector<torch::Tensor> skips(levels);
  auto h = with_codes(x);
  for (int l = 0; l < levels; ++l) {
    h = encoder[l]->as<nn::Sequential>()->forward(h);
    skips[l] = h;
    h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
  }
  auto f = extract->forward(h);
  auto d = bottleneck->forward(with_codes(f));

  const auto full_h = x.size(-2), full_w = x.size(-1);
  torch::Tensor fused;
  for (int l = levels - 1; l >= 0; --l) {
    auto g = skips[l];
    if (skip_delta.defined()) g = g * skip_delta.to(g.options()).view({-1, 1, 1, 1});
    g = with_codes(g);
    auto up = upsample_to(d, g.size(-2), g.size(-1));
    if (gate_slot_[l] >= 0) {
      auto out = gates[gate_slot_[l]]->as<AttentionGate>()->forward(up, g);
      g = out.gated;
      if (alphas) alphas->push_back(out.alpha);
    }
    d = decoder[l]->as<nn::Sequential>()->forward(torch::cat({up, g}, 1));
    auto proj = upsample_to(fusion_proj[l]->as<nn::Conv2d>()->forward(d), full_h, full_w);
    fused = fused.defined() ? fused + proj : proj;
  }
  return residual_head(fusion_head->forward(fused));
}

ForwardTrace SpatialGeneratorImpl::trace(const torch::Tensor& x, const torch::Tensor& delta) {
  require(x.dim() == 4 && x.size(1) == config_.channels_in && x.size(2) == config_.input_size &&
              x.size(3) == config_.input_size,
          ErrorKind::Usage, "generator input does not match the configured shape");
  ForwardTrace t;
  const bool gate_skips = config_.gate_scope == GateScope::Skips;
  t.residual = residual_map(x, gate_skips ? delta : torch::Tensor(), &t.alphas);
  t.additive = gate_skips ? t.residual : gated_shortcut(t.residual, x, delta);
  t.restored = torch::tanh(t.additive + x);
  return t;
}

torch::Tensor SpatialGeneratorImpl::generate(const torch::Tensor& x, Mode mode, torch::Generator* gen) {
  torch::Tensor delta;
  if (mode == Mode::Train) {
    require(gen != nullptr, ErrorKind::Usage, "train-mode generation needs a random generator");
    delta = draw_delta(x.size(0), config_.gating_prob, *gen, x.options());
  } else {
    delta = torch::ones({x.size(0)}, x.options());
  }
  return trace(x, delta).restored;
}

void SpatialGeneratorImpl::zero_residual_head() {
  torch::NoGradGuard guard;
  residual_head->weight.zero_();
  residual_head->bias.zero_();
}

}  // namespace sagan::generator
