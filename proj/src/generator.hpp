#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "common.hpp"

namespace sagan::generator {

enum class GateScope { Output, Skips };
enum class Mode { Train, Infer };

struct GeneratorConfig {
  int input_size = 64;
  int channels_in = 1;
  int patch_grid_n = 2;
  int base_width = 32;
  int num_levels = 4;
  double gating_prob = 0.9;
  GateScope gate_scope = GateScope::Output;
  // Decoder levels (0 = full resolution) that carry an attention gate; empty means all.
  std::vector<int> gate_levels;
  // Ablation switches for the two spatial-awareness components.
  bool position_codes = true;
  bool attention = true;

  void validate() const;
  bool gated(int level) const;
  int width(int level) const { return base_width << level; }
};

/// Binary patch codes for an N x N patch grid, row-major patch order, most
/// significant bit first.
struct PositionalCodeTable {
  int n = 0;
  int dim = 0;
  std::vector<std::vector<std::uint8_t>> codes;
};

/// ceil(log2(n*n) + 1), computed in integers.
int code_dim(int n);
PositionalCodeTable positional_codes(int n);

/// [dim, height, width] planes; inside the footprint of patch k every plane
/// holds the corresponding bit of code k.
torch::Tensor code_planes(const PositionalCodeTable& table, std::int64_t height, std::int64_t width,
                          const torch::TensorOptions& options);

/// Concatenates the code planes after the channels of a [B, C, H, W] or
/// [C, H, W] feature map.
torch::Tensor append_position_channels(const torch::Tensor& features, const PositionalCodeTable& table);

struct GateOutput {
  torch::Tensor gated;  // alpha * g
  torch::Tensor alpha;  // [B, 1, H, W]
};

/// alpha = sigmoid(C3(relu(C1(f) + C2(g)))), gated = alpha * g.
class AttentionGateImpl : public torch::nn::Module {
 public:
  AttentionGateImpl(int f_channels, int g_channels, int inter_channels);
  GateOutput forward(const torch::Tensor& f, const torch::Tensor& g);

  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
};
TORCH_MODULE(AttentionGate);

/// G(x) = I(x) * delta + (1 - delta) * x with one delta per sample.
torch::Tensor gated_shortcut(const torch::Tensor& residual, const torch::Tensor& identity, const torch::Tensor& delta);

/// Per-sample Bernoulli(p) draws as a float tensor of shape [batch].
torch::Tensor draw_delta(std::int64_t batch, double p, torch::Generator& gen, const torch::TensorOptions& options);

struct ForwardTrace {
  torch::Tensor restored;              // x'
  torch::Tensor additive;              // G(x)
  torch::Tensor residual;              // I(x)
  std::vector<torch::Tensor> alphas;   // attention maps, decoder level order L-1 .. 0
};

class SpatialGeneratorImpl : public torch::nn::Module {
 public:
  explicit SpatialGeneratorImpl(GeneratorConfig config);

  /// x' = tanh(G(x) + x) with an explicit per-sample delta.
  ForwardTrace trace(const torch::Tensor& x, const torch::Tensor& delta);

  /// Train mode draws delta ~ Bernoulli(p) from `gen`; infer mode fixes delta = 1.
  torch::Tensor generate(const torch::Tensor& x, Mode mode, torch::Generator* gen = nullptr);

  /// I(x), the fused multi-level map before the shortcut.
  torch::Tensor residual_map(const torch::Tensor& x, const torch::Tensor& skip_delta, std::vector<torch::Tensor>* alphas);

  /// Zeroes the last projection of the fusion head, making I(x) == 0.
  void zero_residual_head();

  const GeneratorConfig& config() const { return config_; }
  const PositionalCodeTable& codes() const { return codes_; }

 private:
  torch::Tensor with_codes(const torch::Tensor& f) const;

  GeneratorConfig config_;
  PositionalCodeTable codes_;
  torch::nn::ModuleList encoder{nullptr};
  torch::nn::Sequential extract{nullptr};
  torch::nn::Sequential bottleneck{nullptr};
  torch::nn::ModuleList gates{nullptr};
  torch::nn::ModuleList decoder{nullptr};
  torch::nn::ModuleList fusion_proj{nullptr};
  torch::nn::Sequential fusion_head{nullptr};
  torch::nn::Conv2d residual_head{nullptr};
  std::vector<int> gate_slot_;  // decoder level -> index into gates, or -1
};
TORCH_MODULE(SpatialGenerator);

}  // namespace sagan::generator
