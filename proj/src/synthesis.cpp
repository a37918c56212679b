#include "synthesis.hpp"

#include <algorithm>
#include <cmath>

namespace sagan::synthesis {

void SynthParams::validate() const {
  const auto [plo, phi] = patch_fraction_range;
  const auto [alo, ahi] = alpha_range;
  require(plo <= phi && plo > 0.0 && phi <= 1.0, ErrorKind::Usage, "patch_fraction_range must satisfy 0 < lo <= hi <= 1");
  require(alo <= ahi && alo >= 0.0 && ahi <= 1.0, ErrorKind::Usage, "alpha_range must satisfy 0 <= lo <= hi <= 1");
}

namespace {

// Rounds the drawn side length; a zero-length side is redrawn.
std::int64_t draw_side(const SynthParams& p, std::int64_t extent, Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double frac = uniform(rng, p.patch_fraction_range.first, p.patch_fraction_range.second);
    const auto side = static_cast<std::int64_t>(std::lround(frac * static_cast<double>(extent)));
    if (side >= 1) return std::min(side, extent);
  }
  return 1;
}

}  // namespace

PseudoAnomaly synthesize_pseudo(const torch::Tensor& source, const torch::Tensor& donor, const SynthParams& params,
                                Rng& rng) {
  params.validate();
  require(source.dim() == 3, ErrorKind::Usage, "source must be [C, H, W]");
  require(source.sizes() == donor.sizes(), ErrorKind::Usage, "source and donor shapes differ");
  const auto h = source.size(1), w = source.size(2);

  Rect r;
  r.height = draw_side(params, h, rng);
  r.width = draw_side(params, w, rng);
  r.top = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(h - r.height + 1)));
  r.left = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(w - r.width + 1)));
  const double alpha = uniform(rng, params.alpha_range.first, params.alpha_range.second);

  PseudoAnomaly out;
  out.rect = r;
  out.alpha = alpha;
  out.mask = torch::zeros({h, w}, source.options());
  out.mask.slice(0, r.top, r.top + r.height).slice(1, r.left, r.left + r.width).fill_(1.0);
  out.image = source.clone();
  using torch::indexing::Slice;
  const auto region = std::initializer_list<torch::indexing::TensorIndex>{
      Slice(), Slice(r.top, r.top + r.height), Slice(r.left, r.left + r.width)};
  out.image.index_put_(region, source.index(region) * (1.0 - alpha) + donor.index(region) * alpha);
  return out;
}

PairedBatch paired_batch(const torch::Tensor& normals, const SynthParams& params, Rng& rng) {
  require(normals.dim() == 4 && normals.size(0) > 0, ErrorKind::Usage, "paired_batch needs a non-empty [B, C, H, W] batch");
  const auto b = normals.size(0);
  PairedBatch out;
  out.source = normals;
  std::vector<torch::Tensor> pseudo, masks;
  for (std::int64_t i = 0; i < b; ++i) {
    if (b == 1) {
      SynthParams frozen = params;
      frozen.alpha_range = {0.0, 0.0};
      auto p = synthesize_pseudo(normals[i], normals[i], frozen, rng);
      pseudo.push_back(p.image);
      masks.push_back(p.mask);
      out.alphas.push_back(0.0);
      continue;
    }
    auto p = synthesize_pseudo(normals[i], normals[(i + 1) % b], params, rng);
    pseudo.push_back(p.image);
    masks.push_back(p.mask);
    out.alphas.push_back(p.alpha);
  }
  out.pseudo = torch::stack(pseudo);
  out.masks = torch::stack(masks);
  return out;
}

}  // namespace sagan::synthesis
