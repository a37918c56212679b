#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "common.hpp"
#include "data.hpp"

namespace fs = std::filesystem;

namespace sagan::synthetic {

namespace {

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

// Soft ellipse membership: 1 deep inside, 0 outside, smooth rim.
double soft_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  const double r = std::sqrt(((x - cx) * (x - cx)) / (rx * rx) + ((y - cy) * (y - cy)) / (ry * ry));
  return 1.0 - smoothstep(0.8, 1.1, r);
}

double gaussian(Rng& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300), u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
}

}  // namespace

torch::Tensor synthetic_background(int size) {
  auto bg = torch::empty({size, size}, torch::kFloat64);
  auto a = bg.accessor<double, 2>();
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      const double y = (i + 0.5) / size, x = (j + 0.5) / size;
      double v = 0.05 - 0.25 * ((x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5)) * 4;  // vignette
      v -= 0.55 * soft_ellipse(x, y, 0.30, 0.50, 0.15, 0.30);                        // left field
      v -= 0.55 * soft_ellipse(x, y, 0.70, 0.50, 0.15, 0.30);                        // right field
      v += 0.15 * soft_ellipse(x, y, 0.50, 0.55, 0.05, 0.42);                        // central column
      v += 0.10 * soft_ellipse(x, y, 0.50, 0.90, 0.30, 0.08);                        // base
      a[i][j] = v;
    }
  }
  return bg;
}

SyntheticImage render_synthetic(const SyntheticSpec& spec, std::size_t index, bool abnormal) {
  const int n = spec.size;
  Rng rng(mix_seed(spec.seed, (static_cast<std::uint64_t>(index) << 1) | (abnormal ? 1U : 0U)));
  auto base = synthetic_background(n);
  auto b = base.accessor<double, 2>();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b[i][j] += spec.noise_sigma * gaussian(rng);

  auto mask = torch::zeros({n, n}, torch::kFloat64);
  if (abnormal) {
    auto m = mask.accessor<double, 2>();
    const auto blobs = 1 + uniform_index(rng, 3);
    for (std::uint64_t k = 0; k < blobs; ++k) {
      const double cx = uniform(rng, 0.2, 0.8) * n, cy = uniform(rng, 0.2, 0.8) * n;
      const double rx = uniform(rng, 0.05, 0.11) * n, ry = uniform(rng, 0.05, 0.11) * n;
      const double theta = uniform(rng, 0.0, std::numbers::pi);
      const double c = std::cos(theta), s = std::sin(theta);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          const double dx = j + 0.5 - cx, dy = i + 0.5 - cy;
          const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
          if (u * u + v * v <= 1.0) m[i][j] = 1.0;
        }
      }
    }
  }
  base = base.clamp(-1.0, 1.0 - spec.blob_intensity);
  SyntheticImage out;
  out.base = base.unsqueeze(0);
  out.blob_mask = mask;
  out.image = (base + spec.blob_intensity * mask).clamp(-1.0, 1.0).unsqueeze(0);
  return out;
}

SyntheticSummary make_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  require(spec.size >= 8, ErrorKind::Usage, "synthetic image size must be >= 8");
  const std::size_t test_n = spec.test_normal.value_or(spec.n_normal / 5);
  const std::size_t test_a = spec.test_abnormal.value_or(spec.n_abnormal / 5);
  require(test_n <= spec.n_normal && test_a <= spec.n_abnormal, ErrorKind::Usage, "test counts exceed image counts");
  const std::size_t train_n = spec.normal_train.value_or((spec.n_normal - test_n) / 2);
  require(test_n + train_n <= spec.n_normal, ErrorKind::Usage, "normal_train + test normal counts exceed n_normal");

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  require(!ec, ErrorKind::Io, "cannot create " + (out_dir / "images").string() + ": " + ec.message());
  SyntheticSummary summary;
  summary.manifest = out_dir / "manifest.csv";
  std::ofstream manifest(summary.manifest);
  require(manifest.good(), ErrorKind::Io, "cannot write " + summary.manifest.string());
  manifest << "id,path,label,split\n";

  const auto emit = [&](bool abnormal, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s_%05zu", abnormal ? "abnormal" : "normal", i);
      const auto rel = fs::path("images") / (std::string(id) + ".png");
      data::save_image(render_synthetic(spec, i, abnormal).image, out_dir / rel);
      std::string split;
      if (abnormal) {
        split = i < test_a ? "test" : "unlabeled_pool";
        (i < test_a ? summary.test_abnormal : summary.unlabeled_abnormal)++;
      } else if (i < test_n) {
        split = "test";
        summary.test_normal++;
      } else if (i < test_n + train_n) {
        split = "normal_train";
        summary.normal_train++;
      } else {
        split = "unlabeled_pool";
        summary.unlabeled_normal++;
      }
      manifest << id << "," << rel.generic_string() << "," << (abnormal ? "abnormal" : "normal") << "," << split << "\n";
    }
  };
  emit(false, spec.n_normal);
  emit(true, spec.n_abnormal);
  require(manifest.good(), ErrorKind::Io, "write failed for " + summary.manifest.string());
  return summary;
}

}  // namespace sagan::synthetic
