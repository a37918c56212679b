#pragma once

// Independent reference computations for the unit and acceptance suites.
// Nothing here calls into the code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <torch/torch.h>

namespace oracle {

// P(s_pos > s_neg) + 0.5 P(tie) over every (positive, negative) pair.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1;
      if (s[i] > s[j]) wins += 1;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Sum over distinct thresholds t (descending) of
// (recall(t) - recall(t_prev)) * precision(t), where every count is a fresh
// O(n) scan of the items scoring >= t.
inline double threshold_walk_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double positives = 0;
  for (int v : y) positives += v;
  double ap = 0, prev_recall = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] ? tp : fp) += 1;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

// Precision-at-k averaged over the ranks of the positives (tie-free inputs).
inline double precision_at_k_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  double tp = 0, sum = 0, positives = 0;
  for (int v : y) positives += v;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (y[idx[k]]) {
      tp += 1;
      sum += tp / static_cast<double>(k + 1);
    }
  }
  return sum / positives;
}

// Elementwise loss oracles on contiguous double tensors.
inline double mean_abs(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = a.to(torch::kFloat64).contiguous(), z = b.to(torch::kFloat64).contiguous();
  const auto per = x[0].numel();
  double total = 0;
  for (std::int64_t i = 0; i < x.size(0); ++i) {
    double s = 0;
    auto xi = x[i].flatten(), zi = z[i].flatten();
    for (std::int64_t k = 0; k < per; ++k) s += std::fabs(xi[k].item<double>() - zi[k].item<double>());
    total += s / static_cast<double>(per);
  }
  return total / static_cast<double>(x.size(0));
}

inline double mean_rms(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = a.to(torch::kFloat64).contiguous(), z = b.to(torch::kFloat64).contiguous();
  const auto per = x[0].numel();
  double total = 0;
  for (std::int64_t i = 0; i < x.size(0); ++i) {
    double s = 0;
    auto xi = x[i].flatten(), zi = z[i].flatten();
    for (std::int64_t k = 0; k < per; ++k) {
      const double d = xi[k].item<double>() - zi[k].item<double>();
      s += d * d;
    }
    total += std::sqrt(s / static_cast<double>(per));
  }
  return total / static_cast<double>(x.size(0));
}

struct GradCheck {
  double max_rel = 0;   // worst per-coordinate relative error
  double norm_rel = 0;  // ||analytic - numeric|| / ||numeric||
  double diff2 = 0, num2 = 0;  // squared norms behind norm_rel, for pooling
  std::size_t checked = 0;
};

// Central differences of `loss` against `analytic` on up to `max_coords`
// entries of `target` (a double tensor, perturbed in place and restored).
inline GradCheck finite_difference(const std::function<double()>& loss, torch::Tensor target,
                                   const torch::Tensor& analytic, std::size_t max_coords, std::uint64_t seed,
                                   double h = 1e-6) {
  GradCheck r;
  auto flat = [&] {
    torch::NoGradGuard guard;
    return target.detach().view(-1);
  }();
  auto grad = analytic.reshape(-1);
  const auto n = static_cast<std::size_t>(flat.numel());
  std::vector<std::size_t> coords(n);
  for (std::size_t i = 0; i < n; ++i) coords[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min(n, max_coords));
  double diff2 = 0, num2 = 0;
  for (auto c : coords) {
    const auto i = static_cast<std::int64_t>(c);
    const double orig = flat[i].item<double>();
    auto set = [&](double v) {
      torch::NoGradGuard guard;
      flat[i] = v;
    };
    // loss() runs with grad mode on: gradient penalties differentiate inside it.
    set(orig + h);
    const double up = loss();
    set(orig - h);
    const double down = loss();
    set(orig);
    const double numeric = (up - down) / (2 * h);
    const double a = grad[i].item<double>();
    diff2 += (a - numeric) * (a - numeric);
    num2 += numeric * numeric;
    const double scale = std::max({std::fabs(a), std::fabs(numeric), 1e-4});
    r.max_rel = std::max(r.max_rel, std::fabs(a - numeric) / scale);
    ++r.checked;
  }
  r.diff2 = diff2;
  r.num2 = num2;
  r.norm_rel = num2 > 0 ? std::sqrt(diff2 / num2) : std::sqrt(diff2);
  return r;
}

}  // namespace oracle

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("sagan_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testutil
