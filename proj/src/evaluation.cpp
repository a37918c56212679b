#include "evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

namespace fs = std::filesystem;

namespace sagan::evaluation {

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "mean") return ScoreMode::Mean;
  if (s == "max") return ScoreMode::Max;
  if (s == "topk_mean") return ScoreMode::TopkMean;
  fail(ErrorKind::Usage, "unknown score_mode '" + s + "' (mean, max, topk_mean)");
}

std::string to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::Mean: return "mean";
    case ScoreMode::Max: return "max";
    case ScoreMode::TopkMean: return "topk_mean";
  }
  return "mean";
}

torch::Tensor heatmap(const torch::Tensor& x, const torch::Tensor& x_prime) {
  require(x.sizes() == x_prime.sizes(), ErrorKind::Usage, "heatmap: shape mismatch");
  require(x.dim() == 3, ErrorKind::Usage, "heatmap expects [C, H, W]");
  return (x_prime - x).abs().mean(0);
}

double anomaly_score(const torch::Tensor& x, const torch::Tensor& x_prime, ScoreMode mode, double topk_fraction) {
  const auto heat = heatmap(x.to(torch::kFloat64), x_prime.to(torch::kFloat64));
  switch (mode) {
    case ScoreMode::Mean: return heat.mean().item<double>();
    case ScoreMode::Max: return heat.max().item<double>();
    case ScoreMode::TopkMean: {
      require(topk_fraction > 0 && topk_fraction <= 1, ErrorKind::Usage, "topk_fraction must lie in (0, 1]");
      const auto n = heat.numel();
      const auto k = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(topk_fraction * n)));
      return std::get<0>(heat.flatten().topk(k)).mean().item<double>();
    }
  }
  return 0;
}

namespace {

void check_metric_input(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), ErrorKind::Usage, "scores and labels differ in length");
  for (double s : scores) require(std::isfinite(s), ErrorKind::Numeric, "non-finite score");
  for (int l : labels) require(l == 0 || l == 1, ErrorKind::Usage, "labels must be 0 or 1");
}

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_metric_input(scores, labels);
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t n_neg = n - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorKind::Usage, "AUC needs both normal and abnormal samples");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of mid-ranks of the positives.
  double rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum += mid_rank;
    i = j;
  }
  const double p = static_cast<double>(n_pos), q = static_cast<double>(n_neg);
  return (rank_sum - p * (p + 1) / 2) / (p * q);
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_metric_input(scores, labels);
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  require(n_pos > 0, ErrorKind::Usage, "AP needs at least one abnormal sample");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i, group_tp = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      group_tp += static_cast<std::size_t>(labels[order[j]]);
      ++j;
    }
    tp += group_tp;
    seen = j;
    if (group_tp > 0)
      ap += (static_cast<double>(group_tp) / static_cast<double>(n_pos)) *
            (static_cast<double>(tp) / static_cast<double>(seen));
    i = j;
  }
  return ap;
}

void ScoreReport::finalize() {
  std::vector<double> s;
  std::vector<int> l;
  for (const auto& e : entries) {
    s.push_back(e.score);
    l.push_back(e.label == data::Label::Abnormal ? 1 : 0);
  }
  const bool has_pos = std::count(l.begin(), l.end(), 1) > 0;
  const bool has_neg = std::count(l.begin(), l.end(), 0) > 0;
  auc = has_pos && has_neg ? evaluation::auc(s, l) : std::nan("");
  ap = has_pos ? average_precision(s, l) : std::nan("");
}

torch::Tensor restore(generator::SpatialGenerator& gen, const torch::Tensor& images, int batch_size) {
  require(batch_size > 0, ErrorKind::Usage, "eval batch_size must be positive");
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> out;
  for (std::int64_t start = 0; start < images.size(0); start += batch_size) {
    const auto len = std::min<std::int64_t>(batch_size, images.size(0) - start);
    out.push_back(gen->generate(images.narrow(0, start, len), generator::Mode::Infer));
  }
  return torch::cat(out, 0);
}

ScoreReport evaluate(generator::SpatialGenerator& gen, const std::vector<data::ImageRecord>& test,
                     const EvalConfig& config, int channels) {
  require(!test.empty(), ErrorKind::Data, "test split is empty");
  const auto images = data::load_images(test, gen->config().input_size, channels);
  const auto restored = restore(gen, images, config.batch_size);
  ScoreReport report;
  report.score_mode = config.score_mode;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto k = static_cast<std::int64_t>(i);
    report.entries.push_back(
        {test[i].id, anomaly_score(images[k], restored[k], config.score_mode, config.topk_fraction), test[i].label});
  }
  report.finalize();
  return report;
}

void write_report(const ScoreReport& report, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write report " + path.string());
  out << std::setprecision(17);
  out << "# sagan-score-report/1\n";
  out << "# auc=" << report.auc << "\n";
  out << "# ap=" << report.ap << "\n";
  out << "# entries=" << report.entries.size() << "\n";
  out << "# score_mode=" << to_string(report.score_mode) << "\n";
  out << "# positive_class=abnormal\n";
  out << "# ap_ties=stable sort by descending score; each tie group is one threshold, its precision shared by the group\n";
  out << "# config_fingerprint=" << report.config_fingerprint << "\n";
  out << "# checkpoint_iteration=" << report.checkpoint_iteration << "\n";
  out << "id,score,label\n";
  for (const auto& e : report.entries) out << e.id << "," << e.score << "," << data::to_string(e.label) << "\n";
  require(out.good(), ErrorKind::Io, "write failed for " + path.string());
}

ScoreReport read_report(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open report " + path.string());
  ScoreReport r;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = line.substr(2, eq - 2), value = line.substr(eq + 1);
      if (key == "auc") r.auc = std::stod(value);
      else if (key == "ap") r.ap = std::stod(value);
      else if (key == "score_mode") r.score_mode = parse_score_mode(value);
      else if (key == "config_fingerprint") r.config_fingerprint = value;
      else if (key == "checkpoint_iteration") r.checkpoint_iteration = std::stoll(value);
      continue;
    }
    if (!header) {
      header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string id, score, label;
    std::getline(ss, id, ',');
    std::getline(ss, score, ',');
    std::getline(ss, label, ',');
    r.entries.push_back({id, std::stod(score), data::parse_label(label)});
  }
  return r;
}

void export_heatmap(const std::string& id, const torch::Tensor& heat, const fs::path& out_dir) {
  require(heat.dim() == 2, ErrorKind::Usage, "heatmap must be [H, W]");
  fs::create_directories(out_dir);
  const auto h64 = heat.to(torch::kFloat64).contiguous();
  const double lo = h64.min().item<double>(), hi = h64.max().item<double>();
  const auto scaled = hi > lo ? (h64 - lo) / (hi - lo) : torch::zeros_like(h64);
  auto bytes = scaled.mul(255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  cv::Mat img(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC1, bytes.data_ptr<std::uint8_t>());
  const auto png = out_dir / (id + "_heat.png");
  require(cv::imwrite(png.string(), img), ErrorKind::Io, "cannot write " + png.string());

  nlohmann::ordered_json side;
  side["id"] = id;
  side["height"] = h64.size(0);
  side["width"] = h64.size(1);
  side["min"] = lo;
  side["max"] = hi;
  side["normalization"] = "per-image min-max to [0, 255]";
  std::vector<double> values(h64.data_ptr<double>(), h64.data_ptr<double>() + h64.numel());
  side["values"] = values;
  std::ofstream out(out_dir / (id + "_heat.json"));
  out << side.dump() << "\n";
  require(out.good(), ErrorKind::Io, "cannot write heatmap sidecar for " + id);
}

}  // namespace sagan::evaluation
