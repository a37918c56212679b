#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace sagan::data {

std::string_view to_string(Label label) {
  switch (label) {
    case Label::Normal: return "normal";
    case Label::Abnormal: return "abnormal";
    case Label::Unknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::NormalTrain: return "normal_train";
    case Split::UnlabeledPool: return "unlabeled_pool";
    case Split::UnlabeledTrain: return "unlabeled_train";
    case Split::Test: return "test";
  }
  return "test";
}

Label parse_label(std::string_view token) {
  if (token == "normal") return Label::Normal;
  if (token == "abnormal") return Label::Abnormal;
  if (token == "unknown") return Label::Unknown;
  fail(ErrorKind::Data, "unknown label token '" + std::string(token) + "'");
}

Split parse_split(std::string_view token) {
  if (token == "normal_train") return Split::NormalTrain;
  if (token == "unlabeled_pool") return Split::UnlabeledPool;
  if (token == "unlabeled_train") return Split::UnlabeledTrain;
  if (token == "test") return Split::Test;
  fail(ErrorKind::Data, "unknown split token '" + std::string(token) + "'");
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::vector<ImageRecord> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open manifest " + path.string());

  std::vector<ImageRecord> records;
  std::unordered_set<std::string> seen;
  const fs::path base = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (!header_seen) {
      header_seen = true;
      require(fields == std::vector<std::string>{"id", "path", "label", "split"}, ErrorKind::Data,
              path.string() + ":" + std::to_string(line_no) + ": header must be 'id,path,label,split'");
      continue;
    }
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    require(fields.size() == 4, ErrorKind::Data, where + "expected 4 fields, got " + std::to_string(fields.size()));
    require(!fields[0].empty() && !fields[1].empty(), ErrorKind::Data, where + "empty id or path");

    ImageRecord rec;
    rec.id = fields[0];
    rec.path = fs::path(fields[1]).is_absolute() ? fs::path(fields[1]) : (base / fields[1]).lexically_normal();
    try {
      rec.label = parse_label(fields[2]);
      rec.split = parse_split(fields[3]);
    } catch (const Error& e) {
      fail(ErrorKind::Data, where + e.what());
    }
    require(rec.label != Label::Unknown, ErrorKind::Data, where + "label must be normal or abnormal");
    require(rec.split != Split::UnlabeledTrain, ErrorKind::Data,
            where + "manifest split must be normal_train, unlabeled_pool or test");
    require(!(rec.split == Split::NormalTrain && rec.label != Label::Normal), ErrorKind::Data,
            where + "normal_train rows must be labeled normal");
    require(seen.insert(rec.id).second, ErrorKind::Data, where + "duplicate id '" + rec.id + "'");
    records.push_back(std::move(rec));
  }
  return records;
}

std::size_t DatasetRepartition::hidden_abnormal_count() const {
  return static_cast<std::size_t>(std::count_if(unlabeled_train.begin(), unlabeled_train.end(),
                                                [](const ImageRecord& r) { return r.hidden_label == Label::Abnormal; }));
}

const std::vector<ImageRecord>& DatasetRepartition::split(Split s) const {
  switch (s) {
    case Split::NormalTrain: return normal_train;
    case Split::UnlabeledPool:
    case Split::UnlabeledTrain: return unlabeled_train;
    case Split::Test: return test;
  }
  return test;
}

std::size_t abnormal_quota(double anomaly_ratio, std::size_t unlabeled_size) {
  const long double exact = static_cast<long double>(anomaly_ratio) * static_cast<long double>(unlabeled_size);
  auto quota = static_cast<std::size_t>(std::floor(exact));
  // Guard against products such as 0.6 * 5 evaluating to 2.9999999.
  if (std::fabs(exact - std::round(exact)) < 1e-9L) quota = static_cast<std::size_t>(std::llround(exact));
  return std::min(quota, unlabeled_size);
}

namespace {

std::vector<ImageRecord> draw(std::vector<ImageRecord> pool, std::size_t count, Rng& rng, const std::string& what) {
  require(pool.size() >= count, ErrorKind::Data,
          "insufficient " + what + " records: need " + std::to_string(count) + ", have " + std::to_string(pool.size()));
  std::sort(pool.begin(), pool.end(), [](const ImageRecord& a, const ImageRecord& b) { return a.id < b.id; });
  shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  return pool;
}

}  // namespace

DatasetRepartition build_repartition(const std::vector<ImageRecord>& records, double anomaly_ratio,
                                     const SplitSizes& sizes, std::uint64_t seed) {
  require(std::isfinite(anomaly_ratio) && anomaly_ratio >= 0.0 && anomaly_ratio <= 1.0, ErrorKind::Usage,
          "anomaly ratio must lie in [0, 1]");
  std::vector<ImageRecord> train_pool, unl_normal, unl_abnormal, test_normal, test_abnormal;
  for (const auto& r : records) {
    switch (r.split) {
      case Split::NormalTrain: train_pool.push_back(r); break;
      case Split::UnlabeledPool:
      case Split::UnlabeledTrain:
        (r.label == Label::Abnormal ? unl_abnormal : unl_normal).push_back(r);
        break;
      case Split::Test: (r.label == Label::Abnormal ? test_abnormal : test_normal).push_back(r); break;
    }
  }
  const std::size_t total = records.size();
  const std::size_t requested = sizes.normal_train + sizes.unlabeled + sizes.test_normal + sizes.test_abnormal;
  require(requested <= total, ErrorKind::Data,
          "requested split sizes (" + std::to_string(requested) + ") exceed the pool (" + std::to_string(total) + ")");

  const std::size_t n_abn = abnormal_quota(anomaly_ratio, sizes.unlabeled);
  DatasetRepartition rep;
  rep.anomaly_ratio = anomaly_ratio;
  rep.seed = seed;

  Rng rng_train(mix_seed(seed, 1)), rng_unl(mix_seed(seed, 2)), rng_test(mix_seed(seed, 3));
  rep.normal_train = draw(std::move(train_pool), sizes.normal_train, rng_train, "normal_train");
  for (auto& r : rep.normal_train) r.split = Split::NormalTrain;

  auto unl_a = draw(std::move(unl_abnormal), n_abn, rng_unl, "abnormal unlabeled_pool");
  auto unl_n = draw(std::move(unl_normal), sizes.unlabeled - n_abn, rng_unl, "normal unlabeled_pool");
  rep.unlabeled_train = std::move(unl_a);
  rep.unlabeled_train.insert(rep.unlabeled_train.end(), unl_n.begin(), unl_n.end());
  shuffle(rep.unlabeled_train.begin(), rep.unlabeled_train.end(), rng_unl);
  for (auto& r : rep.unlabeled_train) {
    r.hidden_label = r.label;
    r.label = Label::Unknown;
    r.split = Split::UnlabeledTrain;
  }

  auto tn = draw(std::move(test_normal), sizes.test_normal, rng_test, "normal test");
  auto ta = draw(std::move(test_abnormal), sizes.test_abnormal, rng_test, "abnormal test");
  rep.test = std::move(tn);
  rep.test.insert(rep.test.end(), ta.begin(), ta.end());
  for (auto& r : rep.test) r.split = Split::Test;
  return rep;
}

namespace {

json records_to_json(const std::vector<ImageRecord>& recs, bool hidden) {
  json arr = json::array();
  for (const auto& r : recs) {
    json j = {{"id", r.id}, {"path", r.path.string()}};
    if (hidden) j["hidden_label"] = to_string(r.hidden_label);
    else j["label"] = to_string(r.label);
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<ImageRecord> records_from_json(const json& arr, Split split) {
  std::vector<ImageRecord> out;
  for (const auto& j : arr) {
    ImageRecord r;
    r.id = j.at("id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.split = split;
    if (split == Split::UnlabeledTrain) {
      r.label = Label::Unknown;
      r.hidden_label = parse_label(j.at("hidden_label").get<std::string>());
    } else {
      r.label = parse_label(j.at("label").get<std::string>());
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

void save_repartition(const DatasetRepartition& rep, const fs::path& path) {
  json j;
  j["format"] = "sagan-repartition/1";
  j["anomaly_ratio"] = rep.anomaly_ratio;
  j["seed"] = rep.seed;
  j["hidden_abnormal"] = rep.hidden_abnormal_count();
  j["normal_train"] = records_to_json(rep.normal_train, false);
  j["unlabeled_train"] = records_to_json(rep.unlabeled_train, true);
  j["test"] = records_to_json(rep.test, false);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write repartition " + path.string());
  out << j.dump(1) << "\n";
  require(out.good(), ErrorKind::Io, "write failed for " + path.string());
}

DatasetRepartition load_repartition(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open repartition " + path.string());
  DatasetRepartition rep;
  try {
    const json j = json::parse(in);
    require(j.value("format", "") == "sagan-repartition/1", ErrorKind::Data, "not a repartition file");
    rep.anomaly_ratio = j.at("anomaly_ratio").get<double>();
    rep.seed = j.at("seed").get<std::uint64_t>();
    rep.normal_train = records_from_json(j.at("normal_train"), Split::NormalTrain);
    rep.unlabeled_train = records_from_json(j.at("unlabeled_train"), Split::UnlabeledTrain);
    rep.test = records_from_json(j.at("test"), Split::Test);
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": malformed repartition: " + e.what());
  }
  return rep;
}

torch::Tensor normalize_intensity(const torch::Tensor& raw, double max_value) {
  return raw.to(torch::kFloat64).div(max_value).mul(2.0).sub(1.0);
}

torch::Tensor denormalize_intensity(const torch::Tensor& normalized, double max_value) {
  return normalized.to(torch::kFloat64).add(1.0).div(2.0).mul(max_value);
}

torch::Tensor load_image(const fs::path& path, int size, int channels) {
  require(size > 0, ErrorKind::Usage, "image size must be positive");
  require(channels == 1 || channels == 3, ErrorKind::Usage, "channels must be 1 or 3");
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  require(!img.empty(), ErrorKind::Data, "cannot decode image " + path.string());
  require(img.rows > 0 && img.cols > 0, ErrorKind::Data, "zero-dimension image " + path.string());

  double max_value = 255.0;
  switch (img.depth()) {
    case CV_8U: max_value = 255.0; break;
    case CV_16U: max_value = 65535.0; break;
    default: fail(ErrorKind::Data, "unsupported pixel depth in " + path.string());
  }
  if (img.channels() == 4) cv::cvtColor(img, img, cv::COLOR_BGRA2BGR);
  if (channels == 1 && img.channels() == 3) cv::cvtColor(img, img, cv::COLOR_BGR2GRAY);
  if (channels == 3 && img.channels() == 1) cv::cvtColor(img, img, cv::COLOR_GRAY2BGR);
  if (channels == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);

  img.convertTo(img, CV_32F);
  if (img.rows != size || img.cols != size) cv::resize(img, img, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);

  auto t = torch::from_blob(img.data, {size, size, channels}, torch::kFloat32).permute({2, 0, 1}).clone();
  return normalize_intensity(t, max_value).clamp(-1.0, 1.0).to(torch::kFloat32);
}

torch::Tensor load_image(const ImageRecord& record, int size, int channels) {
  return load_image(record.path, size, channels);
}

torch::Tensor load_images(const std::vector<ImageRecord>& records, int size, int channels) {
  if (records.empty()) return torch::empty({0, channels, size, size});
  std::vector<torch::Tensor> imgs;
  imgs.reserve(records.size());
  for (const auto& r : records) imgs.push_back(load_image(r, size, channels));
  return torch::stack(imgs);
}

void save_image(const torch::Tensor& image, const fs::path& path) {
  require(image.dim() == 3, ErrorKind::Usage, "save_image expects [C, H, W]");
  auto t = image.detach().to(torch::kFloat32).clamp(-1, 1).add(1).mul(127.5).round().to(torch::kUInt8);
  const int c = static_cast<int>(t.size(0));
  t = t.permute({1, 2, 0}).contiguous();
  cv::Mat img(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC(c), t.data_ptr<std::uint8_t>());
  if (c == 3) cv::cvtColor(img, img, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  require(cv::imwrite(path.string(), img), ErrorKind::Io, "cannot write image " + path.string());
}

std::vector<std::vector<std::size_t>> batch_order(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                  std::uint64_t epoch, bool shuffle_items) {
  require(count > 0, ErrorKind::Data, "cannot iterate an empty split");
  require(batch_size > 0, ErrorKind::Usage, "batch size must be positive");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  if (shuffle_items) {
    Rng rng(mix_seed(seed, 1000 + epoch));
    shuffle(idx.begin(), idx.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start), idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

torch::Tensor gather(const torch::Tensor& bank, const std::vector<std::size_t>& idx) {
  std::vector<std::int64_t> i64(idx.begin(), idx.end());
  return bank.index_select(0, torch::tensor(i64, torch::kInt64));
}

}  // namespace

std::vector<torch::Tensor> batch_iter(const DatasetRepartition& rep, Split split, std::size_t batch_size,
                                      std::uint64_t seed, std::uint64_t epoch, int size, int channels) {
  const auto& recs = rep.split(split);
  require(!recs.empty(), ErrorKind::Data, "split " + std::string(to_string(split)) + " is empty");
  const auto bank = load_images(recs, size, channels);
  std::vector<torch::Tensor> out;
  for (const auto& b : batch_order(recs.size(), batch_size, seed, epoch)) out.push_back(gather(bank, b));
  return out;
}

BatchStream::BatchStream(torch::Tensor bank, std::size_t batch_size, std::uint64_t seed)
    : bank_(std::move(bank)), batch_size_(batch_size), seed_(seed) {
  require(bank_.defined() && bank_.size(0) > 0, ErrorKind::Data, "batch stream over an empty split");
  refresh_order();
}

void BatchStream::refresh_order() { order_ = batch_order(size(), batch_size_, seed_, cursor_.epoch); }

torch::Tensor BatchStream::next() {
  require(!order_.empty(), ErrorKind::Data, "batch stream not initialized");
  if (cursor_.batch >= order_.size()) {
    ++cursor_.epoch;
    cursor_.batch = 0;
    refresh_order();
  }
  return gather(bank_, order_[cursor_.batch++]);
}

void BatchStream::set_cursor(const Cursor& c) {
  cursor_ = c;
  refresh_order();
}

}  // namespace sagan::data
