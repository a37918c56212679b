#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace sagan {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string scope_name(generator::GateScope s) { return s == generator::GateScope::Output ? "output" : "skips"; }

generator::GateScope parse_scope(const std::string& s) {
  if (s == "output") return generator::GateScope::Output;
  if (s == "skips") return generator::GateScope::Skips;
  fail(ErrorKind::Usage, "generator.gate_scope must be 'output' or 'skips'");
}

// Every key of `given` must exist in `defaults` with a compatible type.
void check_keys(const json& given, const json& defaults, const std::string& prefix) {
  require(given.is_object(), ErrorKind::Usage, (prefix.empty() ? "config" : prefix) + " must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    require(defaults.contains(it.key()), ErrorKind::Usage, "unknown config key '" + key + "'");
    const auto& d = defaults.at(it.key());
    const auto& v = it.value();
    if (d.is_object()) {
      check_keys(v, d, key);
      continue;
    }
    const bool ok = (d.is_number() && v.is_number()) || (d.is_boolean() && v.is_boolean()) ||
                    (d.is_string() && v.is_string()) || (d.is_array() && v.is_array());
    require(ok, ErrorKind::Usage, "config key '" + key + "' expects " + d.type_name() + ", got " + v.type_name());
    if (d.is_number_integer())
      require(v.is_number_integer(), ErrorKind::Usage, "config key '" + key + "' expects an integer");
  }
}

const char* help_for(const std::string& key) {
  static const std::vector<std::pair<std::string, const char*>> help = {
      {"data.repartition", "repartition file produced by `prepare`"},
      {"data.image_size", "square input size after bilinear resize"},
      {"data.channels", "1 = luminance, 3 = RGB"},
      {"generator.patch_grid_n", "N for the N x N patch grid of position codes"},
      {"generator.base_width", "channels at full resolution, doubled per level"},
      {"generator.num_levels", "encoder/decoder depth"},
      {"generator.gating_prob", "p of the per-sample Bernoulli shortcut gate during training"},
      {"generator.gate_scope", "output: gate the additive map; skips: gate skip connections"},
      {"generator.gate_levels", "decoder levels with attention gates; [] = all"},
      {"generator.position_codes", "append binary patch codes to encoder input, skips and bottleneck"},
      {"generator.attention", "attention gates on skip connections"},
      {"critic.num_layers", "conv layers of the patch critic (last one is the 1x1 output)"},
      {"critic.base_width", "channels of the first critic layer"},
      {"train.lr", "Adam learning rate"},
      {"train.batch_size", "images per batch and stream"},
      {"train.max_iterations", "generator steps"},
      {"train.lr_decay_every", "generator steps between learning-rate decays"},
      {"train.lr_decay_factor", "multiplier applied at each decay"},
      {"train.d_steps_per_g_step", "critic updates per generator update"},
      {"train.seed", "seed for initialization, batching, synthesis and gates"},
      {"train.checkpoint_every", "generator steps between checkpoints"},
      {"train.adam_beta1", "Adam beta1"},
      {"train.adam_beta2", "Adam beta2"},
      {"train.include_unlabeled", "false trains without unlabeled data (pseudo-anomaly restorations are the fakes)"},
      {"loss.lambda_id", "weight of the identity loss on normals"},
      {"loss.lambda_rec", "weight of the restoration loss on pseudo-anomalies"},
      {"loss.lambda_gp", "weight of the gradient penalty"},
      {"synthesis.patch_fraction_min", "smallest pseudo-anomaly side, fraction of the image side"},
      {"synthesis.patch_fraction_max", "largest pseudo-anomaly side"},
      {"synthesis.alpha_min", "smallest interpolation weight of the donor patch"},
      {"synthesis.alpha_max", "largest interpolation weight"},
      {"eval.score_mode", "mean | max | topk_mean reduction of the difference map"},
      {"eval.topk_fraction", "pixel fraction for topk_mean"},
      {"eval.batch_size", "images per inference batch"},
      {"output_dir", "run directory; defaults to $SAGAN_OUTPUT_ROOT/run"},
  };
  for (const auto& [k, h] : help)
    if (k == key) return h;
  return "";
}

void describe(const ordered_json& j, const std::string& prefix, std::ostringstream& os) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it.value().is_object()) {
      describe(it.value(), key, os);
      continue;
    }
    os << "  " << key << " = " << it.value().dump();
    if (const char* h = help_for(key); *h) os << "    # " << h;
    os << "\n";
  }
}

}  // namespace

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["data"] = {{"repartition", data.repartition}, {"image_size", data.image_size}, {"channels", data.channels}};
  j["generator"] = {{"patch_grid_n", generator.patch_grid_n},
                    {"base_width", generator.base_width},
                    {"num_levels", generator.num_levels},
                    {"gating_prob", generator.gating_prob},
                    {"gate_scope", scope_name(generator.gate_scope)},
                    {"gate_levels", generator.gate_levels},
                    {"position_codes", generator.position_codes},
                    {"attention", generator.attention}};
  j["critic"] = {{"num_layers", critic.num_layers}, {"base_width", critic.base_width}};
  j["train"] = {{"lr", train.lr},
                {"batch_size", train.batch_size},
                {"max_iterations", train.max_iterations},
                {"lr_decay_every", train.lr_decay_every},
                {"lr_decay_factor", train.lr_decay_factor},
                {"d_steps_per_g_step", train.d_steps_per_g_step},
                {"seed", train.seed},
                {"checkpoint_every", train.checkpoint_every},
                {"adam_beta1", train.adam_beta1},
                {"adam_beta2", train.adam_beta2},
                {"include_unlabeled", train.include_unlabeled}};
  j["loss"] = {{"lambda_id", train.weights.lambda_id},
               {"lambda_rec", train.weights.lambda_rec},
               {"lambda_gp", train.weights.lambda_gp}};
  j["synthesis"] = {{"patch_fraction_min", synthesis.patch_fraction_range.first},
                    {"patch_fraction_max", synthesis.patch_fraction_range.second},
                    {"alpha_min", synthesis.alpha_range.first},
                    {"alpha_max", synthesis.alpha_range.second}};
  j["eval"] = {{"score_mode", evaluation::to_string(eval.score_mode)},
               {"topk_fraction", eval.topk_fraction},
               {"batch_size", eval.batch_size}};
  j["output_dir"] = output_dir;
  return j;
}

RunConfig RunConfig::from_json(const json& given, bool check) {
  const json defaults = RunConfig{}.to_json();
  check_keys(given, defaults, "");
  json j = defaults;
  j.merge_patch(given);

  RunConfig c;
  try {
    const auto& d = j.at("data");
    c.data.repartition = d.at("repartition");
    c.data.image_size = d.at("image_size");
    c.data.channels = d.at("channels");
    const auto& g = j.at("generator");
    c.generator.patch_grid_n = g.at("patch_grid_n");
    c.generator.base_width = g.at("base_width");
    c.generator.num_levels = g.at("num_levels");
    c.generator.gating_prob = g.at("gating_prob");
    c.generator.gate_scope = parse_scope(g.at("gate_scope"));
    c.generator.gate_levels = g.at("gate_levels").get<std::vector<int>>();
    c.generator.position_codes = g.at("position_codes");
    c.generator.attention = g.at("attention");
    const auto& k = j.at("critic");
    c.critic.num_layers = k.at("num_layers");
    c.critic.base_width = k.at("base_width");
    const auto& t = j.at("train");
    c.train.lr = t.at("lr");
    c.train.batch_size = t.at("batch_size");
    c.train.max_iterations = t.at("max_iterations");
    c.train.lr_decay_every = t.at("lr_decay_every");
    c.train.lr_decay_factor = t.at("lr_decay_factor");
    c.train.d_steps_per_g_step = t.at("d_steps_per_g_step");
    c.train.seed = t.at("seed");
    c.train.checkpoint_every = t.at("checkpoint_every");
    c.train.adam_beta1 = t.at("adam_beta1");
    c.train.adam_beta2 = t.at("adam_beta2");
    c.train.include_unlabeled = t.at("include_unlabeled");
    const auto& l = j.at("loss");
    c.train.weights.lambda_id = l.at("lambda_id");
    c.train.weights.lambda_rec = l.at("lambda_rec");
    c.train.weights.lambda_gp = l.at("lambda_gp");
    const auto& s = j.at("synthesis");
    c.synthesis.patch_fraction_range = {s.at("patch_fraction_min"), s.at("patch_fraction_max")};
    c.synthesis.alpha_range = {s.at("alpha_min"), s.at("alpha_max")};
    const auto& e = j.at("eval");
    c.eval.score_mode = evaluation::parse_score_mode(e.at("score_mode"));
    c.eval.topk_fraction = e.at("topk_fraction");
    c.eval.batch_size = e.at("batch_size");
    c.output_dir = j.at("output_dir");
  } catch (const json::exception& e) {
    fail(ErrorKind::Usage, std::string("invalid config: ") + e.what());
  }
  c.generator.input_size = c.critic.input_size = c.data.image_size;
  c.generator.channels_in = c.critic.channels_in = c.data.channels;
  if (check) c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path, bool check) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Usage, "cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Usage, path + ": " + e.what());
  }
  return from_json(j, check);
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::Usage, "override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;

  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  json merged = json(to_json());
  check_keys(patch, merged, "");
  merged.merge_patch(patch);
  *this = from_json(merged, false);
}

void RunConfig::validate() const {
  require(data.image_size > 0, ErrorKind::Usage, "data.image_size must be positive");
  require(data.channels == 1 || data.channels == 3, ErrorKind::Usage, "data.channels must be 1 or 3");
  require(eval.batch_size > 0, ErrorKind::Usage, "eval.batch_size must be positive");
  generator.validate();
  critic.validate();
  train.validate();
  synthesis.validate();
}

training::ModelConfig RunConfig::model() const { return {generator, critic}; }

std::string RunConfig::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

std::string describe_config_keys() {
  std::ostringstream os;
  describe(RunConfig{}.to_json(), "", os);
  return os.str();
}

}  // namespace sagan
