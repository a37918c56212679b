#include "training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace sagan::training {

void TrainConfig::validate() const {
  require(lr >= 0 && std::isfinite(lr), ErrorKind::Usage, "train.lr must be a non-negative number");
  require(batch_size > 0, ErrorKind::Usage, "train.batch_size must be positive");
  require(max_iterations > 0, ErrorKind::Usage, "train.max_iterations must be positive");
  require(lr_decay_every > 0, ErrorKind::Usage, "train.lr_decay_every must be positive");
  require(lr_decay_factor > 0, ErrorKind::Usage, "train.lr_decay_factor must be positive");
  require(d_steps_per_g_step >= 1, ErrorKind::Usage, "train.d_steps_per_g_step must be >= 1");
  require(checkpoint_every > 0, ErrorKind::Usage, "train.checkpoint_every must be positive");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, ErrorKind::Usage,
          "adam betas must lie in [0, 1)");
  weights.validate();
}

double lr_at(const TrainConfig& config, std::int64_t iteration) {
  return config.lr * std::pow(config.lr_decay_factor, static_cast<double>(iteration / config.lr_decay_every));
}

std::string to_json(const generator::GeneratorConfig& c) {
  json j;
  j["input_size"] = c.input_size;
  j["channels_in"] = c.channels_in;
  j["patch_grid_n"] = c.patch_grid_n;
  j["base_width"] = c.base_width;
  j["num_levels"] = c.num_levels;
  j["gating_prob"] = c.gating_prob;
  j["gate_scope"] = c.gate_scope == generator::GateScope::Output ? "output" : "skips";
  j["gate_levels"] = c.gate_levels;
  j["position_codes"] = c.position_codes;
  j["attention"] = c.attention;
  return j.dump();
}

generator::GeneratorConfig generator_config_from_json(const std::string& s) {
  generator::GeneratorConfig c;
  try {
    const auto j = json::parse(s);
    c.input_size = j.at("input_size");
    c.channels_in = j.at("channels_in");
    c.patch_grid_n = j.at("patch_grid_n");
    c.base_width = j.at("base_width");
    c.num_levels = j.at("num_levels");
    c.gating_prob = j.at("gating_prob");
    c.gate_scope = j.at("gate_scope") == "skips" ? generator::GateScope::Skips : generator::GateScope::Output;
    c.gate_levels = j.at("gate_levels").get<std::vector<int>>();
    c.position_codes = j.at("position_codes");
    c.attention = j.at("attention");
  } catch (const json::exception& e) {
    fail(ErrorKind::Checkpoint, std::string("malformed generator config in checkpoint: ") + e.what());
  }
  return c;
}

std::string to_json(const discriminator::CriticConfig& c) {
  json j;
  j["input_size"] = c.input_size;
  j["channels_in"] = c.channels_in;
  j["num_layers"] = c.num_layers;
  j["base_width"] = c.base_width;
  return j.dump();
}

void save_module(const torch::nn::Module& module, const std::string& config_json, const fs::path& path) {
  try {
    torch::serialize::OutputArchive archive;
    module.save(archive);
    archive.write("sagan_config", c10::IValue(config_json));
    archive.save_to(path.string());
  } catch (const c10::Error& e) {
    fail(ErrorKind::Io, "cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

std::string read_module_config(const fs::path& path) {
  require(fs::exists(path), ErrorKind::Checkpoint, "missing checkpoint file " + path.string());
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    c10::IValue v;
    archive.read("sagan_config", v);
    return v.toStringRef();
  } catch (const c10::Error& e) {
    fail(ErrorKind::Checkpoint, "cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

void load_module(torch::nn::Module& module, const std::string& expected_config_json, const fs::path& path) {
  const auto stored = read_module_config(path);
  require(json::parse(stored) == json::parse(expected_config_json), ErrorKind::Checkpoint,
          "checkpoint " + path.string() + " was built with a different config: " + stored);
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    module.load(archive);
  } catch (const c10::Error& e) {
    fail(ErrorKind::Checkpoint, "cannot load checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

fs::path checkpoint_dir(const fs::path& out, std::int64_t iteration) {
  return out / ("ckpt_" + std::to_string(iteration));
}

Trainer::Trainer(ModelConfig model, TrainConfig train, synthesis::SynthParams synth, torch::Tensor normal_bank,
                 torch::Tensor unlabeled_bank)
    : model_(std::move(model)), train_(train), synth_(synth) {
  train_.validate();
  synth_.validate();
  require(model_.generator.input_size == model_.critic.input_size &&
              model_.generator.channels_in == model_.critic.channels_in,
          ErrorKind::Usage, "generator and critic disagree on the input shape");

  torch::manual_seed(mix_seed(train_.seed, 0));
  generator_ = generator::SpatialGenerator(model_.generator);
  critic_ = discriminator::PatchCritic(model_.critic);

  opt_g_ = std::make_unique<torch::optim::Adam>(
      generator_->parameters(),
      torch::optim::AdamOptions(train_.lr).betas({train_.adam_beta1, train_.adam_beta2}));
  opt_d_ = std::make_unique<torch::optim::Adam>(
      critic_->parameters(), torch::optim::AdamOptions(train_.lr).betas({train_.adam_beta1, train_.adam_beta2}));

  gen_rng_ = at::make_generator<at::CPUGeneratorImpl>(mix_seed(train_.seed, 7));
  synth_rng_.seed(mix_seed(train_.seed, 11));

  const auto bs = static_cast<std::size_t>(train_.batch_size);
  normal_stream_ = data::BatchStream(std::move(normal_bank), bs, mix_seed(train_.seed, 21));
  if (train_.include_unlabeled) unlabeled_stream_ = data::BatchStream(std::move(unlabeled_bank), bs, mix_seed(train_.seed, 22));
}

void Trainer::apply_lr() {
  const double lr = lr_current();
  for (auto* opt : {opt_g_.get(), opt_d_.get()})
    for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

torch::Tensor Trainer::fake_source(const torch::Tensor& normals, const torch::Tensor& unlabeled) {
  if (train_.include_unlabeled) return unlabeled;
  return synthesis::paired_batch(normals, synth_, synth_rng_).pseudo;
}

namespace {

void check_finite(std::initializer_list<std::pair<const char*, double>> values, const char* step, std::int64_t it) {
  for (const auto& [name, v] : values) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite " << step << " loss at iteration " << it << ":";
      for (const auto& [n, x] : values) os << " " << n << "=" << x;
      fail(ErrorKind::Numeric, os.str());
    }
  }
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

// Freezes a module for the lifetime of the guard.
struct FreezeGuard {
  torch::nn::Module& module;
  explicit FreezeGuard(torch::nn::Module& m) : module(m) { set_requires_grad(module, false); }
  ~FreezeGuard() { set_requires_grad(module, true); }
};

}  // namespace

losses::LossBreakdown Trainer::step_discriminator(const torch::Tensor& normals, const torch::Tensor& unlabeled) {
  apply_lr();
  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    fake = generator_->generate(fake_source(normals, unlabeled), generator::Mode::Train, &gen_rng_);
  }
  opt_d_->zero_grad();
  const losses::Critic critic_fn = [this](const torch::Tensor& x) { return critic_->forward(x); };
  auto terms = losses::discriminator_loss(critic_fn, normals, fake, train_.weights, gen_rng_);

  losses::LossBreakdown b;
  b.d_adv = terms.d_adv.item<double>();
  b.gp = terms.gp.item<double>();
  b.d_total = terms.total.item<double>();
  check_finite({{"d_adv", b.d_adv}, {"gp", b.gp}, {"d_total", b.d_total}}, "critic", g_steps_);

  terms.total.backward();
  opt_d_->step();
  ++d_steps_;
  last_d_ = b;
  return b;
}

losses::LossBreakdown Trainer::step_generator(const torch::Tensor& normals, const torch::Tensor& unlabeled) {
  apply_lr();
  const auto pairs = synthesis::paired_batch(normals, synth_, synth_rng_);
  const auto bn = normals.size(0);
  std::vector<torch::Tensor> inputs{normals, pairs.pseudo};
  if (train_.include_unlabeled) inputs.push_back(unlabeled);

  FreezeGuard frozen(*critic_);
  opt_g_->zero_grad();
  // Instance norm and delta are per sample, so one concatenated pass equals
  // three separate passes.
  const auto out = generator_->generate(torch::cat(inputs, 0), generator::Mode::Train, &gen_rng_);
  const auto restored_normals = out.narrow(0, 0, bn);
  const auto restored_pseudo = out.narrow(0, bn, bn);
  const auto fakes = train_.include_unlabeled ? out.narrow(0, 2 * bn, unlabeled.size(0)) : restored_pseudo;

  const auto id = losses::identity_loss(restored_normals, normals);
  const auto rec = losses::restoration_loss(restored_pseudo, normals);
  const auto adv = losses::generator_adv_loss(critic_->forward(fakes));
  const auto total = losses::generator_total(id, rec, adv, train_.weights);

  losses::LossBreakdown b = last_d_;
  b.id = id.item<double>();
  b.rec = rec.item<double>();
  b.g_adv = adv.item<double>();
  b.g_total = total.item<double>();
  check_finite({{"id", b.id}, {"rec", b.rec}, {"g_adv", b.g_adv}, {"g_total", b.g_total}}, "generator", g_steps_);

  total.backward();
  opt_g_->step();
  ++g_steps_;
  return b;
}

losses::LossBreakdown Trainer::iterate() {
  const auto draw_unlabeled = [this] { return train_.include_unlabeled ? unlabeled_stream_.next() : torch::Tensor(); };
  for (int k = 0; k < train_.d_steps_per_g_step; ++k) {
    auto xn = normal_stream_.next();
    auto xu = draw_unlabeled();
    step_discriminator(xn, xu);
  }
  auto xn = normal_stream_.next();
  auto xu = draw_unlabeled();
  return step_generator(xn, xu);
}

namespace {

json cursor_json(const data::BatchStream& s) { return {{"epoch", s.cursor().epoch}, {"batch", s.cursor().batch}}; }

data::BatchStream::Cursor cursor_from(const json& j) {
  return {j.at("epoch").get<std::uint64_t>(), j.at("batch").get<std::size_t>()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(out.good(), ErrorKind::Io, "cannot write " + path.string());
}

}  // namespace

void Trainer::save(const fs::path& dir, const std::string& run_config_json) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::Io, "cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  save_module(*generator_, to_json(model_.generator), dir / "generator.pt");
  save_module(*critic_, to_json(model_.critic), dir / "critic.pt");
  try {
    torch::save(*opt_g_, (dir / "optim_g.pt").string());
    torch::save(*opt_d_, (dir / "optim_d.pt").string());
    auto gen_copy = gen_rng_;
    torch::Tensor rng_state;
    {
      std::lock_guard<std::mutex> lock(gen_copy.mutex());
      rng_state = gen_copy.get_state();
    }
    torch::save(rng_state, (dir / "rng.pt").string());
  } catch (const c10::Error& e) {
    fail(ErrorKind::Io, "cannot write optimizer state in " + dir.string() + ": " + e.what_without_backtrace());
  }

  std::ostringstream synth_state;
  synth_state << synth_rng_;
  json state;
  state["iteration"] = g_steps_;
  state["g_steps"] = g_steps_;
  state["d_steps"] = d_steps_;
  state["lr_current"] = lr_current();
  state["synth_rng"] = synth_state.str();
  state["normal_cursor"] = cursor_json(normal_stream_);
  if (train_.include_unlabeled) state["unlabeled_cursor"] = cursor_json(unlabeled_stream_);
  state["last_critic"] = {{"d_adv", last_d_.d_adv}, {"gp", last_d_.gp}, {"d_total", last_d_.d_total}};
  write_text(dir / "state.json", state.dump(1) + "\n");
  if (!run_config_json.empty()) write_text(dir / "config.json", run_config_json + "\n");
}

void Trainer::load(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::Checkpoint, "checkpoint directory not found: " + dir.string());
  load_module(*generator_, to_json(model_.generator), dir / "generator.pt");
  load_module(*critic_, to_json(model_.critic), dir / "critic.pt");
  try {
    torch::load(*opt_g_, (dir / "optim_g.pt").string());
    torch::load(*opt_d_, (dir / "optim_d.pt").string());
    torch::Tensor rng_state;
    torch::load(rng_state, (dir / "rng.pt").string());
    std::lock_guard<std::mutex> lock(gen_rng_.mutex());
    gen_rng_.set_state(rng_state);
  } catch (const c10::Error& e) {
    fail(ErrorKind::Checkpoint, "cannot restore optimizer state from " + dir.string() + ": " + e.what_without_backtrace());
  }

  std::ifstream in(dir / "state.json");
  require(in.good(), ErrorKind::Checkpoint, "missing state.json in " + dir.string());
  try {
    const json state = json::parse(in);
    g_steps_ = state.at("g_steps");
    d_steps_ = state.at("d_steps");
    std::istringstream synth_state(state.at("synth_rng").get<std::string>());
    synth_state >> synth_rng_;
    normal_stream_.set_cursor(cursor_from(state.at("normal_cursor")));
    if (train_.include_unlabeled) unlabeled_stream_.set_cursor(cursor_from(state.at("unlabeled_cursor")));
    const auto& lc = state.at("last_critic");
    last_d_.d_adv = lc.at("d_adv");
    last_d_.gp = lc.at("gp");
    last_d_.d_total = lc.at("d_total");
  } catch (const json::exception& e) {
    fail(ErrorKind::Checkpoint, "malformed state.json in " + dir.string() + ": " + e.what());
  }
}

RunResult run_training(const ModelConfig& model, const TrainConfig& train, const synthesis::SynthParams& synth,
                       const data::DatasetRepartition& rep, int channels, const RunOptions& options) {
  require(!rep.normal_train.empty(), ErrorKind::Data, "normal_train split is empty");
  require(!train.include_unlabeled || !rep.unlabeled_train.empty(), ErrorKind::Data,
          "unlabeled_train split is empty (set train.include_unlabeled=false to train without it)");
  const int size = model.generator.input_size;
  auto normal_bank = data::load_images(rep.normal_train, size, channels);
  auto unlabeled_bank = train.include_unlabeled ? data::load_images(rep.unlabeled_train, size, channels) : torch::Tensor();

  Trainer trainer(model, train, synth, std::move(normal_bank), std::move(unlabeled_bank));
  if (options.resume_from) trainer.load(*options.resume_from);

  std::error_code ec;
  fs::create_directories(options.output_dir, ec);
  require(!ec, ErrorKind::Io, "cannot create output directory " + options.output_dir.string());
  std::ofstream log(options.output_dir / "loss_log.jsonl", std::ios::app);
  require(log.good(), ErrorKind::Io, "cannot open loss log in " + options.output_dir.string());

  const std::int64_t stop = options.stop_at.value_or(train.max_iterations);
  RunResult result;
  while (trainer.iteration() < stop) {
    const auto losses = trainer.iterate();
    const auto it = trainer.iteration();
    log << losses.to_log_line(it) << "\n";
    log.flush();
    if (options.on_iteration) options.on_iteration(it, losses);
    if (it % train.checkpoint_every == 0 || it == stop) {
      const auto dir = checkpoint_dir(options.output_dir, it);
      trainer.save(dir, options.run_config_json);
      result.checkpoints.push_back(dir);
    }
  }
  require(log.good(), ErrorKind::Io, "loss log write failed");
  result.iterations = trainer.iteration();
  result.d_steps = trainer.d_steps();
  return result;
}

}  // namespace sagan::training
