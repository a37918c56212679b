#include <sagan/sagan.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "config.hpp"
#include "data.hpp"
#include "evaluation.hpp"
#include "synthetic.hpp"
#include "training.hpp"

namespace fs = std::filesystem;
using namespace sagan;

struct sagan_config {
  RunConfig cfg;
  std::string json_cache;
};

struct sagan_trainer {
  RunConfig cfg;
  std::unique_ptr<training::Trainer> trainer;
};

struct sagan_model {
  generator::SpatialGenerator gen{nullptr};
  std::string generator_json;
  std::int64_t iteration = 0;
  std::string fingerprint;
  std::optional<RunConfig> run_config;
};

namespace {

thread_local std::string g_last_error;

int status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::Usage: return SAGAN_ERR_USAGE;
    case ErrorKind::Data: return SAGAN_ERR_DATA;
    case ErrorKind::Io: return SAGAN_ERR_IO;
    case ErrorKind::Numeric: return SAGAN_ERR_NUMERIC;
    case ErrorKind::Checkpoint: return SAGAN_ERR_CHECKPOINT;
  }
  return SAGAN_ERR_INTERNAL;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return SAGAN_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const c10::Error& e) {
    g_last_error = e.what_without_backtrace();
    return SAGAN_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SAGAN_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return SAGAN_ERR_INTERNAL;
  }
}

int invalid_handle(const char* what) {
  g_last_error = std::string("null ") + what;
  return SAGAN_ERR_INVALID_HANDLE;
}

void need(const void* p, const char* what) { require(p != nullptr, ErrorKind::Usage, std::string("null ") + what); }

fs::path output_root() {
  const char* env = std::getenv("SAGAN_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("sagan_out");
}

sagan_loss to_c(std::int64_t iteration, const losses::LossBreakdown& b) {
  return {iteration, b.id, b.rec, b.g_adv, b.g_total, b.d_adv, b.gp, b.d_total};
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  out << s;
  require(out.good(), ErrorKind::Io, "cannot write " + p.string());
}

}  // namespace

extern "C" {

const char* sagan_last_error(void) { return g_last_error.c_str(); }

const char* sagan_status_name(int status) {
  switch (status) {
    case SAGAN_OK: return "ok";
    case SAGAN_ERR_USAGE: return "usage error";
    case SAGAN_ERR_DATA: return "data error";
    case SAGAN_ERR_IO: return "io error";
    case SAGAN_ERR_NUMERIC: return "numeric error";
    case SAGAN_ERR_CHECKPOINT: return "checkpoint error";
    case SAGAN_ERR_INVALID_HANDLE: return "invalid handle";
    default: return "internal error";
  }
}

const char* sagan_version(void) { return "0.1.0"; }

int sagan_fingerprint(const char* text, char* out) {
  return guarded([&] {
    need(text, "text");
    need(out, "output buffer");
    std::snprintf(out, 17, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  });
}

int sagan_config_new(sagan_config** out) {
  return guarded([&] {
    need(out, "output handle");
    *out = new sagan_config{};
  });
}

int sagan_config_load(const char* path, sagan_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "output handle");
    *out = new sagan_config{RunConfig::load(path, false), {}};
  });
}

int sagan_config_parse(const char* json_text, sagan_config** out) {
  return guarded([&] {
    need(json_text, "json text");
    need(out, "output handle");
    auto j = nlohmann::json::parse(json_text, nullptr, false);
    require(!j.is_discarded(), ErrorKind::Usage, "config text is not valid JSON");
    *out = new sagan_config{RunConfig::from_json(j, false), {}};
  });
}

int sagan_config_set(sagan_config* cfg, const char* assignment) {
  if (!cfg) return invalid_handle("config");
  return guarded([&] {
    need(assignment, "assignment");
    cfg->cfg.apply_override(assignment);
  });
}

int sagan_config_json(sagan_config* cfg, const char** out) {
  if (!cfg) return invalid_handle("config");
  return guarded([&] {
    need(out, "output pointer");
    cfg->json_cache = cfg->cfg.to_json().dump(2);
    *out = cfg->json_cache.c_str();
  });
}

int sagan_config_get(sagan_config* cfg, const char* key, const char** out) {
  if (!cfg) return invalid_handle("config");
  return guarded([&] {
    need(key, "key");
    need(out, "output pointer");
    const auto j = cfg->cfg.to_json();
    const nlohmann::ordered_json* node = &j;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) {
      require(node->is_object() && node->contains(part), ErrorKind::Usage, std::string("unknown config key '") + key + "'");
      node = &node->at(part);
    }
    cfg->json_cache = node->is_string() ? node->get<std::string>() : node->dump();
    *out = cfg->json_cache.c_str();
  });
}

int sagan_config_fingerprint(const sagan_config* cfg, char* out) {
  if (!cfg) return invalid_handle("config");
  return guarded([&] {
    need(out, "output buffer");
    std::snprintf(out, 17, "%s", cfg->cfg.fingerprint().c_str());
  });
}

void sagan_config_free(sagan_config* cfg) { delete cfg; }

const char* sagan_config_keys(void) {
  static const std::string keys = describe_config_keys();
  return keys.c_str();
}

int sagan_prepare(const char* manifest_path, double anomaly_ratio, const sagan_split_sizes* sizes, uint64_t seed,
                  const char* out_path, sagan_repartition_summary* summary) {
  return guarded([&] {
    need(manifest_path, "manifest path");
    need(sizes, "split sizes");
    need(out_path, "output path");
    require(anomaly_ratio >= 0.0 && anomaly_ratio <= 1.0, ErrorKind::Usage, "anomaly ratio must lie in [0, 1]");
    const auto records = data::load_manifest(manifest_path);
    const auto rep = data::build_repartition(
        records, anomaly_ratio, {sizes->normal_train, sizes->unlabeled, sizes->test_normal, sizes->test_abnormal}, seed);
    data::save_repartition(rep, out_path);
    if (summary) {
      summary->normal_train = rep.normal_train.size();
      summary->unlabeled = rep.unlabeled_train.size();
      summary->unlabeled_abnormal = rep.hidden_abnormal_count();
      summary->test_abnormal = static_cast<size_t>(std::count_if(
          rep.test.begin(), rep.test.end(), [](const auto& r) { return r.label == data::Label::Abnormal; }));
      summary->test_normal = rep.test.size() - summary->test_abnormal;
      summary->anomaly_ratio = rep.anomaly_ratio;
      summary->seed = rep.seed;
    }
  });
}

void sagan_synthetic_defaults(sagan_synthetic_options* opts) {
  if (!opts) return;
  *opts = {};
  opts->size = 64;
  opts->test_normal = opts->test_abnormal = opts->normal_train = -1;
}

int sagan_make_synthetic(const sagan_synthetic_options* opts, const char* out_dir, sagan_synthetic_summary* summary) {
  return guarded([&] {
    need(opts, "options");
    need(out_dir, "output directory");
    synthetic::SyntheticSpec spec;
    spec.n_normal = opts->n_normal;
    spec.n_abnormal = opts->n_abnormal;
    spec.size = opts->size;
    spec.seed = opts->seed;
    if (opts->test_normal >= 0) spec.test_normal = static_cast<std::size_t>(opts->test_normal);
    if (opts->test_abnormal >= 0) spec.test_abnormal = static_cast<std::size_t>(opts->test_abnormal);
    if (opts->normal_train >= 0) spec.normal_train = static_cast<std::size_t>(opts->normal_train);
    const auto s = synthetic::make_synthetic(spec, out_dir);
    if (summary) *summary = {s.normal_train, s.unlabeled_normal, s.unlabeled_abnormal, s.test_normal, s.test_abnormal};
  });
}

int sagan_synth_preview(const sagan_config* cfg, const char* repartition_path, size_t count, const char* out_dir) {
  if (!cfg) return invalid_handle("config");
  return guarded([&] {
    need(repartition_path, "repartition path");
    need(out_dir, "output directory");
    const auto& c = cfg->cfg;
    c.validate();
    const auto rep = data::load_repartition(repartition_path);
    require(!rep.normal_train.empty(), ErrorKind::Data, "normal_train split is empty");
    const std::vector<data::ImageRecord> recs(rep.normal_train.begin(),
                                              rep.normal_train.begin() + static_cast<std::ptrdiff_t>(std::min(count, rep.normal_train.size())));
    const auto batch = data::load_images(recs, c.data.image_size, c.data.channels);
    Rng rng(mix_seed(c.train.seed, 11));
    const auto pairs = synthesis::paired_batch(batch, c.synthesis, rng);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto k = static_cast<std::int64_t>(i);
      const auto mask = (pairs.masks[k] * 2 - 1).unsqueeze(0).expand_as(batch[k]);
      data::save_image(torch::cat({batch[k], pairs.pseudo[k], mask}, 2), fs::path(out_dir) / (recs[i].id + "_preview.png"));
    }
  });
}

int sagan_trainer_new(const sagan_config* cfg, const char* resume_dir, sagan_trainer** out) {
  if (!cfg) return invalid_handle("config");
  return guarded([&] {
    need(out, "output handle");
    const auto& c = cfg->cfg;
    c.validate();
    require(!c.data.repartition.empty(), ErrorKind::Usage, "data.repartition is not set");
    const auto rep = data::load_repartition(c.data.repartition);
    require(!rep.normal_train.empty(), ErrorKind::Data, "normal_train split is empty");
    require(!c.train.include_unlabeled || !rep.unlabeled_train.empty(), ErrorKind::Data, "unlabeled_train split is empty");
    auto normals = data::load_images(rep.normal_train, c.data.image_size, c.data.channels);
    auto unlabeled = c.train.include_unlabeled ? data::load_images(rep.unlabeled_train, c.data.image_size, c.data.channels)
                                               : torch::Tensor();
    auto t = std::make_unique<sagan_trainer>();
    t->cfg = c;
    t->trainer = std::make_unique<training::Trainer>(c.model(), c.train, c.synthesis, std::move(normals), std::move(unlabeled));
    if (resume_dir) t->trainer->load(resume_dir);
    *out = t.release();
  });
}

int sagan_trainer_step(sagan_trainer* t, int64_t steps, sagan_loss* last) {
  if (!t) return invalid_handle("trainer");
  return guarded([&] {
    require(steps >= 0, ErrorKind::Usage, "steps must be non-negative");
    losses::LossBreakdown b;
    for (int64_t i = 0; i < steps; ++i) b = t->trainer->iterate();
    if (last) *last = to_c(t->trainer->iteration(), b);
  });
}

int sagan_trainer_counters(const sagan_trainer* t, int64_t* g_steps, int64_t* d_steps, double* lr) {
  if (!t) return invalid_handle("trainer");
  return guarded([&] {
    if (g_steps) *g_steps = t->trainer->g_steps();
    if (d_steps) *d_steps = t->trainer->d_steps();
    if (lr) *lr = t->trainer->lr_current();
  });
}

int sagan_trainer_save(sagan_trainer* t, const char* dir) {
  if (!t) return invalid_handle("trainer");
  return guarded([&] {
    need(dir, "directory");
    t->trainer->save(dir, t->cfg.to_json().dump(2));
  });
}

void sagan_trainer_free(sagan_trainer* t) { delete t; }

int sagan_train(const sagan_config* cfg, const char* resume_dir, int64_t stop_at, sagan_progress_fn fn, void* user,
                int64_t* checkpoints_written) {
  if (!cfg) return invalid_handle("config");
  return guarded([&] {
    RunConfig c = cfg->cfg;
    c.validate();
    require(!c.data.repartition.empty(), ErrorKind::Usage, "data.repartition is not set");
    if (c.output_dir.empty()) c.output_dir = (output_root() / "run").string();
    const auto rep = data::load_repartition(c.data.repartition);
    const auto resolved = c.to_json().dump(2);
    write_text(fs::path(c.output_dir) / "config.resolved.json", resolved + "\n");

    training::RunOptions opts;
    opts.output_dir = c.output_dir;
    opts.run_config_json = resolved;
    if (resume_dir) opts.resume_from = fs::path(resume_dir);
    if (stop_at > 0) opts.stop_at = stop_at;
    if (fn) {
      opts.on_iteration = [fn, user](std::int64_t it, const losses::LossBreakdown& b) {
        const auto l = to_c(it, b);
        fn(&l, user);
      };
    }
    const auto result = training::run_training(c.model(), c.train, c.synthesis, rep, c.data.channels, opts);
    if (checkpoints_written) *checkpoints_written = static_cast<int64_t>(result.checkpoints.size());
  });
}

int sagan_model_load(const char* checkpoint_dir, sagan_model** out) {
  return guarded([&] {
    need(checkpoint_dir, "checkpoint directory");
    need(out, "output handle");
    const fs::path dir(checkpoint_dir);
    require(fs::is_directory(dir), ErrorKind::Checkpoint, "checkpoint directory not found: " + dir.string());
    auto m = std::make_unique<sagan_model>();
    m->generator_json = training::read_module_config(dir / "generator.pt");
    m->gen = generator::SpatialGenerator(training::generator_config_from_json(m->generator_json));
    training::load_module(*m->gen, m->generator_json, dir / "generator.pt");
    m->gen->eval();
    if (std::ifstream state(dir / "state.json"); state.good())
      m->iteration = nlohmann::json::parse(state).value("iteration", std::int64_t{0});
    if (std::ifstream cfg(dir / "config.json"); cfg.good()) {
      m->run_config = RunConfig::from_json(nlohmann::json::parse(cfg));
      m->fingerprint = m->run_config->fingerprint();
    } else {
      char fp[17];
      std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(fnv1a(m->generator_json)));
      m->fingerprint = fp;
    }
    *out = m.release();
  });
}

int sagan_model_info(const sagan_model* m, int* image_size, int* channels, int64_t* iteration) {
  if (!m) return invalid_handle("model");
  return guarded([&] {
    if (image_size) *image_size = m->gen->config().input_size;
    if (channels) *channels = m->gen->config().channels_in;
    if (iteration) *iteration = m->iteration;
  });
}

int sagan_model_restore(sagan_model* m, const float* images, size_t count, float* out) {
  if (!m) return invalid_handle("model");
  return guarded([&] {
    need(images, "images");
    need(out, "output buffer");
    const auto& gc = m->gen->config();
    const auto in = torch::from_blob(const_cast<float*>(images),
                                     {static_cast<std::int64_t>(count), gc.channels_in, gc.input_size, gc.input_size},
                                     torch::kFloat32);
    const auto restored = evaluation::restore(m->gen, in, 64).contiguous();
    std::memcpy(out, restored.data_ptr<float>(), sizeof(float) * static_cast<std::size_t>(restored.numel()));
  });
}

int sagan_model_evaluate(sagan_model* m, const sagan_config* cfg, const char* repartition_path, const char* report_path,
                         sagan_eval_summary* summary) {
  if (!m) return invalid_handle("model");
  return guarded([&] {
    need(repartition_path, "repartition path");
    need(report_path, "report path");
    evaluation::EvalConfig eval;
    std::string fingerprint = m->fingerprint;
    if (cfg) {
      cfg->cfg.validate();
      const auto expected = training::to_json(cfg->cfg.generator);
      require(nlohmann::json::parse(expected) == nlohmann::json::parse(m->generator_json), ErrorKind::Checkpoint,
              "config does not match the checkpoint's generator: " + m->generator_json);
      eval = cfg->cfg.eval;
      fingerprint = cfg->cfg.fingerprint();
    } else if (m->run_config) {
      eval = m->run_config->eval;
    }
    const auto rep = data::load_repartition(repartition_path);
    auto report = evaluation::evaluate(m->gen, rep.test, eval, m->gen->config().channels_in);
    report.config_fingerprint = fingerprint;
    report.checkpoint_iteration = m->iteration;
    evaluation::write_report(report, report_path);
    if (summary) *summary = {report.entries.size(), report.auc, report.ap};
  });
}

int sagan_model_heatmaps(sagan_model* m, const char* const* image_paths, size_t count, const char* out_dir) {
  if (!m) return invalid_handle("model");
  return guarded([&] {
    need(out_dir, "output directory");
    require(count == 0 || image_paths != nullptr, ErrorKind::Usage, "null image list");
    const auto& gc = m->gen->config();
    for (size_t i = 0; i < count; ++i) {
      need(image_paths[i], "image path");
      const fs::path p(image_paths[i]);
      const auto x = data::load_image(p, gc.input_size, gc.channels_in);
      const auto restored = evaluation::restore(m->gen, x.unsqueeze(0), 1)[0];
      const auto stem = p.stem().string();
      data::save_image(x, fs::path(out_dir) / (stem + "_input.png"));
      data::save_image(restored, fs::path(out_dir) / (stem + "_restored.png"));
      evaluation::export_heatmap(stem, evaluation::heatmap(x, restored), out_dir);
    }
  });
}

void sagan_model_free(sagan_model* m) { delete m; }

int sagan_heatmap_arrays(const float* image, const float* restored, int channels, int height, int width, const char* id,
                         const char* out_dir) {
  return guarded([&] {
    need(image, "image");
    need(restored, "restored image");
    need(id, "id");
    need(out_dir, "output directory");
    require(channels > 0 && height > 0 && width > 0, ErrorKind::Usage, "dimensions must be positive");
    const auto x = torch::from_blob(const_cast<float*>(image), {channels, height, width}, torch::kFloat32);
    const auto y = torch::from_blob(const_cast<float*>(restored), {channels, height, width}, torch::kFloat32);
    evaluation::export_heatmap(id, evaluation::heatmap(x, y), out_dir);
  });
}

int sagan_metrics(const double* scores, const int* labels, size_t n, double* auc, double* ap) {
  return guarded([&] {
    need(scores, "scores");
    need(labels, "labels");
    const std::vector<double> s(scores, scores + n);
    const std::vector<int> l(labels, labels + n);
    if (auc) *auc = evaluation::auc(s, l);
    if (ap) *ap = evaluation::average_precision(s, l);
  });
}

}  // extern "C"
