// Command-line front end over the sagan C API.
#include <sagan/sagan.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

int exit_code(int status) {
  if (status == SAGAN_OK) return 0;
  return status == SAGAN_ERR_USAGE || status == SAGAN_ERR_DATA ? kExitUsage : kExitRuntime;
}

int report(int status, const char* what) {
  if (status != SAGAN_OK)
    std::cerr << "sagan " << what << ": " << sagan_status_name(status) << ": " << sagan_last_error() << "\n";
  return exit_code(status);
}

fs::path output_root() {
  const char* env = std::getenv("SAGAN_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("sagan_out");
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "JSON config file");
    cmd->add_option("overrides", overrides, "key=value config overrides");
    cmd->footer(std::string("Config keys (defaults):\n") + sagan_config_keys());
  }

  // Resolves file + overrides into a config handle; returns a sagan_status.
  int resolve(sagan_config** out) const {
    int st = path.empty() ? sagan_config_new(out) : sagan_config_load(path.c_str(), out);
    if (st != SAGAN_OK) return st;
    for (const auto& o : overrides) {
      st = sagan_config_set(*out, o.c_str());
      if (st != SAGAN_OK) return st;
    }
    return SAGAN_OK;
  }
};

void print_fingerprint(const sagan_config* cfg) {
  char fp[17];
  if (sagan_config_fingerprint(cfg, fp) == SAGAN_OK) std::cout << "config fingerprint: " << fp << "\n";
}

void print_text_fingerprint(const std::string& text) {
  char fp[17];
  if (sagan_fingerprint(text.c_str(), fp) == SAGAN_OK) std::cout << "config fingerprint: " << fp << "\n";
}

struct ConfigHandle {
  sagan_config* ptr = nullptr;
  ~ConfigHandle() { sagan_config_free(ptr); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sagan: semi-supervised anomaly detection by adversarial restoration"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sagan_version());

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Build a T_n / T_u / T_test repartition from a manifest");
  std::string manifest, rep_out;
  double ar = 0.6;
  sagan_split_sizes sizes{0, 0, 0, 0};
  std::uint64_t prep_seed = 0;
  prepare->add_option("--manifest", manifest, "CSV manifest with header id,path,label,split")->required();
  prepare->add_option("--ar", ar, "anomaly ratio of the unlabeled set")->capture_default_str();
  prepare->add_option("--normal-train", sizes.normal_train, "|T_n|")->required();
  prepare->add_option("--unlabeled", sizes.unlabeled, "|T_u|")->required();
  prepare->add_option("--test-normal", sizes.test_normal, "normal test images")->required();
  prepare->add_option("--test-abnormal", sizes.test_abnormal, "abnormal test images")->required();
  prepare->add_option("--seed", prep_seed, "sampling seed")->capture_default_str();
  prepare->add_option("--out", rep_out, "repartition file (default $SAGAN_OUTPUT_ROOT/repartition.json)");

  // make-synthetic
  auto* make_syn = app.add_subcommand("make-synthetic", "Write the synthetic-shapes image tree and manifest");
  sagan_synthetic_options syn;
  sagan_synthetic_defaults(&syn);
  std::string syn_out;
  make_syn->add_option("--n-normal", syn.n_normal, "normal images")->required();
  make_syn->add_option("--n-abnormal", syn.n_abnormal, "abnormal images")->required();
  make_syn->add_option("--size", syn.size, "image side")->capture_default_str();
  make_syn->add_option("--seed", syn.seed, "seed")->capture_default_str();
  make_syn->add_option("--test-normal", syn.test_normal, "normals in the test pool (-1: 20%)")->capture_default_str();
  make_syn->add_option("--test-abnormal", syn.test_abnormal, "abnormals in the test pool (-1: 20%)")->capture_default_str();
  make_syn->add_option("--normal-train", syn.normal_train, "normals in the normal_train pool (-1: half the rest)")
      ->capture_default_str();
  make_syn->add_option("--out", syn_out, "output directory (default $SAGAN_OUTPUT_ROOT/synthetic)");

  // synth-preview
  auto* preview = app.add_subcommand("synth-preview", "Write source | pseudo-anomaly | mask strips");
  ConfigArgs preview_cfg;
  std::string preview_rep, preview_out;
  std::size_t preview_count = 8;
  preview->add_option("--repartition", preview_rep, "repartition file")->required();
  preview->add_option("--count", preview_count, "images to preview")->capture_default_str();
  preview->add_option("--out", preview_out, "output directory (default $SAGAN_OUTPUT_ROOT/preview)");
  preview_cfg.attach(preview);

  // train
  auto* train = app.add_subcommand("train", "Adversarial training; writes checkpoints and a loss log");
  ConfigArgs train_cfg;
  std::string resume;
  train->add_option("--resume", resume, "ckpt_<n> directory to resume from");
  train_cfg.attach(train);

  // eval
  auto* eval = app.add_subcommand("eval", "Score the test split and report AUC / AP");
  ConfigArgs eval_cfg;
  std::string eval_ckpt, eval_rep, eval_report;
  eval->add_option("--checkpoint", eval_ckpt, "ckpt_<n> directory")->required();
  eval->add_option("--repartition", eval_rep, "repartition file (default: data.repartition of the run)");
  eval->add_option("--report", eval_report, "report path (default <checkpoint>/report.txt)");
  eval_cfg.attach(eval);

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "Export restoration difference heatmaps");
  std::string heat_ckpt, heat_out;
  std::vector<std::string> heat_images;
  heat->add_option("--checkpoint", heat_ckpt, "ckpt_<n> directory")->required();
  heat->add_option("--out", heat_out, "output directory (default $SAGAN_OUTPUT_ROOT/heatmaps)");
  heat->add_option("images", heat_images, "image files")->required();
  for (auto* cmd : {prepare, make_syn, heat}) cmd->footer(std::string("Config keys (defaults):\n") + sagan_config_keys());

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (*prepare) {
    if (rep_out.empty()) rep_out = (output_root() / "repartition.json").string();
    if (!(ar >= 0.0 && ar <= 1.0)) {
      std::cerr << "sagan prepare: --ar must lie in [0, 1]\n";
      return kExitUsage;
    }
    print_text_fingerprint(manifest + "|" + std::to_string(ar) + "|" + std::to_string(sizes.normal_train) + "|" +
                           std::to_string(sizes.unlabeled) + "|" + std::to_string(sizes.test_normal) + "|" +
                           std::to_string(sizes.test_abnormal) + "|" + std::to_string(prep_seed));
    sagan_repartition_summary s{};
    const int st = sagan_prepare(manifest.c_str(), ar, &sizes, prep_seed, rep_out.c_str(), &s);
    if (st != SAGAN_OK) return report(st, "prepare");
    std::cout << "repartition: " << rep_out << "\n"
              << "normal_train: " << s.normal_train << "\n"
              << "unlabeled_train: " << s.unlabeled << " (hidden abnormal " << s.unlabeled_abnormal << ", AR "
              << (s.unlabeled ? static_cast<double>(s.unlabeled_abnormal) / static_cast<double>(s.unlabeled) : 0.0)
              << ")\n"
              << "test: " << s.test_normal << " normal + " << s.test_abnormal << " abnormal\n";
    return 0;
  }

  if (*make_syn) {
    if (syn_out.empty()) syn_out = (output_root() / "synthetic").string();
    print_text_fingerprint(std::to_string(syn.n_normal) + "|" + std::to_string(syn.n_abnormal) + "|" +
                           std::to_string(syn.size) + "|" + std::to_string(syn.seed) + "|" +
                           std::to_string(syn.test_normal) + "|" + std::to_string(syn.test_abnormal) + "|" +
                           std::to_string(syn.normal_train));
    sagan_synthetic_summary s{};
    const int st = sagan_make_synthetic(&syn, syn_out.c_str(), &s);
    if (st != SAGAN_OK) return report(st, "make-synthetic");
    std::cout << "manifest: " << (fs::path(syn_out) / "manifest.csv").string() << "\n"
              << "normal_train pool: " << s.normal_train << "\n"
              << "unlabeled pool: " << s.unlabeled_normal << " normal + " << s.unlabeled_abnormal << " abnormal\n"
              << "test pool: " << s.test_normal << " normal + " << s.test_abnormal << " abnormal\n";
    return 0;
  }

  if (*preview) {
    ConfigHandle cfg;
    if (int st = preview_cfg.resolve(&cfg.ptr); st != SAGAN_OK) return report(st, "synth-preview");
    print_fingerprint(cfg.ptr);
    if (preview_out.empty()) preview_out = (output_root() / "preview").string();
    const int st = sagan_synth_preview(cfg.ptr, preview_rep.c_str(), preview_count, preview_out.c_str());
    if (st != SAGAN_OK) return report(st, "synth-preview");
    std::cout << "previews: " << preview_out << "\n";
    return 0;
  }

  if (*train) {
    ConfigHandle cfg;
    if (int st = train_cfg.resolve(&cfg.ptr); st != SAGAN_OK) return report(st, "train");
    print_fingerprint(cfg.ptr);
    const auto progress = [](const sagan_loss* l, void*) {
      if (l->iteration % 100 == 0)
        std::printf("iter %lld  g_total %.4f  id %.4f  rec %.4f  g_adv %.4f  d_total %.4f  gp %.4f\n",
                    static_cast<long long>(l->iteration), l->g_total, l->id, l->rec, l->g_adv, l->d_total, l->gp);
    };
    std::int64_t written = 0;
    const int st = sagan_train(cfg.ptr, resume.empty() ? nullptr : resume.c_str(), 0, progress, nullptr, &written);
    if (st != SAGAN_OK) return report(st, "train");
    std::cout << "checkpoints written: " << written << "\n";
    return 0;
  }

  if (*eval) {
    sagan_model* model = nullptr;
    if (int st = sagan_model_load(eval_ckpt.c_str(), &model); st != SAGAN_OK) return report(st, "eval");
    ConfigHandle cfg;
    const bool explicit_cfg = !eval_cfg.path.empty() || !eval_cfg.overrides.empty();
    if (explicit_cfg) {
      if (int st = eval_cfg.resolve(&cfg.ptr); st != SAGAN_OK) {
        sagan_model_free(model);
        return report(st, "eval");
      }
    } else if (fs::exists(fs::path(eval_ckpt) / "config.json")) {
      if (int st = sagan_config_load((fs::path(eval_ckpt) / "config.json").c_str(), &cfg.ptr); st != SAGAN_OK) {
        sagan_model_free(model);
        return report(st, "eval");
      }
    } else {
      sagan_config_new(&cfg.ptr);
    }
    print_fingerprint(cfg.ptr);
    if (eval_rep.empty()) {
      const char* value = nullptr;
      if (sagan_config_get(cfg.ptr, "data.repartition", &value) == SAGAN_OK && value) eval_rep = value;
    }
    if (eval_rep.empty()) {
      sagan_model_free(model);
      std::cerr << "sagan eval: no --repartition given and the run config names none\n";
      return kExitUsage;
    }
    if (eval_report.empty()) eval_report = (fs::path(eval_ckpt) / "report.txt").string();
    sagan_eval_summary s{};
    const int st = sagan_model_evaluate(model, explicit_cfg ? cfg.ptr : nullptr, eval_rep.c_str(), eval_report.c_str(), &s);
    sagan_model_free(model);
    if (st != SAGAN_OK) return report(st, "eval");
    std::printf("report: %s\nentries: %zu\nAUC: %.6f\nAP: %.6f\n", eval_report.c_str(), s.entries, s.auc, s.ap);
    return 0;
  }

  if (*heat) {
    sagan_model* model = nullptr;
    if (int st = sagan_model_load(heat_ckpt.c_str(), &model); st != SAGAN_OK) return report(st, "heatmap");
    if (fs::exists(fs::path(heat_ckpt) / "config.json")) {
      ConfigHandle cfg;
      if (sagan_config_load((fs::path(heat_ckpt) / "config.json").c_str(), &cfg.ptr) == SAGAN_OK) print_fingerprint(cfg.ptr);
    }
    if (heat_out.empty()) heat_out = (output_root() / "heatmaps").string();
    std::vector<const char*> paths;
    for (const auto& p : heat_images) paths.push_back(p.c_str());
    const int st = sagan_model_heatmaps(model, paths.data(), paths.size(), heat_out.c_str());
    sagan_model_free(model);
    if (st != SAGAN_OK) return report(st, "heatmap");
    std::cout << "heatmaps: " << heat_out << " (" << paths.size() << " images)\n";
    return 0;
  }
  return kExitUsage;
}
