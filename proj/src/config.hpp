#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "discriminator.hpp"
#include "evaluation.hpp"
#include "generator.hpp"
#include "synthesis.hpp"
#include "training.hpp"

namespace sagan {

struct DataConfig {
  std::string repartition;
  int image_size = 64;
  int channels = 1;
};

/// Complete, validated configuration of a run. Image shape lives in `data`
/// and is copied into the generator and critic configs.
struct RunConfig {
  DataConfig data;
  generator::GeneratorConfig generator;
  discriminator::CriticConfig critic;
  training::TrainConfig train;
  synthesis::SynthParams synthesis;
  evaluation::EvalConfig eval;
  std::string output_dir;

  nlohmann::ordered_json to_json() const;
  /// Missing keys keep their defaults; unknown keys and type mismatches throw.
  /// Cross-field checks run only when `check` is set, so a file can be
  /// completed by later overrides.
  static RunConfig from_json(const nlohmann::json& j, bool check = true);
  static RunConfig load(const std::string& path, bool check = true);

  /// Applies `section.key=value`; the value is parsed as JSON, falling back to a
  /// bare string. Call validate() once all overrides are in.
  void apply_override(const std::string& assignment);

  void validate() const;
  training::ModelConfig model() const;
  /// 16 hex digits of FNV-1a over the canonical JSON.
  std::string fingerprint() const;
};

/// One `key = default  # help` line per config key.
std::string describe_config_keys();

}  // namespace sagan
