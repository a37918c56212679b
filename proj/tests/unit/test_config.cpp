#include <doctest.h>

#include <fstream>

#include "config.hpp"
#include "oracles.hpp"

using namespace sagan;
using nlohmann::json;

TEST_SUITE("config") {

TEST_CASE("defaults") {
  RunConfig c;
  CHECK(c.train.lr == 5e-5);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.max_iterations == 100000);
  CHECK(c.train.d_steps_per_g_step == 2);
  CHECK(c.train.weights.lambda_id == 10);
  CHECK(c.train.weights.lambda_rec == 10);
  CHECK(c.train.weights.lambda_gp == 10);
  CHECK(c.train.lr_decay_factor == 0.95);
  CHECK(c.generator.patch_grid_n == 2);
  CHECK(c.data.image_size == 64);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("partial json keeps defaults and propagates image shape") {
  auto c = RunConfig::from_json(json::parse(R"({"data":{"image_size":32},"train":{"lr":0.001}})"));
  CHECK(c.train.lr == 0.001);
  CHECK(c.train.batch_size == 64);
  CHECK(c.generator.input_size == 32);
  CHECK(c.critic.input_size == 32);
  CHECK(c.generator.num_levels == 4);
}

TEST_CASE("unknown keys and wrong types are rejected") {
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"trian":{}})")), Error);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"train":{"lr":"fast"}})")), Error);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"train":{"batch_size":1.5}})")), Error);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"generator":{"gate_scope":"both"}})")), Error);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"train":{"lr":-1}})")), Error);
  try {
    RunConfig::from_json(json::parse(R"({"train":{"learning_rate":1}})"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Usage);
    CHECK(std::string(e.what()).find("train.learning_rate") != std::string::npos);
  }
}

TEST_CASE("overrides") {
  RunConfig c;
  c.apply_override("train.lr=0.01");
  c.apply_override("data.repartition=some/file.json");
  c.apply_override("generator.gate_levels=[0,2]");
  c.apply_override("train.include_unlabeled=false");
  c.apply_override("eval.score_mode=max");
  CHECK(c.train.lr == 0.01);
  CHECK(c.data.repartition == "some/file.json");
  CHECK(c.generator.gate_levels == std::vector<int>{0, 2});
  CHECK_FALSE(c.train.include_unlabeled);
  CHECK(c.eval.score_mode == evaluation::ScoreMode::Max);
  CHECK_THROWS_AS(c.apply_override("train.nope=1"), Error);
  CHECK_THROWS_AS(c.apply_override("no_equals"), Error);
  CHECK_THROWS_AS(c.apply_override("train.batch_size=big"), Error);
}

TEST_CASE("cross-field checks wait for validate") {
  RunConfig c;
  c.apply_override("data.image_size=16");  // too small for the default depth
  CHECK_THROWS_AS(c.validate(), Error);
  c.apply_override("generator.num_levels=2");
  c.apply_override("critic.num_layers=3");
  CHECK_NOTHROW(c.validate());
  CHECK_NOTHROW(RunConfig::from_json(json::parse(R"({"data":{"image_size":16}})"), false));
}

TEST_CASE("json round-trip and fingerprints") {
  RunConfig c;
  c.apply_override("train.seed=9");
  auto back = RunConfig::from_json(json::parse(c.to_json().dump()));
  CHECK(back.to_json() == c.to_json());
  CHECK(back.fingerprint() == c.fingerprint());
  CHECK(c.fingerprint().size() == 16);
  back.apply_override("train.seed=10");
  CHECK(back.fingerprint() != c.fingerprint());
}

TEST_CASE("load from file") {
  testutil::TempDir dir("cfg");
  std::ofstream(dir.path / "c.json") << R"({"critic":{"base_width":8}})";
  CHECK(RunConfig::load((dir.path / "c.json").string()).critic.base_width == 8);
  std::ofstream(dir.path / "bad.json") << "{";
  CHECK_THROWS_AS(RunConfig::load((dir.path / "bad.json").string()), Error);
  CHECK_THROWS_AS(RunConfig::load((dir.path / "missing.json").string()), Error);
}

TEST_CASE("key listing covers every leaf with its default") {
  const auto text = describe_config_keys();
  for (const char* k : {"train.lr = 5e-05", "train.batch_size = 64", "loss.lambda_gp = 10.0", "generator.patch_grid_n = 2",
                        "train.include_unlabeled = true", "eval.score_mode = \"mean\"", "output_dir = \"\""})
    CHECK_MESSAGE(text.find(k) != std::string::npos, k);
}

}  // TEST_SUITE
