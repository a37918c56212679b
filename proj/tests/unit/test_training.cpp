#include <doctest.h>

#include <fstream>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "training.hpp"

using namespace sagan;
using namespace sagan::training;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.generator.input_size = 16;
  m.generator.base_width = 4;
  m.generator.num_levels = 2;
  m.critic.input_size = 16;
  m.critic.num_layers = 3;
  m.critic.base_width = 4;
  return m;
}

TrainConfig tiny_train(std::uint64_t seed = 1) {
  TrainConfig t;
  t.batch_size = 4;
  t.seed = seed;
  t.lr = 1e-3;
  t.checkpoint_every = 5;
  return t;
}

torch::Tensor bank(std::int64_t n, std::uint64_t seed) {
  torch::manual_seed(seed);
  return torch::rand({n, 1, 16, 16}) * 2 - 1;
}

Trainer make(const TrainConfig& t, const ModelConfig& m = tiny_model()) {
  return Trainer(m, t, synthesis::SynthParams{}, bank(10, 100), bank(10, 200));
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool same(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!torch::equal(a[i], b[i])) return false;
  return true;
}

bool same(const losses::LossBreakdown& a, const losses::LossBreakdown& b) {
  return a.to_log_line(0) == b.to_log_line(0);
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("learning rate schedule") {
  TrainConfig t;
  t.lr_decay_factor = 0.9;
  CHECK(lr_at(t, 0) == 5e-5);
  CHECK(lr_at(t, 999) == 5e-5);
  CHECK(lr_at(t, 1000) == doctest::Approx(4.5e-5).epsilon(1e-14));
  CHECK(lr_at(t, 2500) == doctest::Approx(5e-5 * 0.9 * 0.9).epsilon(1e-14));
}

TEST_CASE("two critic steps per generator step") {
  auto tr = make(tiny_train());
  for (int i = 0; i < 30; ++i) tr.iterate();
  CHECK(tr.g_steps() == 30);
  CHECK(tr.d_steps() == 60);
  auto t = tiny_train();
  t.d_steps_per_g_step = 5;
  auto tr5 = make(t);
  for (int i = 0; i < 10; ++i) tr5.iterate();
  CHECK(tr5.d_steps() == 50);
}

TEST_CASE("equal seeds give equal loss sequences") {
  auto a = make(tiny_train(3)), b = make(tiny_train(3)), c = make(tiny_train(4));
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 50; ++i) {
    auto la = a.iterate(), lb = b.iterate(), lc = c.iterate();
    all_equal = all_equal && same(la, lb);
    any_diff = any_diff || !same(la, lc);
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("critic steps leave the generator alone and vice versa") {
  auto tr = make(tiny_train());
  auto xn = bank(4, 1), xu = bank(4, 2);
  auto g0 = snapshot(*tr.generator()), d0 = snapshot(*tr.critic());
  tr.step_discriminator(xn, xu);
  CHECK(same(g0, snapshot(*tr.generator())));
  CHECK_FALSE(same(d0, snapshot(*tr.critic())));
  auto d1 = snapshot(*tr.critic());
  tr.step_generator(xn, xu);
  CHECK(same(d1, snapshot(*tr.critic())));
  CHECK_FALSE(same(g0, snapshot(*tr.generator())));
  for (const auto& p : tr.critic()->parameters()) CHECK(p.requires_grad());
}

TEST_CASE("zero learning rate keeps every parameter and still reports losses") {
  auto t = tiny_train();
  t.lr = 0;
  auto tr = make(t);
  auto g0 = snapshot(*tr.generator()), d0 = snapshot(*tr.critic());
  auto l = tr.iterate();
  CHECK(same(g0, snapshot(*tr.generator())));
  CHECK(same(d0, snapshot(*tr.critic())));
  CHECK(l.id > 0);
  CHECK(l.gp > 0);
}

TEST_CASE("zero reconstruction weights leave the adversarial term alone") {
  auto t = tiny_train();
  t.weights.lambda_id = 0;
  t.weights.lambda_rec = 0;
  auto tr = make(t);
  auto l = tr.step_generator(bank(4, 1), bank(4, 2));
  CHECK(l.g_total == l.g_adv);
  CHECK(l.id > 0);
}

TEST_CASE("without unlabeled data the fakes are restored pseudo-anomalies") {
  auto t = tiny_train();
  t.include_unlabeled = false;
  auto a = Trainer(tiny_model(), t, synthesis::SynthParams{}, bank(10, 100), torch::Tensor());
  auto b = Trainer(tiny_model(), t, synthesis::SynthParams{}, bank(10, 100), torch::Tensor());
  auto xn = bank(4, 1);
  // The unlabeled argument is ignored entirely.
  auto la = a.step_discriminator(xn, bank(4, 2));
  auto lb = b.step_discriminator(xn, torch::Tensor());
  CHECK(same(la, lb));
  CHECK(same(a.step_generator(xn, bank(4, 3)), b.step_generator(xn, torch::Tensor())));

  // The critic saw generator restorations of pseudo-anomalies built from xn:
  // replaying the same draws by hand reproduces d_adv.
  auto c = Trainer(tiny_model(), t, synthesis::SynthParams{}, bank(10, 100), torch::Tensor());
  auto ref = Trainer(tiny_model(), t, synthesis::SynthParams{}, bank(10, 100), torch::Tensor());
  Rng synth_rng(mix_seed(t.seed, 11));
  auto gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed(t.seed, 7));
  auto pseudo = synthesis::paired_batch(xn, synthesis::SynthParams{}, synth_rng).pseudo;
  torch::Tensor fake;
  {
    torch::NoGradGuard ng;
    fake = ref.generator()->generate(pseudo, generator::Mode::Train, &gen);
  }
  const double expected = (ref.critic()->forward(fake).mean() - ref.critic()->forward(xn).mean()).item<double>();
  CHECK(c.step_discriminator(xn, torch::Tensor()).d_adv == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("save and load continue the exact trajectory") {
  testutil::TempDir dir("resume");
  auto straight = make(tiny_train(5));
  std::vector<losses::LossBreakdown> expected;
  for (int i = 0; i < 8; ++i) expected.push_back(straight.iterate());

  auto first = make(tiny_train(5));
  for (int i = 0; i < 3; ++i) first.iterate();
  first.save(dir.path / "ck", "{}");
  CHECK(std::filesystem::exists(dir.path / "ck" / "state.json"));

  auto resumed = make(tiny_train(5));
  resumed.load(dir.path / "ck");
  CHECK(resumed.g_steps() == 3);
  CHECK(resumed.d_steps() == 6);
  bool equal = true;
  for (int i = 3; i < 8; ++i) equal = equal && same(resumed.iterate(), expected[static_cast<std::size_t>(i)]);
  CHECK(equal);
}

TEST_CASE("checkpoint load detects a mismatched model") {
  testutil::TempDir dir("mismatch");
  auto tr = make(tiny_train());
  tr.save(dir.path / "ck", "");
  auto m = tiny_model();
  m.generator.base_width = 8;
  auto other = make(tiny_train(), m);
  try {
    other.load(dir.path / "ck");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Checkpoint);
  }
  CHECK_THROWS_AS(tr.load(dir.path / "missing"), Error);
}

TEST_CASE("invalid training configs are rejected") {
  auto t = tiny_train();
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), Error);
  t = tiny_train();
  t.d_steps_per_g_step = 0;
  CHECK_THROWS_AS(t.validate(), Error);
  t = tiny_train();
  t.lr = -1;
  CHECK_THROWS_AS(t.validate(), Error);
  auto m = tiny_model();
  m.critic.input_size = 32;
  m.critic.num_layers = 3;
  CHECK_THROWS_AS(make(tiny_train(), m), Error);
}

TEST_CASE("run_training writes logs and checkpoints and resumes") {
  testutil::TempDir dir("run");
  synthetic::SyntheticSpec spec;
  spec.n_normal = 30;
  spec.n_abnormal = 10;
  spec.size = 16;
  spec.seed = 2;
  spec.test_normal = 5;
  spec.test_abnormal = 5;
  spec.normal_train = 10;
  auto summary = synthetic::make_synthetic(spec, dir.path / "syn");
  auto recs = data::load_manifest(summary.manifest);
  auto rep = data::build_repartition(recs, 0.5, {10, 10, 5, 5}, 1);

  auto t = tiny_train();
  t.max_iterations = 7;
  RunOptions opts;
  opts.output_dir = dir.path / "out";
  opts.run_config_json = "{\"note\":1}";
  std::int64_t callbacks = 0;
  opts.on_iteration = [&](std::int64_t, const losses::LossBreakdown&) { ++callbacks; };
  auto result = run_training(tiny_model(), t, synthesis::SynthParams{}, rep, 1, opts);
  CHECK(result.iterations == 7);
  CHECK(result.d_steps == 14);
  CHECK(callbacks == 7);
  REQUIRE(result.checkpoints.size() == 2);
  CHECK(result.checkpoints[0] == checkpoint_dir(opts.output_dir, 5));
  CHECK(result.checkpoints[1] == checkpoint_dir(opts.output_dir, 7));
  for (const char* f : {"generator.pt", "critic.pt", "optim_g.pt", "optim_d.pt", "rng.pt", "state.json", "config.json"})
    CHECK(std::filesystem::exists(result.checkpoints[1] / f));

  std::ifstream log(opts.output_dir / "loss_log.jsonl");
  std::vector<std::string> lines;
  for (std::string line; std::getline(log, line);) lines.push_back(line);
  REQUIRE(lines.size() == 7);

  // Resuming from ckpt_5 into a fresh directory reproduces iterations 6 and 7.
  RunOptions again;
  again.output_dir = dir.path / "again";
  again.resume_from = result.checkpoints[0];
  auto r2 = run_training(tiny_model(), t, synthesis::SynthParams{}, rep, 1, again);
  CHECK(r2.iterations == 7);
  std::ifstream log2(again.output_dir / "loss_log.jsonl");
  std::vector<std::string> lines2;
  for (std::string line; std::getline(log2, line);) lines2.push_back(line);
  REQUIRE(lines2.size() == 2);
  CHECK(lines2[0] == lines[5]);
  CHECK(lines2[1] == lines[6]);

  auto empty = rep;
  empty.unlabeled_train.clear();
  CHECK_THROWS_AS(run_training(tiny_model(), t, synthesis::SynthParams{}, empty, 1, opts), Error);
}

}  // TEST_SUITE
