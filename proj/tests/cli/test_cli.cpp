#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(SAGAN_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / ("sagan_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root, ec);
  }
  std::string at(const std::string& rel) const { return (root / rel).string(); }
};

const std::string kTiny =
    "data.image_size=16 generator.base_width=4 generator.num_levels=2 critic.base_width=4 critic.num_layers=3 "
    "train.batch_size=4 train.lr=0.001";

}  // namespace

TEST_CASE("help lists subcommands and every subcommand lists config keys") {
  auto top = run("--help");
  CHECK(top.code == 0);
  for (const char* sub : {"prepare", "make-synthetic", "synth-preview", "train", "eval", "heatmap"}) {
    CHECK(top.out.find(sub) != std::string::npos);
    auto h = run(std::string(sub) + " --help");
    CHECK(h.code == 0);
    CHECK_MESSAGE(h.out.find("train.lr = 5e-05") != std::string::npos, sub);
    CHECK_MESSAGE(h.out.find("loss.lambda_gp = 10.0") != std::string::npos, sub);
  }
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
}

TEST_CASE("full command flow") {
  Workspace ws;
  auto syn = run("make-synthetic --n-normal 20 --n-abnormal 12 --size 16 --seed 2 --test-normal 4 --test-abnormal 4 "
                 "--normal-train 8 --out " + ws.at("syn"));
  REQUIRE(syn.code == 0);
  CHECK(syn.out.find("config fingerprint:") != std::string::npos);
  CHECK(syn.out.find("unlabeled pool: 8 normal + 8 abnormal") != std::string::npos);

  const std::string prep_args = "prepare --manifest " + ws.at("syn/manifest.csv") +
                                " --ar 0.5 --normal-train 8 --unlabeled 8 --test-normal 4 --test-abnormal 4 --seed 1";
  auto prep = run(prep_args + " --out " + ws.at("rep.json"));
  REQUIRE(prep.code == 0);
  CHECK(prep.out.find("hidden abnormal 4") != std::string::npos);
  REQUIRE(run(prep_args + " --out " + ws.at("rep2.json")).code == 0);
  CHECK(slurp(ws.at("rep.json")) == slurp(ws.at("rep2.json")));

  auto bad_ar = run("prepare --manifest " + ws.at("syn/manifest.csv") +
                    " --ar 1.2 --normal-train 8 --unlabeled 8 --test-normal 4 --test-abnormal 4");
  CHECK(bad_ar.code == 2);
  auto short_pool = run("prepare --manifest " + ws.at("syn/manifest.csv") +
                        " --ar 0.5 --normal-train 80 --unlabeled 8 --test-normal 4 --test-abnormal 4 --out " +
                        ws.at("x.json"));
  CHECK(short_pool.code == 2);

  auto preview = run("synth-preview --repartition " + ws.at("rep.json") + " --count 2 --out " + ws.at("preview") +
                     " " + kTiny);
  CHECK(preview.code == 0);
  CHECK(fs::exists(ws.at("preview")));
  CHECK(!fs::is_empty(ws.at("preview")));

  auto train = run("train data.repartition=" + ws.at("rep.json") + " output_dir=" + ws.at("run") +
                   " train.max_iterations=1 " + kTiny);
  REQUIRE(train.code == 0);
  CHECK(train.out.find("config fingerprint:") != std::string::npos);
  int ckpts = 0;
  for (const auto& e : fs::directory_iterator(ws.at("run")))
    if (e.is_directory() && e.path().filename().string().rfind("ckpt_", 0) == 0) ++ckpts;
  CHECK(ckpts == 1);

  auto e1 = run("eval --checkpoint " + ws.at("run/ckpt_1") + " --report " + ws.at("r1.txt"));
  auto e2 = run("eval --checkpoint " + ws.at("run/ckpt_1") + " --report " + ws.at("r2.txt"));
  REQUIRE(e1.code == 0);
  REQUIRE(e2.code == 0);
  CHECK(e1.out.find("AUC:") != std::string::npos);
  CHECK(slurp(ws.at("r1.txt")) == slurp(ws.at("r2.txt")));
  CHECK(run("eval --checkpoint " + ws.at("run/ckpt_1")).code == 0);
  CHECK(fs::exists(ws.at("run/ckpt_1/report.txt")));

  auto heat = run("heatmap --checkpoint " + ws.at("run/ckpt_1") + " --out " + ws.at("heat") + " " +
                  ws.at("syn/images/abnormal_00000.png"));
  CHECK(heat.code == 0);
  CHECK(fs::exists(ws.at("heat/abnormal_00000_heat.png")));
  CHECK(fs::exists(ws.at("heat/abnormal_00000_heat.json")));

  CHECK(run("eval --checkpoint " + ws.at("nothing")).code == 3);
  CHECK(run("train train.bogus=1").code == 2);
  CHECK(run("train --config " + ws.at("missing.json")).code == 2);
  CHECK(run("heatmap --checkpoint " + ws.at("run/ckpt_1") + " " + ws.at("none.png")).code == 2);
}

TEST_CASE("output root comes from the environment") {
  Workspace ws;
  const std::string env = "SAGAN_OUTPUT_ROOT=" + ws.at("root") + " ";
  const std::string cmd = env + SAGAN_CLI_PATH + " make-synthetic --n-normal 2 --n-abnormal 1 --size 16 > /dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
  CHECK(fs::exists(ws.at("root/synthetic/manifest.csv")));
}
