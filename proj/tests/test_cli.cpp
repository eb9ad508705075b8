#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "desplat/blursynth.hpp"
#include "desplat/io.hpp"
#include "desplat/rasterizer.hpp"
#include "desplat/trainer.hpp"
#include "doctest.h"

using namespace desplat;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string(DESPLAT_CLI_PATH) + " " + args;
  int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  std::istringstream ss(text);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) ++n;
  return n;
}

// One round of synth + train shared by the cases below.
const fs::path& cli_root() {
  static fs::path root = [] {
    fs::path dir = fs::temp_directory_path() / "desplat_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    SyntheticSceneSpec spec;
    spec.width = 24;
    spec.height = 24;
    spec.fx = 27.0;
    spec.fy = 27.0;
    spec.n_frames = 6;
    spec.seed = 11;
    spec.oversample = 16;
    spec.exposures = {0.4};
    spec.camera.shake_amp = Vec3(0.3, 0.22, 0.0);
    spec.camera.shake_freq = Vec3(1.0, 1.7, 0.0);
    spec.statics.count = 25;
    spec.dynamic.count = 8;
    std::ofstream(dir / "scene.json") << spec.to_json();

    std::ofstream(dir / "train.cfg") << "n_iters = 8\nlcee_start = 4\nboot_iters = 0\n"
                                     << "net_release = 0\nn_latent = 5\n"
                                     << "n_ctrl = 6\nseed = 7\ninit_static = 60\n"
                                     << "init_dynamic = 20\n";

    REQUIRE(run_cli("synth " + (dir / "scene.json").string() + " " +
                    (dir / "ds").string()) == 0);
    REQUIRE(run_cli("train " + (dir / "ds").string() + " " + (dir / "train.cfg").string() +
                    " " + (dir / "run").string()) == 0);
    return dir;
  }();
  return root;
}

}  // namespace

TEST_CASE("cli rejects unknown flags and subcommands with usage errors") {
  CHECK(run_cli("frobnicate 2>/dev/null") == 1);
  CHECK(run_cli("score --no-such-flag /nowhere 2>/dev/null") == 1);
  CHECK(run_cli("2>/dev/null") == 1);
}

TEST_CASE("cli reports runtime failures distinctly from usage errors") {
  fs::path dir = cli_root();
  CHECK(run_cli("eval /nonexistent/checkpoint " + (dir / "ds").string() + " " +
                (dir / "nope.csv").string() + " 2>/dev/null") == 2);
  CHECK(run_cli("synth /nonexistent/spec.json " + (dir / "x").string() + " 2>/dev/null") == 2);
}

TEST_CASE("score prints one blur-score row per frame") {
  fs::path dir = cli_root();
  fs::path out = dir / "scores.txt";
  REQUIRE(run_cli("score " + (dir / "ds").string() + " > " + out.string()) == 0);
  std::string text = slurp(out);
  CHECK(count_lines(text) == 6);
  CHECK(text.rfind("0,", 0) == 0);
}

TEST_CASE("render --sharp matches a direct rasterizer call bit for bit") {
  fs::path dir = cli_root();
  fs::path got = dir / "cli_sharp.f32";
  REQUIRE(run_cli("render " + (dir / "run" / "checkpoint").string() + " " + got.string() +
                  " --pose 2 --sharp") == 0);

  Checkpoint ck = Checkpoint::load((dir / "run" / "checkpoint").string());
  RenderedImage ref = render(ck.rebuild_scene(), ck.frame_poses[2], 2.0);
  fs::path want = dir / "ref_sharp.f32";
  write_f32(want.string(), ref.color);
  CHECK(slurp(got) == slurp(want));
}

TEST_CASE("render handles blurry frames and interpolated poses") {
  fs::path dir = cli_root();
  REQUIRE(run_cli("render " + (dir / "run" / "checkpoint").string() + " " +
                  (dir / "blurry.png").string() + " --pose 1 --blurry") == 0);
  CHECK(fs::exists(dir / "blurry.png"));

  REQUIRE(run_cli("render " + (dir / "run" / "checkpoint").string() + " " +
                  (dir / "interp.f32").string() + " --pose interp --time 2.5 --sharp") == 0);
  Image mid = read_f32((dir / "interp.f32").string());
  CHECK(mid.width == 24);
  CHECK(mid.channels == 3);

  // interp without a time is a usage error, as is asking for both styles.
  CHECK(run_cli("render " + (dir / "run" / "checkpoint").string() + " " +
                (dir / "x.png").string() + " --pose interp --sharp 2>/dev/null") == 1);
  CHECK(run_cli("render " + (dir / "run" / "checkpoint").string() + " " +
                (dir / "x.png").string() + " --pose 1 --sharp --blurry 2>/dev/null") == 1);
}

TEST_CASE("eval writes the report and the optional scatter image") {
  fs::path dir = cli_root();
  REQUIRE(run_cli("eval " + (dir / "run" / "checkpoint").string() + " " +
                  (dir / "ds").string() + " " + (dir / "report.csv").string() + " --scatter " +
                  (dir / "scatter.png").string() + " > /dev/null") == 0);
  std::string rep = slurp(dir / "report.csv");
  CHECK(rep.rfind("frame,psnr_full", 0) == 0);
  CHECK(count_lines(rep) == 1 + 6 + 3);
  CHECK(fs::exists(dir / "scatter.png"));
}

TEST_CASE("synth honors a seed override") {
  fs::path dir = cli_root();
  REQUIRE(run_cli("synth " + (dir / "scene.json").string() + " " + (dir / "ds_seed").string() +
                  " --seed 77 > /dev/null") == 0);
  Dataset a = load_dataset((dir / "ds_seed").string());
  Dataset b = load_dataset((dir / "ds").string());
  bool differs = false;
  for (size_t i = 0; i < a.frames[0].blurry.data.size() && !differs; ++i)
    differs = a.frames[0].blurry.data[i] != b.frames[0].blurry.data[i];
  CHECK(differs);
}
