#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "desplat/blursynth.hpp"
#include "desplat/io.hpp"
#include "desplat/metrics.hpp"
#include "desplat/rasterizer.hpp"
#include "desplat/trainer.hpp"

namespace fs = std::filesystem;
using namespace desplat;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_image(const std::string& path, const Image& img) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".f32") == 0)
    write_f32(path, img);
  else
    write_png(path, img);
}

void run_synth(const std::string& spec_path, const std::string& out_dir, long seed) {
  SyntheticSceneSpec spec = SyntheticSceneSpec::from_json(slurp(spec_path));
  if (seed >= 0) spec.seed = static_cast<uint64_t>(seed);
  write_dataset(spec, out_dir);
  std::printf("wrote %d frames (%dx%d) to %s\n", spec.n_frames, spec.width, spec.height,
              out_dir.c_str());
}

void run_train(const std::string& data_dir, const std::string& cfg_path,
               const std::string& out_dir, long seed, bool resume) {
  TrainConfig cfg = TrainConfig::parse(slurp(cfg_path));
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  Dataset data = load_dataset(data_dir, cfg.crop_s);

  fs::path ck_dir = fs::path(out_dir) / "checkpoint";
  Trainer trainer = [&] {
    if (resume) {
      Checkpoint ck = Checkpoint::load(ck_dir.string());
      // The checkpoint keeps its own config so the resumed run replays the
      // original schedule; only the horizon can be extended.
      ck.cfg.n_iters = std::max(ck.cfg.n_iters, cfg.n_iters);
      return Trainer(std::move(data), std::move(ck));
    }
    return Trainer(std::move(data), cfg);
  }();

  trainer.train(out_dir);
  std::printf("trained to iteration %ld, checkpoint in %s\n", trainer.iter(),
              ck_dir.string().c_str());
}

void run_render(const std::string& ck_dir, const std::string& out_path,
                const std::string& pose_arg, double time, bool has_time, bool sharp) {
  Checkpoint ck = Checkpoint::load(ck_dir);

  int index = -1;
  if (pose_arg != "interp") {
    try {
      size_t used = 0;
      index = std::stoi(pose_arg, &used);
      if (used != pose_arg.size()) throw std::invalid_argument(pose_arg);
    } catch (const std::exception&) {
      throw CLI::ValidationError("--pose expects a frame index or 'interp'");
    }
    if (index < 0 || index >= ck.n_frames)
      throw std::runtime_error("pose index outside the checkpoint's frame range");
  }

  if (!sharp) {
    if (index < 0)
      throw CLI::ValidationError("--blurry needs a training frame index, not 'interp'");
    BlurRenderResult res = render_blurry_from(ck, index);
    write_image(out_path, res.blurry.color);
    std::printf("blurry frame %d (t_hat %.4f) -> %s\n", index, ck.frame_t_hat[index],
                out_path.c_str());
    return;
  }

  double t = has_time ? time : static_cast<double>(index);
  if (!has_time && index < 0)
    throw CLI::ValidationError("--pose interp needs an explicit --time");
  Pose pose;
  if (index >= 0) {
    pose = ck.frame_poses[static_cast<size_t>(index)];
  } else {
    double lo = std::clamp(std::floor(t), 0.0, static_cast<double>(ck.n_frames - 1));
    size_t i0 = static_cast<size_t>(lo);
    size_t i1 = std::min(i0 + 1, static_cast<size_t>(ck.n_frames - 1));
    pose = pose_interp(ck.frame_poses[i0], ck.frame_poses[i1], t - lo);
  }
  RenderedImage img = render(ck.rebuild_scene(), pose, t);
  write_image(out_path, img.color);
  std::printf("sharp t=%.4f -> %s\n", t, out_path.c_str());
}

void run_score(const std::string& data_dir, int crop_s) {
  Dataset data = load_dataset(data_dir, crop_s);
  for (int t = 0; t < data.n_frames; ++t)
    std::printf("%d,%.17g\n", t, data.frames[static_cast<size_t>(t)].beta);
}

void run_eval(const std::string& ck_dir, const std::string& data_dir,
              const std::string& report_path, const std::string& scatter_path) {
  Checkpoint ck = Checkpoint::load(ck_dir);
  Dataset data = load_dataset(data_dir, ck.cfg.crop_s);
  EvalReport rep = evaluate(ck, data);

  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + report_path);
  out << rep.to_csv();
  out.close();

  if (!scatter_path.empty()) {
    std::vector<double> beta, t_hat;
    for (const EvalRow& r : rep.rows) {
      beta.push_back(r.beta);
      t_hat.push_back(r.t_hat);
    }
    write_png(scatter_path, correlation_scatter(beta, t_hat));
  }
  std::printf("mean psnr %.4f dB (blurry input baseline %.4f dB), report in %s\n",
              rep.mean_psnr_full, rep.mean_psnr_baseline, report_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deblurring dynamic gaussian splatting on synthetic desk scenes"};
  app.require_subcommand(1);

  long seed = -1;
  app.add_option("--seed", seed, "override the seed baked into specs and configs");

  std::string spec_path, data_dir, cfg_path, out_dir, ck_dir, out_path, report_path;
  std::string pose_arg = "0", scatter_path;
  double time = 0.0;
  bool sharp = false, blurry = false, resume = false;
  int crop_s = 20;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic blur dataset");
  synth->add_option("spec", spec_path, "scene spec json")->required();
  synth->add_option("out", out_dir, "output dataset directory")->required();

  CLI::App* train = app.add_subcommand("train", "fit the model to a dataset");
  train->add_option("dataset", data_dir)->required();
  train->add_option("config", cfg_path, "key = value text config")->required();
  train->add_option("out", out_dir, "run directory for metrics and checkpoints")->required();
  train->add_flag("--resume", resume, "continue from out/checkpoint if present");

  CLI::App* render_cmd = app.add_subcommand("render", "render a frame from a checkpoint");
  render_cmd->add_option("checkpoint", ck_dir)->required();
  render_cmd->add_option("out", out_path, "output image (.png or .f32)")->required();
  CLI::Option* time_opt = render_cmd->add_option("--time", time, "continuous frame time");
  render_cmd->add_option("--pose", pose_arg, "frame index or 'interp'");
  render_cmd->add_flag("--sharp", sharp, "render the sharp image");
  render_cmd->add_flag("--blurry", blurry, "re-synthesize the blurry image");

  CLI::App* score = app.add_subcommand("score", "print per-frame blur scores");
  score->add_option("dataset", data_dir)->required();
  score->add_option("--crop", crop_s, "spectrum crop size");

  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint against ground truth");
  eval_cmd->add_option("checkpoint", ck_dir)->required();
  eval_cmd->add_option("dataset", data_dir)->required();
  eval_cmd->add_option("report", report_path, "csv output path")->required();
  eval_cmd->add_option("--scatter", scatter_path, "blur-score vs exposure scatter png");

  for (CLI::App* sub : {synth, train, render_cmd, score, eval_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
    if (synth->parsed()) run_synth(spec_path, out_dir, seed);
    if (train->parsed()) run_train(data_dir, cfg_path, out_dir, seed, resume);
    if (render_cmd->parsed()) {
      if (sharp == blurry) throw CLI::ValidationError("pick exactly one of --sharp/--blurry");
      run_render(ck_dir, out_path, pose_arg, time, time_opt->count() > 0, sharp);
    }
    if (score->parsed()) run_score(data_dir, crop_s);
    if (eval_cmd->parsed()) run_eval(ck_dir, data_dir, report_path, scatter_path);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    std::fprintf(stderr, "%s", app.help().c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
