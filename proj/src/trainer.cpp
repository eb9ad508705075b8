#include "desplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "desplat/io.hpp"
#include "desplat/rasterizer.hpp"
#include "json.hpp"

namespace desplat {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kStaticMeans = "static_means";
constexpr const char* kCtrl = "ctrl";
constexpr const char* kQuats = "quats";
constexpr const char* kLogScales = "log_scales";
constexpr const char* kOpacities = "opacities";
constexpr const char* kColors = "colors";
constexpr const char* kCamMotion = "cam_motion";
constexpr const char* kExposureRaw = "exposure_raw";

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void write_doubles(const std::string& path, const std::vector<double>& v) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::streamsize bytes = in.tellg();
  if (bytes % static_cast<std::streamsize>(sizeof(double)) != 0)
    throw std::runtime_error(path + " is not a packed double array");
  std::vector<double> v(static_cast<size_t>(bytes) / sizeof(double));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(v.data()), bytes);
  return v;
}

json pose_to_json(const Pose& p) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r)
    rows.push_back(
        json::array({p.rotation(r, 0), p.rotation(r, 1), p.rotation(r, 2), p.translation(r)}));
  return rows;
}

Pose pose_from_json(const json& rows) {
  Pose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = rows.at(r).at(c).get<double>();
    p.translation(r) = rows.at(r).at(3).get<double>();
  }
  return p;
}

// Statics first, then the dynamic set, exactly the flat order the
// rasterizer's gradient arrays use.
SceneModel scene_from_store(const ParamStore& store, int n_static, int n_dynamic, int n_ctrl,
                            const Intrinsics& intr, int n_frames) {
  SceneModel scene;
  scene.intrinsics = intr;
  scene.n_frames = n_frames;

  const double* means = store.slice_values(kStaticMeans);
  const double* ctrl = store.slice_values(kCtrl);
  const double* quats = store.slice_values(kQuats);
  const double* scales = store.slice_values(kLogScales);
  const double* opac = store.slice_values(kOpacities);
  const double* colors = store.slice_values(kColors);

  auto fill_common = [&](Gaussian& g, int flat) {
    g.rot_quat = Vec4(quats[4 * flat + 0], quats[4 * flat + 1], quats[4 * flat + 2],
                      quats[4 * flat + 3]);
    g.log_scale = Vec3(scales[3 * flat + 0], scales[3 * flat + 1], scales[3 * flat + 2]);
    g.logit_opacity = opac[flat];
    g.color = Vec3(colors[3 * flat + 0], colors[3 * flat + 1], colors[3 * flat + 2]);
  };

  for (int i = 0; i < n_static; ++i) {
    Gaussian g;
    g.kind = GaussianKind::Static;
    g.mean = Vec3(means[3 * i + 0], means[3 * i + 1], means[3 * i + 2]);
    fill_common(g, i);
    scene.static_gaussians.push_back(g);
  }
  for (int j = 0; j < n_dynamic; ++j) {
    DynamicGaussian d;
    d.gaussian.kind = GaussianKind::Dynamic;
    fill_common(d.gaussian, n_static + j);
    d.ctrl.points.resize(static_cast<size_t>(n_ctrl));
    for (int c = 0; c < n_ctrl; ++c) {
      size_t off = (static_cast<size_t>(j) * n_ctrl + c) * 3;
      d.ctrl.points[static_cast<size_t>(c)] = Vec3(ctrl[off], ctrl[off + 1], ctrl[off + 2]);
    }
    d.gaussian.mean = d.ctrl.points.front();
    scene.dynamic_gaussians.push_back(d);
  }
  return scene;
}

}  // namespace

void TrainConfig::validate() const {
  if (n_iters < 0 || lcee_start < 0 || boot_iters < 0 || net_release < 0 || calib_iter < 0)
    throw std::invalid_argument("iteration counts must be >= 0");
  if (boot_exposure <= 0.0) throw std::invalid_argument("boot_exposure must be positive");
  if (n_latent < 1) throw std::invalid_argument("n_latent must be positive");
  if (crop_s < 1 || n_ctrl < 2) throw std::invalid_argument("crop_s/n_ctrl out of range");
  if (lambda_rgb < 0.0 || lambda_depth < 0.0)
    throw std::invalid_argument("loss weights must be nonnegative");
  if (init_static < 1 || init_dynamic < 0)
    throw std::invalid_argument("init counts out of range");
  if (exposure_mode == ExposureMode::Fixed && fixed_exposure < 0.0)
    throw std::invalid_argument("fixed_exposure must be nonnegative");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  bool saw_fixed = false, saw_learnable = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line is not key = value: " + line);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));

    if (key == "n_iters") cfg.n_iters = std::stoi(val);
    else if (key == "lcee_start") cfg.lcee_start = std::stoi(val);
    else if (key == "boot_iters") cfg.boot_iters = std::stoi(val);
    else if (key == "boot_exposure") cfg.boot_exposure = std::stod(val);
    else if (key == "net_release") cfg.net_release = std::stoi(val);
    else if (key == "calib_iter") cfg.calib_iter = std::stoi(val);
    else if (key == "n_latent") cfg.n_latent = std::stoi(val);
    else if (key == "crop_s") cfg.crop_s = std::stoi(val);
    else if (key == "lambda_rgb") cfg.lambda_rgb = std::stod(val);
    else if (key == "lambda_depth") cfg.lambda_depth = std::stod(val);
    else if (key == "n_ctrl") cfg.n_ctrl = std::stoi(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "lr_net") cfg.lr_net = std::stod(val);
    else if (key == "lr_net_release") cfg.lr_net_release = std::stod(val);
    else if (key == "lr_means") cfg.lr_means = std::stod(val);
    else if (key == "lr_quats") cfg.lr_quats = std::stod(val);
    else if (key == "lr_opacity") cfg.lr_opacity = std::stod(val);
    else if (key == "lr_scales") cfg.lr_scales = std::stod(val);
    else if (key == "lr_colors") cfg.lr_colors = std::stod(val);
    else if (key == "init_static") cfg.init_static = std::stoi(val);
    else if (key == "init_dynamic") cfg.init_dynamic = std::stoi(val);
    else if (key == "checkpoint_every") cfg.checkpoint_every = std::stoi(val);
    else if (key == "fixed_exposure") {
      cfg.exposure_mode = ExposureMode::Fixed;
      cfg.fixed_exposure = std::stod(val);
      saw_fixed = true;
    } else if (key == "learnable_exposure") {
      bool on = val == "1" || val == "true";
      if (on) cfg.exposure_mode = ExposureMode::Learnable;
      saw_learnable = on;
    } else if (key == "latent_mode") {
      if (val == "spline") cfg.latent_mode = LatentMode::Spline;
      else if (val == "neural_ode") cfg.latent_mode = LatentMode::NeuralOde;
      else if (val == "blur_adaptive") cfg.latent_mode = LatentMode::BlurAdaptive;
      else throw std::invalid_argument("unknown latent_mode: " + val);
    } else {
      throw std::invalid_argument("unknown config key: " + key);
    }
  }
  if (saw_fixed && saw_learnable)
    throw std::invalid_argument("fixed_exposure and learnable_exposure are mutually exclusive");
  cfg.validate();
  return cfg;
}

std::string TrainConfig::to_text() const {
  char buf[4096];
  const char* mode = latent_mode == LatentMode::Spline ? "spline"
                     : latent_mode == LatentMode::NeuralOde ? "neural_ode"
                                                            : "blur_adaptive";
  int n = std::snprintf(
      buf, sizeof(buf),
      "n_iters = %d\nlcee_start = %d\nboot_iters = %d\nboot_exposure = %.17g\n"
      "net_release = %d\ncalib_iter = %d\nn_latent = %d\ncrop_s = %d\n"
      "lambda_rgb = %.17g\nlambda_depth = %.17g\nn_ctrl = %d\nseed = %llu\n"
      "lr_net = %.17g\nlr_net_release = %.17g\nlr_means = %.17g\nlr_quats = %.17g\n"
      "lr_opacity = %.17g\n"
      "lr_scales = %.17g\nlr_colors = %.17g\ninit_static = %d\ninit_dynamic = %d\n"
      "checkpoint_every = %d\nlatent_mode = %s\n",
      n_iters, lcee_start, boot_iters, boot_exposure, net_release, calib_iter, n_latent, crop_s,
      lambda_rgb, lambda_depth, n_ctrl,
      static_cast<unsigned long long>(seed), lr_net, lr_net_release, lr_means, lr_quats,
      lr_opacity, lr_scales,
      lr_colors, init_static, init_dynamic, checkpoint_every, mode);
  std::string out(buf, static_cast<size_t>(n));
  if (exposure_mode == ExposureMode::Fixed) {
    std::snprintf(buf, sizeof(buf), "fixed_exposure = %.17g\n", fixed_exposure);
    out += buf;
  } else if (exposure_mode == ExposureMode::Learnable) {
    out += "learnable_exposure = 1\n";
  }
  return out;
}

double loss_rgb(const Image& rendered, const Image& observed) {
  if (!rendered.same_shape(observed)) throw ShapeMismatch();
  double sum = 0.0;
  for (size_t i = 0; i < rendered.data.size(); ++i)
    sum += std::abs(rendered.data[i] - observed.data[i]);
  return sum / static_cast<double>(rendered.data.size());
}

double loss_depth(const Image& rendered_depth, const Image& gt_depth, const Image& valid) {
  if (!rendered_depth.same_shape(gt_depth) || rendered_depth.width != valid.width ||
      rendered_depth.height != valid.height)
    throw ShapeMismatch();
  double sum = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < rendered_depth.data.size(); ++i) {
    if (valid.data[i] <= 0.5) continue;
    sum += std::abs(rendered_depth.data[i] - gt_depth.data[i]);
    ++n;
  }
  if (n == 0) throw EmptyMask();
  return sum / static_cast<double>(n);
}

SceneModel Checkpoint::rebuild_scene() const {
  return scene_from_store(store, n_static, n_dynamic, cfg.n_ctrl, intrinsics, n_frames);
}

void Checkpoint::save(const std::string& dir) const {
  fs::create_directories(dir);
  write_doubles((fs::path(dir) / "params.bin").string(), store.values);
  write_doubles((fs::path(dir) / "adam_m.bin").string(), adam.m);
  write_doubles((fs::path(dir) / "adam_v.bin").string(), adam.v);

  json m;
  m["iter"] = iter;
  m["adam_step"] = adam.step;
  m["config"] = cfg.to_text();
  m["scene"] = {{"n_static", n_static},
                {"n_dynamic", n_dynamic},
                {"n_frames", n_frames},
                {"intrinsics",
                 {{"fx", intrinsics.fx},
                  {"fy", intrinsics.fy},
                  {"cx", intrinsics.cx},
                  {"cy", intrinsics.cy},
                  {"width", intrinsics.width},
                  {"height", intrinsics.height}}}};
  json slices = json::array();
  for (const auto& sl : store.slices)
    slices.push_back({{"name", sl.name}, {"count", sl.count}, {"lr", sl.lr}});
  m["slices"] = slices;
  json frames = json::array();
  for (int t = 0; t < n_frames; ++t) {
    frames.push_back({{"pose", pose_to_json(frame_poses[static_cast<size_t>(t)])},
                      {"beta", frame_beta[static_cast<size_t>(t)]},
                      {"t_hat", frame_t_hat[static_cast<size_t>(t)]},
                      {"exposure_true", frame_exposure_true[static_cast<size_t>(t)]}});
  }
  m["frames"] = frames;
  write_text_file((fs::path(dir) / "manifest.json").string(), m.dump(2));
}

Checkpoint Checkpoint::load(const std::string& dir) {
  json m = json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));

  Checkpoint ck;
  ck.cfg = TrainConfig::parse(m.at("config").get<std::string>());
  ck.iter = m.at("iter").get<long>();
  const json& sc = m.at("scene");
  ck.n_static = sc.at("n_static").get<int>();
  ck.n_dynamic = sc.at("n_dynamic").get<int>();
  ck.n_frames = sc.at("n_frames").get<int>();
  const json& in = sc.at("intrinsics");
  ck.intrinsics = Intrinsics{in.at("fx").get<double>(),    in.at("fy").get<double>(),
                             in.at("cx").get<double>(),    in.at("cy").get<double>(),
                             in.at("width").get<int>(),    in.at("height").get<int>()};

  for (const json& sl : m.at("slices"))
    ck.store.register_slice(sl.at("name").get<std::string>(), sl.at("count").get<size_t>(),
                            sl.at("lr").get<double>());
  std::vector<double> values = read_doubles((fs::path(dir) / "params.bin").string());
  if (values.size() != ck.store.values.size())
    throw std::runtime_error("checkpoint params.bin does not match the slice table");
  ck.store.values = std::move(values);

  ck.adam.m = read_doubles((fs::path(dir) / "adam_m.bin").string());
  ck.adam.v = read_doubles((fs::path(dir) / "adam_v.bin").string());
  if (ck.adam.m.size() != ck.store.values.size() || ck.adam.v.size() != ck.store.values.size())
    throw std::runtime_error("checkpoint optimizer state does not match the parameters");
  ck.adam.step = m.at("adam_step").get<long>();

  for (const json& f : m.at("frames")) {
    ck.frame_poses.push_back(pose_from_json(f.at("pose")));
    ck.frame_beta.push_back(f.at("beta").get<double>());
    ck.frame_t_hat.push_back(f.at("t_hat").get<double>());
    ck.frame_exposure_true.push_back(f.at("exposure_true").get<double>());
  }
  if (static_cast<int>(ck.frame_poses.size()) != ck.n_frames)
    throw std::runtime_error("checkpoint frame table is truncated");
  return ck;
}

Trainer::Trainer(Dataset dataset, TrainConfig cfg) : cfg_(cfg), data_(std::move(dataset)) {
  cfg_.validate();
  if (data_.frames.empty()) throw std::invalid_argument("dataset has no frames");

  blce_.n_latent = cfg_.n_latent;
  blce_.inject_blur_feature = cfg_.latent_mode == LatentMode::BlurAdaptive;

  init_from_dataset();
  if (cfg_.boot_iters > 0 && data_.n_frames >= 2) bootstrap_latents();
  adam_.resize(store_.values.size());
  t_hat_.assign(static_cast<size_t>(data_.n_frames), 0.0);
  sync_scene_from_store();
}

Trainer::Trainer(Dataset dataset, Checkpoint ck) : cfg_(ck.cfg), data_(std::move(dataset)) {
  if (data_.n_frames != ck.n_frames)
    throw std::invalid_argument("dataset frame count does not match the checkpoint");

  blce_.n_latent = cfg_.n_latent;
  blce_.inject_blur_feature = cfg_.latent_mode == LatentMode::BlurAdaptive;

  store_ = std::move(ck.store);
  adam_ = std::move(ck.adam);
  iter_ = ck.iter;
  n_static_ = ck.n_static;
  n_dynamic_ = ck.n_dynamic;
  t_hat_ = ck.frame_t_hat;
  extent_ = 1.0;  // only needed to seed learning rates, which the slices carry
  sync_scene_from_store();
}

void Trainer::init_from_dataset() {
  const Intrinsics& intr = data_.intrinsics;
  Rng rng(mix_seed(cfg_.seed, 0xD5));

  struct Seed {
    Vec3 pos;
    Vec3 color;
    double log_scale = 0.0;
  };
  auto make_seed = [&](const DatasetFrame& f, int x, int y) {
    double d = f.depth.at(x, y);
    Vec3 cam((x - intr.cx) / intr.fx * d, (y - intr.cy) / intr.fy * d, d);
    Seed s;
    s.pos = f.pose.rotation * cam + f.pose.translation;
    s.color = Vec3(f.blurry.at(x, y, 0), f.blurry.at(x, y, 1), f.blurry.at(x, y, 2));
    // Each seed stands in for the one pixel it was lifted from, so its
    // footprint is that pixel pushed out to the seed's depth. Anything much
    // fatter starts the model blurrier than the inputs and the pose spread
    // then has nothing to explain.
    s.log_scale = std::log(d / intr.fx);
    return s;
  };

  // Static pool from the sharpest frames only, ranked by blur score. Seeds
  // copy pixel colors, so seeding from blurrier frames would bake their blur
  // into the scene and leave the latent poses nothing to explain; the model
  // should start sharper than every training frame, not match their average.
  std::vector<int> by_sharpness(static_cast<size_t>(data_.n_frames));
  for (int t = 0; t < data_.n_frames; ++t) by_sharpness[static_cast<size_t>(t)] = t;
  std::sort(by_sharpness.begin(), by_sharpness.end(),
            [&](int a, int b) { return data_.frames[static_cast<size_t>(a)].beta <
                                       data_.frames[static_cast<size_t>(b)].beta; });
  int n_seed_frames = std::max(1, data_.n_frames / 8);
  std::vector<Seed> static_pool;
  for (int i = 0; i < n_seed_frames; ++i) {
    const DatasetFrame& f = data_.frames[static_cast<size_t>(by_sharpness[static_cast<size_t>(i)])];
    for (int y = 0; y < f.depth.height; ++y)
      for (int x = 0; x < f.depth.width; ++x) {
        if (!std::isfinite(f.depth.at(x, y)) || f.mask.at(x, y) > 0.5) continue;
        static_pool.push_back(make_seed(f, x, y));
      }
  }
  if (static_pool.empty()) throw std::runtime_error("no valid static depth pixels to seed from");

  // Dynamic seeds from the first frame with mask coverage, plus a per-frame
  // centroid track to rough in the control points.
  std::vector<Seed> dyn_pool;
  Vec3 base_centroid = Vec3::Zero();
  std::vector<std::optional<Vec3>> centroids(static_cast<size_t>(data_.n_frames));
  int first_dyn_frame = -1;
  for (int t = 0; t < data_.n_frames; ++t) {
    const DatasetFrame& f = data_.frames[static_cast<size_t>(t)];
    Vec3 sum = Vec3::Zero();
    int n = 0;
    for (int y = 0; y < f.depth.height; ++y)
      for (int x = 0; x < f.depth.width; ++x) {
        if (!std::isfinite(f.depth.at(x, y)) || f.mask.at(x, y) <= 0.5) continue;
        Seed s = make_seed(f, x, y);
        sum += s.pos;
        ++n;
        if (first_dyn_frame == -1) dyn_pool.push_back(s);
      }
    if (n > 0) {
      if (first_dyn_frame == -1) first_dyn_frame = t;
      centroids[static_cast<size_t>(t)] = sum / n;
      if (t == first_dyn_frame) base_centroid = sum / n;
    }
  }
  // Frames without coverage borrow the nearest tracked centroid.
  std::optional<Vec3> last;
  for (auto& c : centroids)
    if (c) last = c; else c = last;
  for (auto it = centroids.rbegin(); it != centroids.rend(); ++it)
    if (*it) last = *it; else *it = last;

  auto subsample = [&](std::vector<Seed>& pool, int want) {
    for (size_t i = pool.size(); i > 1; --i)
      std::swap(pool[i - 1], pool[rng.uniform_int(i)]);
    if (static_cast<int>(pool.size()) > want) pool.resize(static_cast<size_t>(want));
  };
  subsample(static_pool, cfg_.init_static);
  subsample(dyn_pool, cfg_.init_dynamic);
  n_static_ = static_cast<int>(static_pool.size());
  n_dynamic_ = static_cast<int>(dyn_pool.size());
  const int n_total = n_static_ + n_dynamic_;

  std::vector<Vec3> all_pos;
  for (const Seed& s : static_pool) all_pos.push_back(s.pos);
  for (const Seed& s : dyn_pool) all_pos.push_back(s.pos);

  Vec3 center = Vec3::Zero();
  for (const Vec3& p : all_pos) center += p;
  center /= static_cast<double>(all_pos.size());
  extent_ = 1e-3;
  for (const Vec3& p : all_pos) extent_ = std::max(extent_, (p - center).norm());

  store_.register_slice(kStaticMeans, static_cast<size_t>(n_static_) * 3,
                        cfg_.lr_means * extent_);
  store_.register_slice(kCtrl, static_cast<size_t>(n_dynamic_) * cfg_.n_ctrl * 3,
                        cfg_.lr_means * extent_);
  store_.register_slice(kQuats, static_cast<size_t>(n_total) * 4, cfg_.lr_quats);
  store_.register_slice(kLogScales, static_cast<size_t>(n_total) * 3, cfg_.lr_scales);
  store_.register_slice(kOpacities, static_cast<size_t>(n_total), cfg_.lr_opacity);
  store_.register_slice(kColors, static_cast<size_t>(n_total) * 3, cfg_.lr_colors);
  if (cfg_.latent_mode == LatentMode::Spline) {
    store_.register_slice(kCamMotion, static_cast<size_t>(data_.n_frames) * 12, cfg_.lr_net);
  } else {
    blce_.register_params(store_, cfg_.lr_net);
    Rng net_rng(mix_seed(cfg_.seed, 0xB1CE));
    blce_.init_params(store_, net_rng);
  }
  if (cfg_.exposure_mode == ExposureMode::Learnable)
    store_.register_slice(kExposureRaw, static_cast<size_t>(data_.n_frames), cfg_.lr_net);

  // Seeds come from surface pixels, so they start nearly solid; there is no
  // densification pass to grow coverage later.
  const double logit_opacity = std::log(0.8 / 0.2);
  double* means = store_.slice_values(kStaticMeans);
  double* ctrl = store_.slice_values(kCtrl);
  double* quats = store_.slice_values(kQuats);
  double* scales = store_.slice_values(kLogScales);
  double* opac = store_.slice_values(kOpacities);
  double* colors = store_.slice_values(kColors);

  auto fill_common = [&](int flat, const Seed& s) {
    quats[4 * flat + 0] = 1.0;
    for (int a = 0; a < 3; ++a) {
      scales[3 * flat + a] = s.log_scale;
      colors[3 * flat + a] = s.color(a);
    }
    opac[flat] = logit_opacity;
  };

  for (int i = 0; i < n_static_; ++i) {
    const Seed& s = static_pool[static_cast<size_t>(i)];
    for (int a = 0; a < 3; ++a) means[3 * i + a] = s.pos(a);
    fill_common(i, s);
  }
  for (int j = 0; j < n_dynamic_; ++j) {
    const Seed& s = dyn_pool[static_cast<size_t>(j)];
    Vec3 offset = s.pos - base_centroid;
    for (int c = 0; c < cfg_.n_ctrl; ++c) {
      // Control point c sits at frame time t_c; start it on the tracked
      // centroid path so the spline begins roughly following the object.
      double tc = cfg_.n_ctrl > 1
                      ? static_cast<double>(c) * (data_.n_frames - 1) / (cfg_.n_ctrl - 1)
                      : 0.0;
      int f0 = std::min(static_cast<int>(tc), data_.n_frames - 1);
      int f1 = std::min(f0 + 1, data_.n_frames - 1);
      double frac = tc - f0;
      Vec3 c0 = centroids[static_cast<size_t>(f0)].value_or(base_centroid);
      Vec3 c1 = centroids[static_cast<size_t>(f1)].value_or(base_centroid);
      Vec3 p = (1.0 - frac) * c0 + frac * c1 + offset;
      size_t off = (static_cast<size_t>(j) * cfg_.n_ctrl + c) * 3;
      for (int a = 0; a < 3; ++a) ctrl[off + a] = p(a);
    }
    fill_common(n_static_ + j, s);
  }
}

void Trainer::fd_neighbor_motion(std::vector<Vec3>& omega, std::vector<Vec3>& vel) const {
  // Per-frame velocity under the capture-continuity assumption: the camera's
  // motion inside one exposure is close to the finite difference of the
  // neighbor frame poses (the same assumption the exposure estimator leans
  // on). One-sided at the sequence ends.
  const int nf = data_.n_frames;
  omega.resize(static_cast<size_t>(nf));
  vel.resize(static_cast<size_t>(nf));
  for (int t = 0; t < nf; ++t) {
    int a = std::max(0, t - 1), b = std::min(nf - 1, t + 1);
    const Pose& pa = data_.frames[static_cast<size_t>(a)].pose;
    const Pose& pb = data_.frames[static_cast<size_t>(b)].pose;
    double step = static_cast<double>(b - a);
    omega[static_cast<size_t>(t)] = rotation_log(pa.rotation.transpose() * pb.rotation) / step;
    vel[static_cast<size_t>(t)] = (pb.translation - pa.translation) / step;
  }
}

std::vector<double> Trainer::blur_scaled_spans() const {
  // boot_exposure is only the fleet average; per frame the span scales with
  // the measured blur score, so frames that came out blurrier start with
  // proportionally longer trajectories.
  const int nf = data_.n_frames;
  double mean_beta = 0.0;
  for (int t = 0; t < nf; ++t) mean_beta += data_.frames[static_cast<size_t>(t)].beta;
  mean_beta /= static_cast<double>(nf);
  std::vector<double> spans(static_cast<size_t>(nf), cfg_.boot_exposure);
  if (mean_beta > 0.0)
    for (int t = 0; t < nf; ++t)
      spans[static_cast<size_t>(t)] *= data_.frames[static_cast<size_t>(t)].beta / mean_beta;
  return spans;
}

void Trainer::fit_latents_to_spans(const std::vector<double>& spans) {
  const int N = cfg_.n_latent;
  const int mid = (N + 1) / 2;
  const int nf = data_.n_frames;

  std::vector<Vec3> omega, vel;
  fd_neighbor_motion(omega, vel);

  if (cfg_.latent_mode == LatentMode::Spline) {
    // The spline is already linear in u, so the fit is closed form: endpoint
    // screws at +-half the span, translation taken into the camera frame
    // because that is where the composition applies it.
    double* cm = store_.slice_values(kCamMotion);
    for (int t = 0; t < nf; ++t) {
      double half = spans[static_cast<size_t>(t)] * (N - 1) / (2.0 * N);
      Vec3 w = omega[static_cast<size_t>(t)] * half;
      Vec3 v = data_.frames[static_cast<size_t>(t)].pose.rotation.transpose() *
               vel[static_cast<size_t>(t)] * half;
      double* p = cm + static_cast<size_t>(t) * 12;
      for (int i = 0; i < 3; ++i) {
        p[0 + i] = -w(i);
        p[3 + i] = -v(i);
        p[6 + i] = w(i);
        p[9 + i] = v(i);
      }
    }
    return;
  }

  auto target_pose = [&](int t, double delta) {
    const Pose& p = data_.frames[static_cast<size_t>(t)].pose;
    Pose out;
    out.rotation =
        p.rotation *
        screw_exp(ScrewAxis{omega[static_cast<size_t>(t)] * delta, Vec3::Zero()}).rotation;
    out.translation = p.translation + vel[static_cast<size_t>(t)] * delta;
    return out;
  };

  // The freeze schedule may have zeroed the module's rates; the supervised
  // fit needs them live, so lift them for the loop and put them back after.
  std::vector<double> saved_lr;
  saved_lr.reserve(store_.slices.size());
  for (auto& sl : store_.slices) {
    saved_lr.push_back(sl.lr);
    if (sl.name.rfind("blce_", 0) == 0) sl.lr = cfg_.lr_net;
  }

  AdamState boot_adam;
  boot_adam.resize(store_.values.size());
  std::vector<PoseGrad> d_poses(static_cast<size_t>(N));
  for (int it = 0; it < cfg_.boot_iters; ++it) {
    int f = it % nf;
    const DatasetFrame& df = data_.frames[static_cast<size_t>(f)];
    store_.zero_grads();
    BlceCache cache;
    LatentTrajectory traj = blce_forward(blce_, store_, df.pose, df.beta, f, &cache);
    for (int k = 1; k <= N; ++k) {
      Pose target = target_pose(f, spans[static_cast<size_t>(f)] * (k - mid) / N);
      const Pose& p = traj.poses[static_cast<size_t>(k - 1)];
      d_poses[static_cast<size_t>(k - 1)].d_rotation = 2.0 * (p.rotation - target.rotation);
      d_poses[static_cast<size_t>(k - 1)].d_translation =
          2.0 * (p.translation - target.translation);
    }
    blce_backward(blce_, store_, cache, df.pose, d_poses);
    // Plain squared pose error, so Adam at the module's training rate with a
    // small tail step is enough; the tail keeps the last epochs from
    // scribbling over the converged fit.
    adam_step(store_, boot_adam, it < cfg_.boot_iters * 3 / 4 ? 1.0 : 0.05);
  }

  for (size_t i = 0; i < store_.slices.size(); ++i) store_.slices[i].lr = saved_lr[i];
}

void Trainer::bootstrap_latents() {
  // A fresh latent module maps every latent to the frame pose, and that state
  // is a stationary point of the render loss: identical latent poses receive
  // identical adjoints, so the gradient that would spread them apart is
  // exactly zero. Meanwhile the splats happily absorb camera blur into their
  // own shape, and once they have, nothing ever pulls the trajectories open.
  // Fitting the module to finite-difference targets before the first render
  // step starts it inside the basin instead of on the saddle.
  fit_latents_to_spans(blur_scaled_spans());
}

void Trainer::calibrate_spans() {
  // The warm-start spans only rank frames by blur score. By now the splats
  // have sharpened enough that the spans are observable directly: sweep the
  // span of a straight-line trajectory and keep the one whose rendered blur
  // matches the captured frame best. The refit then hands those spans to the
  // frozen module, and the exposure estimator reads them back out as its
  // latent-to-neighbor ratio.
  const int N = cfg_.n_latent;
  const int mid = (N + 1) / 2;
  const int nf = data_.n_frames;
  if (nf < 2) return;

  sync_scene_from_store();
  std::vector<Vec3> omega, vel;
  fd_neighbor_motion(omega, vel);

  std::vector<double> spans(static_cast<size_t>(nf));
  for (int f = 0; f < nf; ++f) {
    const DatasetFrame& df = data_.frames[static_cast<size_t>(f)];
    auto mismatch = [&](double span) {
      LatentTrajectory traj;
      traj.frame_index = f;
      traj.poses.resize(static_cast<size_t>(N));
      for (int k = 1; k <= N; ++k) {
        double delta = span * (k - mid) / N;
        Pose& p = traj.poses[static_cast<size_t>(k - 1)];
        p.rotation = df.pose.rotation *
                     screw_exp(ScrewAxis{omega[static_cast<size_t>(f)] * delta, Vec3::Zero()})
                         .rotation;
        p.translation = df.pose.translation + vel[static_cast<size_t>(f)] * delta;
      }
      BlurRenderResult res =
          render_blurry(scene_, traj, latent_timestamps(f, span, cfg_.n_latent));
      return loss_rgb(res.blurry.color, df.blurry);
    };

    // Coarse sweep, then golden-section inside the bracket around the best.
    double best_span = 0.1, best_err = mismatch(0.1);
    for (double s = 0.2; s < 1.55; s += 0.1) {
      double e = mismatch(s);
      if (e < best_err) {
        best_err = e;
        best_span = s;
      }
    }
    constexpr double kInvPhi = 0.6180339887498949;
    double lo = best_span - 0.1, hi = best_span + 0.1;
    double a = hi - (hi - lo) * kInvPhi, b = lo + (hi - lo) * kInvPhi;
    double fa = mismatch(a), fb = mismatch(b);
    for (int it = 0; it < 8; ++it) {
      if (fa < fb) {
        hi = b;
        b = a;
        fb = fa;
        a = hi - (hi - lo) * kInvPhi;
        fa = mismatch(a);
      } else {
        lo = a;
        a = b;
        fa = fb;
        b = lo + (hi - lo) * kInvPhi;
        fb = mismatch(b);
      }
    }
    spans[static_cast<size_t>(f)] = 0.5 * (lo + hi);
  }

  fit_latents_to_spans(spans);
}

void Trainer::apply_net_schedule() {
  if (cfg_.net_release <= 0) return;  // schedule off, registered rates stand
  const double lr = iter_ < cfg_.net_release ? 0.0 : cfg_.lr_net_release;
  for (auto& sl : store_.slices)
    if (sl.name.rfind("blce_", 0) == 0 || sl.name == kCamMotion) sl.lr = lr;
}

void Trainer::sync_scene_from_store() {
  scene_ = scene_from_store(store_, n_static_, n_dynamic_, cfg_.n_ctrl, data_.intrinsics,
                            data_.n_frames);
}

void Trainer::post_step_projections() {
  double* quats = store_.slice_values(kQuats);
  const int n_total = n_static_ + n_dynamic_;
  for (int i = 0; i < n_total; ++i) {
    double n = 0.0;
    for (int a = 0; a < 4; ++a) n += quats[4 * i + a] * quats[4 * i + a];
    n = std::sqrt(n);
    if (n < 1e-12) {
      quats[4 * i + 0] = 1.0;
      quats[4 * i + 1] = quats[4 * i + 2] = quats[4 * i + 3] = 0.0;
    } else {
      for (int a = 0; a < 4; ++a) quats[4 * i + a] /= n;
    }
  }
  double* colors = store_.slice_values(kColors);
  for (size_t i = 0; i < store_.slice(kColors).count; ++i)
    colors[i] = std::min(1.0, std::max(0.0, colors[i]));
}

namespace {

// Two screw axes per frame, one at each end of the exposure, blended
// linearly in u. Shared by the trainer and checkpoint-only rendering.
LatentTrajectory spline_trajectory(const TrainConfig& cfg, const ParamStore& store,
                                   const Pose& pose, int frame) {
  const double* p = store.slice_values(kCamMotion) + static_cast<size_t>(frame) * 12;
  ScrewAxis a{Vec3(p[0], p[1], p[2]), Vec3(p[3], p[4], p[5])};
  ScrewAxis b{Vec3(p[6], p[7], p[8]), Vec3(p[9], p[10], p[11])};
  LatentTrajectory traj;
  traj.frame_index = frame;
  for (int k = 0; k < cfg.n_latent; ++k) {
    double u = cfg.n_latent > 1 ? static_cast<double>(k) / (cfg.n_latent - 1) : 0.5;
    ScrewAxis ax{(1.0 - u) * a.omega + u * b.omega, (1.0 - u) * a.v + u * b.v};
    traj.screw_axes.push_back(ax);
    traj.poses.push_back(compose(pose, screw_exp(ax)));
  }
  return traj;
}

}  // namespace

LatentTrajectory Trainer::latent_trajectory(int frame, BlceCache* cache) const {
  const Pose& pose = data_.frames[static_cast<size_t>(frame)].pose;
  if (cfg_.latent_mode != LatentMode::Spline)
    return blce_forward(blce_, store_, pose, data_.frames[static_cast<size_t>(frame)].beta,
                        frame, cache);
  return spline_trajectory(cfg_, store_, pose, frame);
}

void Trainer::spline_pose_backward(int frame, const std::vector<PoseGrad>& d_poses) {
  const Pose& pose = data_.frames[static_cast<size_t>(frame)].pose;
  const double* p = store_.slice_values(kCamMotion) + static_cast<size_t>(frame) * 12;
  double* g = store_.slice_grads(kCamMotion) + static_cast<size_t>(frame) * 12;
  ScrewAxis a{Vec3(p[0], p[1], p[2]), Vec3(p[3], p[4], p[5])};
  ScrewAxis b{Vec3(p[6], p[7], p[8]), Vec3(p[9], p[10], p[11])};
  for (int k = 0; k < cfg_.n_latent; ++k) {
    const PoseGrad& pg = d_poses[static_cast<size_t>(k)];
    if (pg.d_rotation.isZero(0.0) && pg.d_translation.isZero(0.0)) continue;
    double u = cfg_.n_latent > 1 ? static_cast<double>(k) / (cfg_.n_latent - 1) : 0.5;
    ScrewAxis ax{(1.0 - u) * a.omega + u * b.omega, (1.0 - u) * a.v + u * b.v};
    Mat3 d_r = pose.rotation.transpose() * pg.d_rotation;
    Vec3 d_t = pose.rotation.transpose() * pg.d_translation;
    ScrewAxisGrad ag = screw_exp_backward(ax, d_r, d_t);
    for (int i = 0; i < 3; ++i) {
      g[0 + i] += (1.0 - u) * ag.d_omega(i);
      g[3 + i] += (1.0 - u) * ag.d_v(i);
      g[6 + i] += u * ag.d_omega(i);
      g[9 + i] += u * ag.d_v(i);
    }
  }
}

double Trainer::estimate_t_hat(int frame, const LatentTrajectory& traj) {
  if (data_.n_frames < 2)
    throw std::invalid_argument("exposure estimation needs at least two frames");
  Pose prev, next;
  double factor = 2.0;
  if (frame == 0) {
    prev = data_.frames[0].pose;
    next = data_.frames[1].pose;
    factor = 1.0;
  } else if (frame == data_.n_frames - 1) {
    prev = data_.frames[static_cast<size_t>(data_.n_frames) - 2].pose;
    next = data_.frames[static_cast<size_t>(data_.n_frames) - 1].pose;
    factor = 1.0;
  } else {
    prev = data_.frames[static_cast<size_t>(frame) - 1].pose;
    next = data_.frames[static_cast<size_t>(frame) + 1].pose;
  }
  std::vector<Vec3> statics;
  const double* means = store_.slice_values(kStaticMeans);
  statics.reserve(static_cast<size_t>(n_static_));
  for (int i = 0; i < n_static_; ++i)
    statics.push_back(Vec3(means[3 * i], means[3 * i + 1], means[3 * i + 2]));
  ++lcee_calls_;
  return estimate_exposure(traj, prev, next, statics, data_.intrinsics, 1e-6, factor).t_hat;
}

LossReport Trainer::run_frame(int frame, double t_hat, const Image* valid_override,
                              bool backward) {
  sync_scene_from_store();
  const DatasetFrame& df = data_.frames[static_cast<size_t>(frame)];

  BlceCache cache;
  const bool blce_mode = cfg_.latent_mode != LatentMode::Spline;
  LatentTrajectory traj = latent_trajectory(frame, backward && blce_mode ? &cache : nullptr);
  LatentTimestamps taus = latent_timestamps(frame, t_hat, cfg_.n_latent);

  std::vector<RenderCache> caches;
  BlurRenderResult res = render_blurry(scene_, traj, taus, backward ? &caches : nullptr);

  LossReport report;
  report.frame = frame;
  report.beta = df.beta;
  report.t_hat = t_hat;
  report.l_rgb = loss_rgb(res.blurry.color, df.blurry);

  Image valid(res.blurry.alpha.width, res.blurry.alpha.height, 1);
  if (valid_override) {
    valid = *valid_override;
  } else {
    for (size_t i = 0; i < valid.data.size(); ++i)
      valid.data[i] =
          (res.blurry.alpha.data[i] > 0.5 && std::isfinite(df.depth.data[i])) ? 1.0 : 0.0;
  }
  size_t n_valid = 0;
  for (double v : valid.data)
    if (v > 0.5) ++n_valid;
  report.l_depth = n_valid > 0 ? loss_depth(res.blurry.depth, df.depth, valid) : 0.0;
  report.total = cfg_.lambda_rgb * report.l_rgb + cfg_.lambda_depth * report.l_depth;

  if (!backward) return report;

  // Pixel adjoints of the blurry mean; each latent sees them scaled by the
  // averaging weight 1/N_l.
  const double inv_n = 1.0 / cfg_.n_latent;
  Image d_color(df.blurry.width, df.blurry.height, 3);
  const double rgb_w =
      cfg_.lambda_rgb / static_cast<double>(df.blurry.data.size()) * inv_n;
  for (size_t i = 0; i < d_color.data.size(); ++i) {
    double diff = res.blurry.color.data[i] - df.blurry.data[i];
    d_color.data[i] = diff > 0.0 ? rgb_w : (diff < 0.0 ? -rgb_w : 0.0);
  }
  Image d_depth(valid.width, valid.height, 1);
  if (n_valid > 0 && cfg_.lambda_depth > 0.0) {
    const double depth_w = cfg_.lambda_depth / static_cast<double>(n_valid) * inv_n;
    for (size_t i = 0; i < d_depth.data.size(); ++i) {
      if (valid.data[i] <= 0.5) continue;
      double diff = res.blurry.depth.data[i] - df.depth.data[i];
      d_depth.data[i] = diff > 0.0 ? depth_w : (diff < 0.0 ? -depth_w : 0.0);
    }
  }
  RenderAdjoint adj;
  adj.d_color = &d_color;
  adj.d_depth = (n_valid > 0 && cfg_.lambda_depth > 0.0) ? &d_depth : nullptr;

  std::vector<PoseGrad> d_poses(static_cast<size_t>(cfg_.n_latent));
  d_times_.assign(static_cast<size_t>(cfg_.n_latent), 0.0);
  for (int k = 0; k < cfg_.n_latent; ++k) {
    SceneGrads g = render_backward(scene_, traj.poses[static_cast<size_t>(k)],
                                   taus.taus[static_cast<size_t>(k)],
                                   caches[static_cast<size_t>(k)], adj);
    d_poses[static_cast<size_t>(k)].d_rotation = g.d_rotation;
    d_poses[static_cast<size_t>(k)].d_translation = g.d_translation;
    d_times_[static_cast<size_t>(k)] = g.d_time;

    double* means = store_.slice_grads(kStaticMeans);
    double* ctrl = store_.slice_grads(kCtrl);
    double* quats = store_.slice_grads(kQuats);
    double* scales = store_.slice_grads(kLogScales);
    double* opac = store_.slice_grads(kOpacities);
    double* colors = store_.slice_grads(kColors);
    for (int i = 0; i < n_static_; ++i)
      for (int a = 0; a < 3; ++a) means[3 * i + a] += g.d_mean[static_cast<size_t>(i)](a);
    const int n_total = n_static_ + n_dynamic_;
    for (int i = 0; i < n_total; ++i) {
      for (int a = 0; a < 4; ++a) quats[4 * i + a] += g.d_rot_quat[static_cast<size_t>(i)](a);
      for (int a = 0; a < 3; ++a) {
        scales[3 * i + a] += g.d_log_scale[static_cast<size_t>(i)](a);
        colors[3 * i + a] += g.d_color[static_cast<size_t>(i)](a);
      }
      opac[i] += g.d_logit_opacity[static_cast<size_t>(i)];
    }
    for (int j = 0; j < n_dynamic_; ++j)
      for (int c = 0; c < cfg_.n_ctrl; ++c) {
        size_t off = (static_cast<size_t>(j) * cfg_.n_ctrl + c) * 3;
        for (int a = 0; a < 3; ++a)
          ctrl[off + a] += g.d_ctrl[static_cast<size_t>(j)][static_cast<size_t>(c)](a);
      }
  }

  if (blce_mode)
    blce_backward(blce_, store_, cache, df.pose, d_poses);
  else
    spline_pose_backward(frame, d_poses);

  return report;
}

int Trainer::frame_for_iter(long iter) const {
  const int n = data_.n_frames;
  long epoch = iter / n;
  int pos = static_cast<int>(iter % n);
  Rng rng(mix_seed(cfg_.seed, 0x5C4ED00 + static_cast<uint64_t>(epoch)));
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order[static_cast<size_t>(pos)];
}

LossReport Trainer::train_step() {
  apply_net_schedule();
  if (cfg_.calib_iter > 0 && iter_ == cfg_.calib_iter) calibrate_spans();
  const int frame = frame_for_iter(iter_);
  const bool warm = iter_ < cfg_.lcee_start;

  double t_hat = 0.0;
  if (!warm) {
    switch (cfg_.exposure_mode) {
      case ExposureMode::Lcee:
        t_hat = estimate_t_hat(frame, latent_trajectory(frame, nullptr));
        break;
      case ExposureMode::Fixed:
        t_hat = cfg_.fixed_exposure;
        break;
      case ExposureMode::Learnable:
        t_hat = softplus(store_.slice_values(kExposureRaw)[frame]);
        break;
    }
  }

  store_.zero_grads();
  LossReport report = run_frame(frame, t_hat, nullptr, true);

  if (!warm && cfg_.exposure_mode == ExposureMode::Learnable) {
    // tau_k = t + t_hat (k - mid)/N_l, so dL/d t_hat folds the per-latent
    // time gradients with their offsets, then the softplus slope.
    const int mid = (cfg_.n_latent + 1) / 2;
    double d_t_hat = 0.0;
    for (int k = 0; k < cfg_.n_latent; ++k)
      d_t_hat += d_times_[static_cast<size_t>(k)] * (k + 1 - mid) / cfg_.n_latent;
    double raw = store_.slice_values(kExposureRaw)[frame];
    store_.slice_grads(kExposureRaw)[frame] += d_t_hat * sigmoid(raw);
  }

  if (!std::isfinite(report.total)) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "loss is not finite at iteration %ld", iter_);
    throw TrainingDiverged(buf);
  }
  if (t_hat > 10.0) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "exposure estimate %.3g is runaway at iteration %ld", t_hat,
                  iter_);
    throw TrainingDiverged(buf);
  }

  adam_step(store_, adam_);
  post_step_projections();
  sync_scene_from_store();
  t_hat_[static_cast<size_t>(frame)] = t_hat;
  ++iter_;
  return report;
}

void Trainer::train(const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  const bool fresh = iter_ == 0 || !fs::exists(metrics_path);
  std::ofstream log(metrics_path, fresh ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot write " + metrics_path);
  if (fresh) log << "iter,l_rgb,l_depth,total,mean_t_hat\n";

  char buf[256];
  while (iter_ < cfg_.n_iters) {
    long i = iter_;
    LossReport r = train_step();
    double mean_t_hat = 0.0;
    for (double v : t_hat_) mean_t_hat += v;
    mean_t_hat /= static_cast<double>(t_hat_.size());
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g\n", i, r.l_rgb, r.l_depth,
                  r.total, mean_t_hat);
    log << buf;
    if (cfg_.checkpoint_every > 0 && iter_ % cfg_.checkpoint_every == 0 &&
        iter_ < cfg_.n_iters) {
      log.flush();
      checkpoint().save((fs::path(out_dir) / "checkpoint").string());
    }
  }
  log.flush();
  checkpoint().save((fs::path(out_dir) / "checkpoint").string());
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.cfg = cfg_;
  ck.store = store_;
  ck.adam = adam_;
  ck.iter = iter_;
  ck.intrinsics = data_.intrinsics;
  ck.n_frames = data_.n_frames;
  ck.n_static = n_static_;
  ck.n_dynamic = n_dynamic_;
  for (const DatasetFrame& f : data_.frames) {
    ck.frame_poses.push_back(f.pose);
    ck.frame_beta.push_back(f.beta);
    ck.frame_exposure_true.push_back(f.exposure_true);
  }
  ck.frame_t_hat = t_hat_;
  return ck;
}

RenderedImage Trainer::render_sharp(int frame) const {
  return render(scene_, data_.frames[static_cast<size_t>(frame)].pose, frame);
}

BlurRenderResult Trainer::render_blurry_frame(int frame) {
  sync_scene_from_store();
  LatentTrajectory traj = latent_trajectory(frame, nullptr);
  double t_hat = t_hat_[static_cast<size_t>(frame)];
  return render_blurry(scene_, traj, latent_timestamps(frame, t_hat, cfg_.n_latent));
}

Image Trainer::depth_valid_mask(int frame) {
  sync_scene_from_store();
  LatentTrajectory traj = latent_trajectory(frame, nullptr);
  double t_hat = t_hat_[static_cast<size_t>(frame)];
  BlurRenderResult res =
      render_blurry(scene_, traj, latent_timestamps(frame, t_hat, cfg_.n_latent));
  const DatasetFrame& df = data_.frames[static_cast<size_t>(frame)];
  Image valid(res.blurry.alpha.width, res.blurry.alpha.height, 1);
  for (size_t i = 0; i < valid.data.size(); ++i)
    valid.data[i] =
        (res.blurry.alpha.data[i] > 0.5 && std::isfinite(df.depth.data[i])) ? 1.0 : 0.0;
  return valid;
}

double Trainer::eval_loss(int frame, double t_hat, const Image& valid) {
  return run_frame(frame, t_hat, &valid, false).total;
}

LossReport Trainer::backward_loss(int frame, double t_hat, const Image& valid) {
  store_.zero_grads();
  return run_frame(frame, t_hat, &valid, true);
}

BlurRenderResult render_blurry_from(const Checkpoint& ck, int frame) {
  if (frame < 0 || frame >= ck.n_frames)
    throw std::invalid_argument("frame index outside the checkpoint's range");
  SceneModel scene = ck.rebuild_scene();
  const Pose& pose = ck.frame_poses[static_cast<size_t>(frame)];
  LatentTrajectory traj;
  if (ck.cfg.latent_mode != LatentMode::Spline) {
    BlceSpec spec;
    spec.n_latent = ck.cfg.n_latent;
    spec.inject_blur_feature = ck.cfg.latent_mode == LatentMode::BlurAdaptive;
    traj = blce_forward(spec, ck.store, pose, ck.frame_beta[static_cast<size_t>(frame)], frame,
                        nullptr);
  } else {
    traj = spline_trajectory(ck.cfg, ck.store, pose, frame);
  }
  double t_hat = ck.frame_t_hat[static_cast<size_t>(frame)];
  return render_blurry(scene, traj, latent_timestamps(frame, t_hat, ck.cfg.n_latent));
}

EvalReport evaluate(const Checkpoint& ck, const Dataset& data) {
  if (data.n_frames != ck.n_frames)
    throw std::invalid_argument("dataset frame count does not match the checkpoint");
  SceneModel scene = ck.rebuild_scene();

  EvalReport rep;
  double sum_full = 0.0, sum_base = 0.0, sum_dyn = 0.0;
  int n_dyn_rows = 0;
  for (int t = 0; t < ck.n_frames; ++t) {
    const DatasetFrame& df = data.frames[static_cast<size_t>(t)];
    RenderedImage rendered = render(scene, ck.frame_poses[static_cast<size_t>(t)], t);

    EvalRow row;
    row.frame = t;
    row.psnr_full = psnr(rendered.color, df.sharp);
    row.psnr_baseline = psnr(df.blurry, df.sharp);
    try {
      row.psnr_dynamic = psnr(rendered.color, df.sharp, &df.mask);
      sum_dyn += row.psnr_dynamic;
      ++n_dyn_rows;
    } catch (const EmptyMask&) {
      row.psnr_dynamic = std::numeric_limits<double>::quiet_NaN();
    }
    row.beta = ck.frame_beta[static_cast<size_t>(t)];
    row.t_hat = ck.frame_t_hat[static_cast<size_t>(t)];
    row.exposure_true = ck.frame_exposure_true[static_cast<size_t>(t)];
    sum_full += row.psnr_full;
    sum_base += row.psnr_baseline;
    rep.rows.push_back(row);
  }
  rep.mean_psnr_full = sum_full / ck.n_frames;
  rep.mean_psnr_baseline = sum_base / ck.n_frames;
  rep.mean_psnr_dynamic =
      n_dyn_rows > 0 ? sum_dyn / n_dyn_rows : std::numeric_limits<double>::quiet_NaN();

  try {
    rep.corr_beta_t_hat = pearson(ck.frame_beta, ck.frame_t_hat);
  } catch (const std::exception&) {
    rep.corr_beta_t_hat = std::numeric_limits<double>::quiet_NaN();
  }
  try {
    rep.corr_t_hat_exposure = pearson(ck.frame_t_hat, ck.frame_exposure_true);
  } catch (const std::exception&) {
    rep.corr_t_hat_exposure = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

}  // namespace desplat
