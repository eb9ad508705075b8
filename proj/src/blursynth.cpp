#include "desplat/blursynth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>

#include "desplat/blce.hpp"
#include "desplat/io.hpp"
#include "json.hpp"

namespace desplat {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

BlurRenderResult render_blurry(const SceneModel& scene, const LatentTrajectory& traj,
                               const LatentTimestamps& taus, std::vector<RenderCache>* caches) {
  const size_t n = taus.taus.size();
  if (traj.poses.size() != n)
    throw std::invalid_argument("latent pose and timestamp counts differ");
  if (n == 0) throw std::invalid_argument("no latent samples");

  BlurRenderResult out;
  out.timestamps = taus;
  out.trajectory = traj;
  if (caches) caches->assign(n, RenderCache{});

  const int w = scene.intrinsics.width;
  const int h = scene.intrinsics.height;
  out.blurry.color = Image(w, h, 3);
  out.blurry.depth = Image(w, h, 1);
  out.blurry.alpha = Image(w, h, 1);

  for (size_t k = 0; k < n; ++k) {
    RenderedImage latent =
        render(scene, traj.poses[k], taus.taus[k], caches ? &(*caches)[k] : nullptr);
    for (size_t i = 0; i < latent.color.data.size(); ++i)
      out.blurry.color.data[i] += latent.color.data[i];
    for (size_t i = 0; i < latent.depth.data.size(); ++i) {
      out.blurry.depth.data[i] += latent.depth.data[i];
      out.blurry.alpha.data[i] += latent.alpha.data[i];
    }
    out.latents.push_back(std::move(latent));
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out.blurry.color.data) v *= inv;
  for (double& v : out.blurry.depth.data) v *= inv;
  for (double& v : out.blurry.alpha.data) v *= inv;
  return out;
}

void SyntheticSceneSpec::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("image size must be positive");
  if (n_frames < 2) throw std::invalid_argument("need at least two frames");
  if (oversample < 16) throw std::invalid_argument("oracle oversampling must be at least 16");
  if (exposures.empty()) throw std::invalid_argument("need at least one exposure");
  for (double e : exposures)
    if (!(e >= 0.0)) throw std::invalid_argument("exposures must be nonnegative");
  if (statics.count <= 0 || dynamic.count <= 0)
    throw std::invalid_argument("gaussian counts must be positive");
}

namespace {

using nlohmann::json;

Vec3 vec3_from(const json& j, const char* key, const Vec3& fallback) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
}

json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

SyntheticSceneSpec SyntheticSceneSpec::from_json(const std::string& text) {
  json j = json::parse(text);
  SyntheticSceneSpec s;
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.fx = j.value("fx", s.fx);
  s.fy = j.value("fy", s.fy);
  s.n_frames = j.value("n_frames", s.n_frames);
  s.seed = j.value("seed", s.seed);
  s.oversample = j.value("oversample", s.oversample);
  if (j.contains("exposures")) s.exposures = j.at("exposures").get<std::vector<double>>();
  if (j.contains("camera")) {
    const json& c = j.at("camera");
    s.camera.eye = vec3_from(c, "eye", s.camera.eye);
    s.camera.target = vec3_from(c, "target", s.camera.target);
    s.camera.shake_amp = vec3_from(c, "shake_amp", s.camera.shake_amp);
    s.camera.shake_freq = vec3_from(c, "shake_freq", s.camera.shake_freq);
    s.camera.shake_phase = vec3_from(c, "shake_phase", s.camera.shake_phase);
  }
  if (j.contains("statics")) {
    const json& c = j.at("statics");
    s.statics.count = c.value("count", s.statics.count);
    s.statics.box_min = vec3_from(c, "box_min", s.statics.box_min);
    s.statics.box_max = vec3_from(c, "box_max", s.statics.box_max);
    s.statics.scale = c.value("scale", s.statics.scale);
  }
  if (j.contains("dynamic")) {
    const json& c = j.at("dynamic");
    s.dynamic.count = c.value("count", s.dynamic.count);
    s.dynamic.center = vec3_from(c, "center", s.dynamic.center);
    s.dynamic.path_amp = vec3_from(c, "path_amp", s.dynamic.path_amp);
    s.dynamic.path_freq = vec3_from(c, "path_freq", s.dynamic.path_freq);
    s.dynamic.path_phase = vec3_from(c, "path_phase", s.dynamic.path_phase);
    s.dynamic.radius = c.value("radius", s.dynamic.radius);
    s.dynamic.scale = c.value("scale", s.dynamic.scale);
  }
  s.validate();
  return s;
}

std::string SyntheticSceneSpec::to_json() const {
  json j;
  j["width"] = width;
  j["height"] = height;
  j["fx"] = fx;
  j["fy"] = fy;
  j["n_frames"] = n_frames;
  j["seed"] = seed;
  j["oversample"] = oversample;
  j["exposures"] = exposures;
  j["camera"] = {{"eye", vec3_to(camera.eye)},
                 {"target", vec3_to(camera.target)},
                 {"shake_amp", vec3_to(camera.shake_amp)},
                 {"shake_freq", vec3_to(camera.shake_freq)},
                 {"shake_phase", vec3_to(camera.shake_phase)}};
  j["statics"] = {{"count", statics.count},
                  {"box_min", vec3_to(statics.box_min)},
                  {"box_max", vec3_to(statics.box_max)},
                  {"scale", statics.scale}};
  j["dynamic"] = {{"count", dynamic.count},
                  {"center", vec3_to(dynamic.center)},
                  {"path_amp", vec3_to(dynamic.path_amp)},
                  {"path_freq", vec3_to(dynamic.path_freq)},
                  {"path_phase", vec3_to(dynamic.path_phase)},
                  {"radius", dynamic.radius},
                  {"scale", dynamic.scale}};
  return j.dump(2);
}

GroundTruth::GroundTruth(const SyntheticSceneSpec& s) : spec(s) {
  spec.validate();
  intr.fx = spec.fx;
  intr.fy = spec.fy;
  intr.cx = (spec.width - 1) / 2.0;
  intr.cy = (spec.height - 1) / 2.0;
  intr.width = spec.width;
  intr.height = spec.height;

  Rng rng(spec.seed);
  for (int i = 0; i < spec.statics.count; ++i) {
    Gaussian g;
    for (int a = 0; a < 3; ++a) {
      g.mean(a) = rng.uniform(spec.statics.box_min(a), spec.statics.box_max(a));
      g.log_scale(a) = std::log(spec.statics.scale * rng.uniform(0.75, 1.3));
      g.color(a) = rng.uniform(0.15, 0.95);
    }
    g.logit_opacity = rng.uniform(1.2, 2.5);
    g.kind = GaussianKind::Static;
    statics.push_back(g);
  }
  for (int i = 0; i < spec.dynamic.count; ++i) {
    Gaussian g;
    Vec3 off;
    do {
      for (int a = 0; a < 3; ++a) off(a) = rng.uniform(-spec.dynamic.radius, spec.dynamic.radius);
    } while (off.norm() > spec.dynamic.radius);
    g.mean = off;
    for (int a = 0; a < 3; ++a) {
      g.log_scale(a) = std::log(spec.dynamic.scale * rng.uniform(0.8, 1.25));
      g.color(a) = rng.uniform(0.25, 1.0);
    }
    g.logit_opacity = rng.uniform(1.5, 2.5);
    g.kind = GaussianKind::Dynamic;
    blob.push_back(g);
  }
}

Pose GroundTruth::camera_at(double t) const {
  // Handheld jitter is mostly rotational, so the shake perturbs the look
  // target rather than the eye. Shaking the eye under a fixed look_at target
  // re-aims the camera and cancels almost all image motion for points near
  // the target plane, which would leave the statics with no blur at all.
  const CameraPathSpec& c = spec.camera;
  Vec3 target = c.target;
  for (int a = 0; a < 3; ++a)
    target(a) += c.shake_amp(a) * std::sin(2.0 * kPi * c.shake_freq(a) * t / spec.n_frames +
                                           c.shake_phase(a));
  return look_at(c.eye, target);
}

Vec3 GroundTruth::object_center(double t) const {
  const DynamicObjectSpec& d = spec.dynamic;
  Vec3 p = d.center;
  for (int a = 0; a < 3; ++a)
    p(a) += d.path_amp(a) * std::sin(2.0 * kPi * d.path_freq(a) * t / spec.n_frames +
                                     d.path_phase(a));
  return p;
}

double GroundTruth::exposure(int frame) const {
  return spec.exposures[static_cast<size_t>(frame) % spec.exposures.size()];
}

SceneModel GroundTruth::scene_at(double t) const {
  SceneModel m;
  m.intrinsics = intr;
  m.n_frames = spec.n_frames;
  m.static_gaussians = statics;
  Vec3 center = object_center(t);
  for (Gaussian g : blob) {
    g.mean += center;
    m.static_gaussians.push_back(g);
  }
  return m;
}

OracleFrame oracle_blur(const GroundTruth& gt, int frame, int m_override) {
  const int m = m_override > 0 ? m_override : gt.spec.oversample;
  const double t = frame;
  const double e = gt.exposure(frame);

  OracleFrame out;
  out.pose = gt.camera_at(t);
  out.exposure = e;

  RenderedImage sharp = render(gt.scene_at(t), out.pose, t);
  out.sharp = sharp.color;

  out.depth = Image(gt.intr.width, gt.intr.height, 1);
  for (size_t i = 0; i < out.depth.data.size(); ++i)
    out.depth.data[i] = sharp.alpha.data[i] > 0.5 ? sharp.depth.data[i]
                                                  : std::numeric_limits<double>::quiet_NaN();

  if (e == 0.0) {
    out.blurry = out.sharp;
  } else {
    out.blurry = Image(gt.intr.width, gt.intr.height, 3);
    for (int j = 0; j < m; ++j) {
      double tau = t - e / 2.0 + (j + 0.5) * e / m;
      RenderedImage latent = render(gt.scene_at(tau), gt.camera_at(tau), tau);
      for (size_t i = 0; i < out.blurry.data.size(); ++i)
        out.blurry.data[i] += latent.color.data[i];
    }
    for (double& v : out.blurry.data) v /= m;
  }

  // The object's own coverage, independent of occlusion by statics.
  SceneModel blob_only;
  blob_only.intrinsics = gt.intr;
  blob_only.n_frames = gt.spec.n_frames;
  Vec3 center = gt.object_center(t);
  for (Gaussian g : gt.blob) {
    g.mean += center;
    blob_only.static_gaussians.push_back(g);
  }
  RenderedImage dyn = render(blob_only, out.pose, t);
  out.mask = Image(gt.intr.width, gt.intr.height, 1);
  for (size_t i = 0; i < out.mask.data.size(); ++i)
    out.mask.data[i] = dyn.alpha.data[i] > 0.5 ? 1.0 : 0.0;

  return out;
}

namespace {

std::string frame_name(const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem, i, ext);
  return buf;
}

json pose_to_json(const Pose& p) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r)
    rows.push_back(json::array(
        {p.rotation(r, 0), p.rotation(r, 1), p.rotation(r, 2), p.translation(r)}));
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

}  // namespace

void write_dataset(const SyntheticSceneSpec& spec, const std::string& out_dir) {
  namespace fs = std::filesystem;
  GroundTruth gt(spec);
  fs::create_directories(fs::path(out_dir) / "frames");

  json manifest;
  manifest["width"] = gt.intr.width;
  manifest["height"] = gt.intr.height;
  manifest["fx"] = gt.intr.fx;
  manifest["fy"] = gt.intr.fy;
  manifest["cx"] = gt.intr.cx;
  manifest["cy"] = gt.intr.cy;
  manifest["n_frames"] = spec.n_frames;
  manifest["spec"] = json::parse(spec.to_json());
  json frames = json::array();

  for (int t = 0; t < spec.n_frames; ++t) {
    OracleFrame f = oracle_blur(gt, t);
    fs::path root(out_dir);
    write_png((root / "frames" / frame_name("blur", t, "png")).string(), f.blurry);
    write_f32((root / "frames" / frame_name("blur", t, "f32")).string(), f.blurry);
    write_png((root / "frames" / frame_name("sharp", t, "png")).string(), f.sharp);
    write_f32((root / "frames" / frame_name("sharp", t, "f32")).string(), f.sharp);
    write_f32((root / frame_name("depth", t, "f32")).string(), f.depth);
    write_png((root / frame_name("mask", t, "png")).string(), f.mask);

    json fj;
    fj["pose"] = pose_to_json(f.pose);
    fj["exposure"] = f.exposure;
    frames.push_back(fj);
  }
  manifest["frames"] = frames;
  write_text_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2));
}

Dataset load_dataset(const std::string& dir, int crop_s) {
  namespace fs = std::filesystem;
  json manifest = json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));

  Dataset ds;
  ds.intrinsics.width = manifest.at("width").get<int>();
  ds.intrinsics.height = manifest.at("height").get<int>();
  ds.intrinsics.fx = manifest.at("fx").get<double>();
  ds.intrinsics.fy = manifest.at("fy").get<double>();
  ds.intrinsics.cx = manifest.at("cx").get<double>();
  ds.intrinsics.cy = manifest.at("cy").get<double>();
  ds.n_frames = manifest.at("n_frames").get<int>();

  const json& frames = manifest.at("frames");
  for (int t = 0; t < ds.n_frames; ++t) {
    DatasetFrame f;
    fs::path root(dir);
    f.blurry = read_f32((root / "frames" / frame_name("blur", t, "f32")).string());
    f.sharp = read_f32((root / "frames" / frame_name("sharp", t, "f32")).string());
    f.depth = read_f32((root / frame_name("depth", t, "f32")).string());
    Image mask_png = read_png((root / frame_name("mask", t, "png")).string());
    f.mask = Image(mask_png.width, mask_png.height, 1);
    for (size_t i = 0; i < f.mask.data.size(); ++i)
      f.mask.data[i] = mask_png.data[i] > 0.5 ? 1.0 : 0.0;
    f.pose = pose_from_json(frames.at(t).at("pose"));
    f.exposure_true = frames.at(t).at("exposure").get<double>();
    f.beta = blur_score(f.blurry, crop_s, t).beta;
    ds.frames.push_back(std::move(f));
  }
  return ds;
}

}  // namespace desplat
