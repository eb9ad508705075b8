#pragma once

#include <string>
#include <vector>

#include "desplat/image.hpp"
#include "desplat/lcee.hpp"
#include "desplat/rasterizer.hpp"
#include "desplat/rng.hpp"
#include "desplat/scene.hpp"

namespace desplat {

struct BlurRenderResult {
  RenderedImage blurry;
  std::vector<RenderedImage> latents;
  LatentTimestamps timestamps;
  LatentTrajectory trajectory;
};

// Renders one latent sharp frame per (tau_k, pose_k) pair and averages them:
// color, depth and alpha are all the plain pixelwise mean over k. When
// caches is given it receives one RenderCache per latent so the trainer can
// run the backward passes without re-rendering.
BlurRenderResult render_blurry(const SceneModel& scene, const LatentTrajectory& traj,
                               const LatentTimestamps& taus,
                               std::vector<RenderCache>* caches = nullptr);

// Analytic toy scene: a static slab of Gaussians, one blob-cluster object on
// a sinusoidal path, and a camera whose look target wobbles sinusoidally, a
// rotational jitter like a handheld shot. Everything is a closed-form
// function of continuous frame time, so ground truth (sharp, blur, depth,
// mask) exists at any instant.
struct CameraPathSpec {
  Vec3 eye = Vec3(0.0, 0.0, -6.0);
  Vec3 target = Vec3::Zero();
  Vec3 shake_amp = Vec3(0.12, 0.09, 0.0);  // look-target wobble, world units
  Vec3 shake_freq = Vec3(3.0, 2.0, 0.0);   // cycles over the whole sequence
  Vec3 shake_phase = Vec3(0.0, 1.3, 0.0);
};

struct StaticLayoutSpec {
  int count = 60;
  Vec3 box_min = Vec3(-2.4, -2.4, -0.15);
  Vec3 box_max = Vec3(2.4, 2.4, 0.15);
  double scale = 0.16;
};

struct DynamicObjectSpec {
  int count = 12;
  Vec3 center = Vec3(0.0, 0.0, -1.5);
  Vec3 path_amp = Vec3(1.1, 0.45, 0.0);
  Vec3 path_freq = Vec3(1.0, 2.0, 0.0);
  Vec3 path_phase = Vec3(0.0, 0.0, 0.0);
  double radius = 0.28;
  double scale = 0.11;
};

struct SyntheticSceneSpec {
  int width = 64;
  int height = 64;
  double fx = 70.0;
  double fy = 70.0;
  int n_frames = 24;
  uint64_t seed = 1;
  int oversample = 64;
  // Cycled over frames: a single entry is a constant exposure, two entries
  // alternate, and so on. Units are inter-frame intervals.
  std::vector<double> exposures = {0.6};
  CameraPathSpec camera;
  StaticLayoutSpec statics;
  DynamicObjectSpec dynamic;

  static SyntheticSceneSpec from_json(const std::string& text);
  std::string to_json() const;
  void validate() const;  // throws std::invalid_argument
};

// The deterministic expansion of a spec: concrete Gaussians for the slab and
// the blob offsets, plus the analytic camera and object paths.
struct GroundTruth {
  SyntheticSceneSpec spec;
  Intrinsics intr;
  std::vector<Gaussian> statics;
  std::vector<Gaussian> blob;  // means are offsets from the path center

  explicit GroundTruth(const SyntheticSceneSpec& s);

  Pose camera_at(double t) const;
  Vec3 object_center(double t) const;
  double exposure(int frame) const;
  // Statics plus the blob frozen at time t, as a static-only scene.
  SceneModel scene_at(double t) const;
};

struct OracleFrame {
  Image sharp;   // H x W x 3
  Image blurry;  // H x W x 3, m-sample mean over the exposure window
  Image depth;   // H x W, NaN where the sharp render's alpha <= 0.5
  Image mask;    // H x W, 1 where the object's own accumulated alpha > 0.5
  Pose pose;     // camera at frame time t
  double exposure = 0.0;
};

// Brute-force blur reference: the mean of m sharp renders at midpoint times
// spanning [t - e/2, t + e/2]. m_override replaces spec.oversample when
// positive (used by the convergence checks).
OracleFrame oracle_blur(const GroundTruth& gt, int frame, int m_override = 0);

// Writes blur/sharp PNG+f32 pairs, depth f32, mask PNG and manifest.json
// into out_dir (created if missing).
void write_dataset(const SyntheticSceneSpec& spec, const std::string& out_dir);

struct DatasetFrame {
  Image blurry;
  Image sharp;
  Image depth;
  Image mask;
  Pose pose;
  double exposure_true = 0.0;
  double beta = 0.0;
};

struct Dataset {
  Intrinsics intrinsics;
  int n_frames = 0;
  std::vector<DatasetFrame> frames;
};

// Loads a directory written by write_dataset. Blur scores are computed once
// here with the given crop size.
Dataset load_dataset(const std::string& dir, int crop_s = 20);

}  // namespace desplat
