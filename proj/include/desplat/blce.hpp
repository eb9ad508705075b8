#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "desplat/geometry.hpp"
#include "desplat/grad_engine.hpp"
#include "desplat/image.hpp"

namespace desplat {

struct BlurScore {
  double beta = 0.0;
  int frame_index = 0;
};

struct BlurFeature {
  std::vector<double> phi;
};

struct LatentState {
  std::vector<double> z;
  double u = 0.0;
};

struct LatentTrajectory {
  std::vector<Pose> poses;
  std::vector<ScrewAxis> screw_axes;
  int frame_index = 0;
};

struct ImageSmallerThanCrop : std::runtime_error {
  ImageSmallerThanCrop() : std::runtime_error("image smaller than the blur-score crop") {}
};

// Low-frequency energy ratio of the frame: magnitudes of the shifted DFT of
// the luminance inside the centered s x s square over the total. A constant
// image scores 1; an all-zero image is treated the same way (pure DC).
BlurScore blur_score(const Image& frame, int s, int frame_index = 0);

// Network shapes and knobs for the latent camera model. Parameters live in a
// ParamStore under the slice names below so the trainer can checkpoint and
// step them uniformly.
struct BlceSpec {
  int feature_dim = 32;
  int latent_dim = 64;
  int pe_bands = 6;
  // Bands for encoding the pose input. Desk-scale shake keeps the frame
  // poses within a fraction of a degree of each other, so the raw 12 numbers
  // are nearly identical across frames and the latents collapse to one
  // trajectory; the high bands pull those tiny differences apart and let the
  // decoder specialize per frame from the first iteration.
  int enc_pe_bands = 6;
  int n_latent = 9;
  int substeps = 4;
  double max_screw = 1.0;
  // When false the ODE field sees only (z, u): the plain neural-ODE
  // ablation with no blur conditioning.
  bool inject_blur_feature = true;

  static constexpr const char* kFTheta = "blce_ftheta";
  static constexpr const char* kFEnc = "blce_fenc";
  static constexpr const char* kField = "blce_field";
  static constexpr const char* kFDec = "blce_fdec";

  MlpSpec f_theta() const { return MlpSpec{2 * pe_bands, {64, 64}, feature_dim}; }
  MlpSpec f_enc() const { return MlpSpec{12 * 2 * enc_pe_bands, {64, 64}, latent_dim}; }
  MlpSpec field() const {
    int in = latent_dim + 1 + (inject_blur_feature ? feature_dim : 0);
    return MlpSpec{in, {128, 128}, latent_dim};
  }
  // The decoder is the one gate every pose gradient passes through, so its
  // hidden layer is tanh: a ReLU layer here can die outright under the early
  // sign-loss whiplash, which freezes the latent poses and starves the whole
  // upstream chain for good.
  MlpSpec f_dec() const { return MlpSpec{latent_dim, {64}, 6, Activation::Tanh}; }

  void register_params(ParamStore& store, double lr) const;
  // Decoder output layer starts at zero so every latent pose begins at the
  // frame pose.
  void init_params(ParamStore& store, Rng& rng) const;
};

// Phi = F_theta(pe(beta)).
BlurFeature blur_feature(const BlceSpec& spec, const ParamStore& store, const BlurScore& score);

// Saved intermediates of one frame's forward pass, replayed by the backward.
struct BlceCache {
  std::vector<double> enc_input;
  MlpCache enc_cache;
  std::vector<double> pe;
  MlpCache ftheta_cache;
  std::vector<double> phi;

  struct Stage {
    std::vector<double> input;
    MlpCache cache;
    std::vector<double> k;
  };
  struct Step {
    std::vector<double> z0;
    double u0 = 0.0;
    double h = 0.0;
    std::array<Stage, 4> stages;
  };
  std::vector<Step> steps;

  std::vector<LatentState> states;
  std::vector<MlpCache> dec_caches;
  std::vector<std::array<double, 6>> raw_axes;
};

// z(0) = F_enc(pe(top 3x4 of the pose, row-major)), then fixed-step RK4 of
// dz/du = field(z, u, Phi) across the uniform grid u_k = (k-1)/(N_l-1).
std::vector<LatentState> integrate_latents(const BlceSpec& spec, const ParamStore& store,
                                           const Pose& frame_pose, const BlurFeature& feature,
                                           BlceCache* cache = nullptr);

// Per-state screw axis from F_dec, soft-bounded through
// max_screw * tanh(raw / max_screw), composed onto the frame pose.
LatentTrajectory decode_latent_poses(const BlceSpec& spec, const ParamStore& store,
                                     const std::vector<LatentState>& states,
                                     const Pose& frame_pose, int frame_index,
                                     BlceCache* cache = nullptr);

// Full chain for one frame: blur feature, latent ODE, decoded poses.
LatentTrajectory blce_forward(const BlceSpec& spec, const ParamStore& store,
                              const Pose& frame_pose, double beta, int frame_index,
                              BlceCache* cache = nullptr);

struct PoseGrad {
  Mat3 d_rotation = Mat3::Zero();
  Vec3 d_translation = Vec3::Zero();
};

// Accumulates dL/d(network params) into store.grads given per-latent-pose
// adjoints, replaying the cached forward in reverse.
void blce_backward(const BlceSpec& spec, ParamStore& store, const BlceCache& cache,
                   const Pose& frame_pose, const std::vector<PoseGrad>& d_poses);

}  // namespace desplat
