#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "desplat/image.hpp"
#include "desplat/scene.hpp"

namespace desplat {

// Screen-space footprint of one projected Gaussian, plus the camera-space
// intermediates the backward pass re-derives its chain rule from.
struct Splat2D {
  Vec2 pixel_mean = Vec2::Zero();
  Mat2 cov2d = Mat2::Zero();      // regularized (+0.3 on the diagonal)
  Mat2 cov2d_inv = Mat2::Zero();
  double depth = 0.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  int source_index = 0;

  Vec3 p_cam = Vec3::Zero();
  double radius = 0.0;
  double q_cut = 0.0;  // Mahalanobis bound past which alpha < 1/255
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // clamped pixel bounds, inclusive
};

struct RenderedImage {
  Image color;  // H x W x 3, in [0,1]
  Image depth;  // H x W, alpha-weighted camera depth
  Image alpha;  // H x W, accumulated opacity
};

// Everything the backward pass needs to avoid a second forward sweep:
// the culled depth-sorted splats and, per pixel, the splats that actually
// contributed with their blend alphas (in front-to-back order).
struct RenderCache {
  struct Entry {
    uint32_t splat;
    double alpha;
  };
  std::vector<Splat2D> splats;
  std::vector<uint32_t> offsets;  // per-pixel [offsets[i], offsets[i+1]) into entries
  std::vector<Entry> entries;
};

// Gradient sinks for one rendered view. Per-Gaussian arrays follow the flat
// scene order (statics first, then dynamics). d_mean is with respect to the
// instantaneous mean at time t; for dynamic Gaussians the same gradient is
// also chained through the spline into d_ctrl and d_time.
struct SceneGrads {
  std::vector<Vec3> d_mean;
  std::vector<Vec4> d_rot_quat;
  std::vector<Vec3> d_log_scale;
  std::vector<double> d_logit_opacity;
  std::vector<Vec3> d_color;
  std::vector<std::vector<Vec3>> d_ctrl;  // per dynamic Gaussian
  Mat3 d_rotation = Mat3::Zero();         // camera pose
  Vec3 d_translation = Vec3::Zero();
  double d_time = 0.0;

  void resize(size_t n_static, const std::vector<DynamicGaussian>& dyn);
  void add(const SceneGrads& other, double scale = 1.0);
};

struct RenderAdjoint {
  const Image* d_color = nullptr;  // H x W x 3, required
  const Image* d_depth = nullptr;  // H x W, optional
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Projects one time-advanced Gaussian. Returns nullopt (culled) when the
// mean is behind the near plane or the footprint misses the image.
std::optional<Splat2D> project_gaussian(const Gaussian& g, const Pose& pose,
                                        const Intrinsics& intr);

// Front-to-back alpha blending over depth-sorted splats against a black
// background. Blending stops once transmittance drops below 1e-4;
// contributions with alpha below 1/255 are skipped.
RenderedImage render(const SceneModel& scene, const Pose& pose, double t,
                     RenderCache* cache = nullptr);

// Reverse-mode pass over a cached render.
SceneGrads render_backward(const SceneModel& scene, const Pose& pose, double t,
                           const RenderCache& cache, const RenderAdjoint& adj);

// Convenience wrapper: forward render plus backward for a color adjoint.
SceneGrads render_with_grads(const SceneModel& scene, const Pose& pose, double t,
                             const Image& loss_adjoint, RenderedImage* out_image = nullptr);

}  // namespace desplat
