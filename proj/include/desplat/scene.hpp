#pragma once

#include <stdexcept>
#include <vector>

#include "desplat/geometry.hpp"
#include "desplat/types.hpp"

namespace desplat {

enum class GaussianKind { Static, Dynamic };

// One splat. Color is a plain RGB triple (degree-0 spherical harmonics only);
// opacity and scale live in unconstrained form and are squashed on use.
struct Gaussian {
  Vec3 mean = Vec3::Zero();
  Vec4 rot_quat = Vec4(1, 0, 0, 0);  // (w, x, y, z)
  Vec3 log_scale = Vec3::Zero();
  double logit_opacity = 0.0;
  Vec3 color = Vec3::Zero();
  GaussianKind kind = GaussianKind::Static;
};

// Trajectory control points for one dynamic Gaussian.
struct ControlPoints {
  std::vector<Vec3> points;
};

struct DynamicGaussian {
  Gaussian gaussian;
  ControlPoints ctrl;
};

struct SceneModel {
  std::vector<Gaussian> static_gaussians;
  std::vector<DynamicGaussian> dynamic_gaussians;
  Intrinsics intrinsics;
  int n_frames = 0;
};

struct MissingControlPoints : std::runtime_error {
  MissingControlPoints() : std::runtime_error("dynamic gaussian without control points") {}
};

// Cubic Hermite position at frame-time t. Time is normalized by N_f - 1,
// stretched over the N_c - 1 segments, and clamped to [0, N_f - 1] before
// evaluation. Tangents are central differences, one-sided at the ends.
Vec3 spline_eval(const ControlPoints& ctrl, double t, int n_frames);

// The spline is linear in its control points; these are the per-point
// scalar weights such that spline_eval = sum_j w[j] * p_j. All dynamic
// Gaussians share them for a given (t, n_ctrl, n_frames).
std::vector<double> spline_weights(int n_ctrl, double t, int n_frames);

// d(spline_eval)/dt, zero outside the clamped time range.
Vec3 spline_derivative(const ControlPoints& ctrl, double t, int n_frames);

// d(spline_weights)/dt, same convention as spline_derivative.
std::vector<double> spline_weight_derivs(int n_ctrl, double t, int n_frames);

// Static Gaussians pass through untouched; dynamic ones get their mean
// replaced by the spline position. ctrl must be present iff g is dynamic.
Gaussian gaussian_at_time(const Gaussian& g, const ControlPoints* ctrl, double t, int n_frames);

// Flat list, statics first then dynamics, each advanced to time t. Index
// order is the canonical parameter order used by the trainer.
std::vector<Gaussian> scene_at_time(const SceneModel& scene, double t);

Mat3 quat_to_rot(const Vec4& q_raw);

// Pulls dL/d(rotation matrix) back to the raw (unnormalized) quaternion,
// including the normalization chain.
Vec4 quat_to_rot_backward(const Vec4& q_raw, const Mat3& d_rot);

// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
Mat3 covariance_3d(const Gaussian& g);

}  // namespace desplat
