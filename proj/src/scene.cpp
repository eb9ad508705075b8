#include "desplat/scene.hpp"

#include <algorithm>
#include <cmath>

namespace desplat {

namespace {

struct SegmentPos {
  int seg = 0;      // lower control-point index of the active segment
  double t_r = 0.0; // position inside it, [0, 1]
  double dt = 0.0;  // d t_r / d t, zero when t was clamped
};

SegmentPos locate(int n_ctrl, double t, int n_frames) {
  double t_max = static_cast<double>(n_frames - 1);
  bool clamped = t < 0.0 || t > t_max;
  double tc = std::clamp(t, 0.0, t_max);
  double t_s = tc / t_max * static_cast<double>(n_ctrl - 1);
  int seg = std::min(static_cast<int>(std::floor(t_s)), n_ctrl - 2);
  SegmentPos out;
  out.seg = seg;
  out.t_r = t_s - seg;
  out.dt = clamped ? 0.0 : static_cast<double>(n_ctrl - 1) / t_max;
  return out;
}

// Scatters the tangent m_j = (p_{j+1} - p_{j-1}) / 2 (one-sided at the ends)
// into per-control-point weights.
void add_tangent_weight(std::vector<double>& w, int j, double coeff) {
  int n = static_cast<int>(w.size());
  if (j == 0) {
    w[1] += coeff;
    w[0] -= coeff;
  } else if (j == n - 1) {
    w[n - 1] += coeff;
    w[n - 2] -= coeff;
  } else {
    w[static_cast<size_t>(j) + 1] += 0.5 * coeff;
    w[static_cast<size_t>(j) - 1] -= 0.5 * coeff;
  }
}

std::vector<double> basis_weights(int n_ctrl, int seg, double h00, double h10, double h01,
                                  double h11) {
  std::vector<double> w(static_cast<size_t>(n_ctrl), 0.0);
  w[static_cast<size_t>(seg)] += h00;
  w[static_cast<size_t>(seg) + 1] += h01;
  add_tangent_weight(w, seg, h10);
  add_tangent_weight(w, seg + 1, h11);
  return w;
}

}  // namespace

std::vector<double> spline_weights(int n_ctrl, double t, int n_frames) {
  SegmentPos p = locate(n_ctrl, t, n_frames);
  double u = p.t_r, u2 = u * u, u3 = u2 * u;
  return basis_weights(n_ctrl, p.seg, 2 * u3 - 3 * u2 + 1, u3 - 2 * u2 + u, -2 * u3 + 3 * u2,
                       u3 - u2);
}

std::vector<double> spline_weight_derivs(int n_ctrl, double t, int n_frames) {
  SegmentPos p = locate(n_ctrl, t, n_frames);
  double u = p.t_r, u2 = u * u;
  std::vector<double> w = basis_weights(n_ctrl, p.seg, 6 * u2 - 6 * u, 3 * u2 - 4 * u + 1,
                                        -6 * u2 + 6 * u, 3 * u2 - 2 * u);
  for (double& x : w) x *= p.dt;
  return w;
}

Vec3 spline_eval(const ControlPoints& ctrl, double t, int n_frames) {
  std::vector<double> w = spline_weights(static_cast<int>(ctrl.points.size()), t, n_frames);
  Vec3 out = Vec3::Zero();
  for (size_t j = 0; j < w.size(); ++j) out += w[j] * ctrl.points[j];
  return out;
}

Vec3 spline_derivative(const ControlPoints& ctrl, double t, int n_frames) {
  std::vector<double> w = spline_weight_derivs(static_cast<int>(ctrl.points.size()), t, n_frames);
  Vec3 out = Vec3::Zero();
  for (size_t j = 0; j < w.size(); ++j) out += w[j] * ctrl.points[j];
  return out;
}

Gaussian gaussian_at_time(const Gaussian& g, const ControlPoints* ctrl, double t, int n_frames) {
  if (g.kind == GaussianKind::Static) return g;
  if (!ctrl) throw MissingControlPoints();
  Gaussian out = g;
  out.mean = spline_eval(*ctrl, t, n_frames);
  return out;
}

std::vector<Gaussian> scene_at_time(const SceneModel& scene, double t) {
  std::vector<Gaussian> out;
  out.reserve(scene.static_gaussians.size() + scene.dynamic_gaussians.size());
  out.insert(out.end(), scene.static_gaussians.begin(), scene.static_gaussians.end());
  for (const DynamicGaussian& dg : scene.dynamic_gaussians)
    out.push_back(gaussian_at_time(dg.gaussian, &dg.ctrl, t, scene.n_frames));
  return out;
}

Mat3 quat_to_rot(const Vec4& q_raw) {
  Vec4 q = q_raw.normalized();
  double w = q(0), x = q(1), y = q(2), z = q(3);
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Vec4 quat_to_rot_backward(const Vec4& q_raw, const Mat3& d_rot) {
  Vec4 q = q_raw.normalized();
  double w = q(0), x = q(1), y = q(2), z = q(3);

  Mat3 dw, dx, dy, dz;
  dw << 0, -z, y, z, 0, -x, -y, x, 0;
  dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;

  Vec4 d_q;
  d_q << 2 * d_rot.cwiseProduct(dw).sum(), 2 * d_rot.cwiseProduct(dx).sum(),
      2 * d_rot.cwiseProduct(dy).sum(), 2 * d_rot.cwiseProduct(dz).sum();

  // Normalization chain: q = q_raw / ||q_raw||.
  double n = q_raw.norm();
  return (d_q - q * q.dot(d_q)) / n;
}

Mat3 covariance_3d(const Gaussian& g) {
  Mat3 r = quat_to_rot(g.rot_quat);
  Vec3 s2 = (2.0 * g.log_scale).array().exp();
  return r * s2.asDiagonal() * r.transpose();
}

}  // namespace desplat
