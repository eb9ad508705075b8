#include "desplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>

namespace desplat {

namespace {

constexpr double kMinWeight = 1.0 / 255.0;
constexpr double kMinTransmittance = 1e-4;
constexpr double kCovReg = 0.3;
// exp(-r^2/2) drops below 1/255 at r = 3.329 sigma; a hair beyond that the
// bounding box can never clip a visible contribution.
constexpr double kRadiusSigma = 3.34;

using Mat23 = Eigen::Matrix<double, 2, 3>;

Mat23 proj_jacobian(const Intrinsics& intr, const Vec3& p) {
  double iz = 1.0 / p.z();
  Mat23 j;
  j << intr.fx * iz, 0.0, -intr.fx * p.x() * iz * iz,
       0.0, intr.fy * iz, -intr.fy * p.y() * iz * iz;
  return j;
}

}  // namespace

void SceneGrads::resize(size_t n_static, const std::vector<DynamicGaussian>& dyn) {
  size_t n = n_static + dyn.size();
  d_mean.assign(n, Vec3::Zero());
  d_rot_quat.assign(n, Vec4::Zero());
  d_log_scale.assign(n, Vec3::Zero());
  d_logit_opacity.assign(n, 0.0);
  d_color.assign(n, Vec3::Zero());
  d_ctrl.resize(dyn.size());
  for (size_t i = 0; i < dyn.size(); ++i)
    d_ctrl[i].assign(dyn[i].ctrl.points.size(), Vec3::Zero());
  d_rotation.setZero();
  d_translation.setZero();
  d_time = 0.0;
}

void SceneGrads::add(const SceneGrads& other, double scale) {
  for (size_t i = 0; i < d_mean.size(); ++i) {
    d_mean[i] += scale * other.d_mean[i];
    d_rot_quat[i] += scale * other.d_rot_quat[i];
    d_log_scale[i] += scale * other.d_log_scale[i];
    d_logit_opacity[i] += scale * other.d_logit_opacity[i];
    d_color[i] += scale * other.d_color[i];
  }
  for (size_t i = 0; i < d_ctrl.size(); ++i)
    for (size_t j = 0; j < d_ctrl[i].size(); ++j) d_ctrl[i][j] += scale * other.d_ctrl[i][j];
  d_rotation += scale * other.d_rotation;
  d_translation += scale * other.d_translation;
  d_time += scale * other.d_time;
}

std::optional<Splat2D> project_gaussian(const Gaussian& g, const Pose& pose,
                                        const Intrinsics& intr) {
  Vec3 p = world_to_camera(pose, g.mean);
  if (p.z() <= 1e-4) return std::nullopt;

  Splat2D s;
  s.p_cam = p;
  s.depth = p.z();
  double iz = 1.0 / p.z();
  s.pixel_mean = Vec2(intr.fx * p.x() * iz + intr.cx, intr.fy * p.y() * iz + intr.cy);

  Mat3 w = pose.rotation.transpose();
  Mat3 vcam = w * covariance_3d(g) * w.transpose();
  Mat23 j = proj_jacobian(intr, p);
  Mat2 cov = j * vcam * j.transpose();
  cov(0, 0) += kCovReg;
  cov(1, 1) += kCovReg;
  s.cov2d = cov;

  double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  s.cov2d_inv << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
  s.cov2d_inv /= det;

  s.color = g.color;
  s.opacity = sigmoid(g.logit_opacity);
  s.q_cut = 2.0 * std::log(255.0 * s.opacity) + 1e-9;

  double mid = 0.5 * (cov(0, 0) + cov(1, 1));
  double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
  s.radius = kRadiusSigma * std::sqrt(lmax);

  s.x0 = std::max(0, static_cast<int>(std::ceil(s.pixel_mean.x() - s.radius)));
  s.x1 = std::min(intr.width - 1, static_cast<int>(std::floor(s.pixel_mean.x() + s.radius)));
  s.y0 = std::max(0, static_cast<int>(std::ceil(s.pixel_mean.y() - s.radius)));
  s.y1 = std::min(intr.height - 1, static_cast<int>(std::floor(s.pixel_mean.y() + s.radius)));
  if (s.x0 > s.x1 || s.y0 > s.y1) return std::nullopt;
  return s;
}

RenderedImage render(const SceneModel& scene, const Pose& pose, double t, RenderCache* cache) {
  const Intrinsics& intr = scene.intrinsics;
  const int w = intr.width, h = intr.height;

  std::vector<Gaussian> gs = scene_at_time(scene, t);
  std::vector<Splat2D> splats;
  splats.reserve(gs.size());
  for (size_t i = 0; i < gs.size(); ++i) {
    std::optional<Splat2D> s = project_gaussian(gs[i], pose, intr);
    if (!s) continue;
    s->source_index = static_cast<int>(i);
    splats.push_back(*s);
  }
  std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.source_index < b.source_index;
  });

  // Depth-ordered splat ids touching each row; keeps the per-pixel loop
  // from scanning splats that land nowhere near it.
  std::vector<std::vector<uint32_t>> rows(static_cast<size_t>(h));
  for (uint32_t i = 0; i < splats.size(); ++i)
    for (int y = splats[i].y0; y <= splats[i].y1; ++y) rows[static_cast<size_t>(y)].push_back(i);

  RenderedImage out;
  out.color = Image(w, h, 3);
  out.depth = Image(w, h, 1);
  out.alpha = Image(w, h, 1);
  if (cache) {
    cache->offsets.assign(static_cast<size_t>(w) * h + 1, 0);
    cache->entries.clear();
  }

  for (int y = 0; y < h; ++y) {
    const std::vector<uint32_t>& row = rows[static_cast<size_t>(y)];
    for (int x = 0; x < w; ++x) {
      double trans = 1.0;
      double cr = 0.0, cg = 0.0, cb = 0.0, depth = 0.0, acc = 0.0;
      for (uint32_t id : row) {
        const Splat2D& s = splats[id];
        if (x < s.x0 || x > s.x1) continue;
        double dx = x - s.pixel_mean.x();
        double dy = y - s.pixel_mean.y();
        double q = s.cov2d_inv(0, 0) * dx * dx + 2.0 * s.cov2d_inv(0, 1) * dx * dy +
                   s.cov2d_inv(1, 1) * dy * dy;
        if (q > s.q_cut) continue;
        double alpha = s.opacity * std::exp(-0.5 * q);
        if (alpha < kMinWeight) continue;
        double weight = trans * alpha;
        cr += weight * s.color.x();
        cg += weight * s.color.y();
        cb += weight * s.color.z();
        depth += weight * s.depth;
        acc += weight;
        if (cache) cache->entries.push_back({id, alpha});
        trans *= 1.0 - alpha;
        if (trans < kMinTransmittance) break;
      }
      out.color.at(x, y, 0) = cr;
      out.color.at(x, y, 1) = cg;
      out.color.at(x, y, 2) = cb;
      out.depth.at(x, y, 0) = depth;
      out.alpha.at(x, y, 0) = acc;
      if (cache)
        cache->offsets[static_cast<size_t>(y) * w + x + 1] =
            static_cast<uint32_t>(cache->entries.size());
    }
  }
  if (cache) cache->splats = std::move(splats);
  return out;
}

SceneGrads render_backward(const SceneModel& scene, const Pose& pose, double t,
                           const RenderCache& cache, const RenderAdjoint& adj) {
  const Intrinsics& intr = scene.intrinsics;
  const int w = intr.width, h = intr.height;
  const size_t n_splats = cache.splats.size();

  // Screen-space accumulators per splat, filled by the pixel sweep and
  // chained back to 3D attributes afterwards.
  std::vector<Vec2> d_pix(n_splats, Vec2::Zero());
  std::vector<Mat2> d_minv(n_splats, Mat2::Zero());
  std::vector<double> d_opacity(n_splats, 0.0);
  std::vector<Vec3> d_color(n_splats, Vec3::Zero());
  std::vector<double> d_depth(n_splats, 0.0);

  std::vector<double> trans_before;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      size_t pix = static_cast<size_t>(y) * w + x;
      uint32_t lo = cache.offsets[pix], hi = cache.offsets[pix + 1];
      if (lo == hi) continue;

      Vec3 g_c(adj.d_color->at(x, y, 0), adj.d_color->at(x, y, 1), adj.d_color->at(x, y, 2));
      double g_d = adj.d_depth ? adj.d_depth->at(x, y, 0) : 0.0;
      if (g_c.isZero(0.0) && g_d == 0.0) continue;

      size_t n = hi - lo;
      trans_before.resize(n);
      double trans = 1.0;
      for (size_t i = 0; i < n; ++i) {
        trans_before[i] = trans;
        trans *= 1.0 - cache.entries[lo + i].alpha;
      }

      // Blending backward, back to front. suffix keeps the sum of
      // s_j * w_j over everything behind the current splat, which is
      // exactly what the transmittance product couples alpha_i to.
      double suffix = 0.0;
      for (size_t i = n; i-- > 0;) {
        const RenderCache::Entry& e = cache.entries[lo + i];
        const Splat2D& s = cache.splats[e.splat];
        double s_i = g_c.dot(s.color) + g_d * s.depth;
        double weight = trans_before[i] * e.alpha;
        d_color[e.splat] += weight * g_c;
        d_depth[e.splat] += weight * g_d;
        double d_alpha = trans_before[i] * s_i - suffix / std::max(1.0 - e.alpha, 1e-12);
        suffix += s_i * weight;

        double kernel = e.alpha / s.opacity;
        d_opacity[e.splat] += d_alpha * kernel;
        double d_q = -0.5 * d_alpha * e.alpha;
        Vec2 d(x - s.pixel_mean.x(), y - s.pixel_mean.y());
        d_pix[e.splat] += -2.0 * d_q * (s.cov2d_inv * d);
        d_minv[e.splat] += d_q * d * d.transpose();
      }
    }
  }

  std::vector<Gaussian> gs = scene_at_time(scene, t);
  SceneGrads out;
  out.resize(scene.static_gaussians.size(), scene.dynamic_gaussians);

  for (size_t i = 0; i < n_splats; ++i) {
    const Splat2D& s = cache.splats[i];
    const Gaussian& g = gs[static_cast<size_t>(s.source_index)];
    size_t src = static_cast<size_t>(s.source_index);

    // cov2d_inv -> cov2d (the +0.3 shift is additive, no extra term).
    Mat2 g_cov = -s.cov2d_inv * d_minv[i] * s.cov2d_inv;

    Mat23 j = proj_jacobian(intr, s.p_cam);
    Mat3 wmat = pose.rotation.transpose();
    Mat3 sigma = covariance_3d(g);
    Mat3 vcam = wmat * sigma * wmat.transpose();

    Mat3 g_v = j.transpose() * g_cov * j;
    Mat23 g_j = (g_cov + g_cov.transpose()) * j * vcam;

    Vec3 d_pcam = j.transpose() * d_pix[i];
    d_pcam.z() += d_depth[i];
    double iz = 1.0 / s.p_cam.z();
    double iz2 = iz * iz;
    d_pcam.x() += g_j(0, 2) * (-intr.fx * iz2);
    d_pcam.y() += g_j(1, 2) * (-intr.fy * iz2);
    d_pcam.z() += g_j(0, 0) * (-intr.fx * iz2) + g_j(1, 1) * (-intr.fy * iz2) +
                  g_j(0, 2) * (2.0 * intr.fx * s.p_cam.x() * iz2 * iz) +
                  g_j(1, 2) * (2.0 * intr.fy * s.p_cam.y() * iz2 * iz);

    Mat3 g_sigma = wmat.transpose() * g_v * wmat;
    Mat3 g_w = (g_v + g_v.transpose()) * wmat * sigma;

    // sigma = R diag(exp(2 log_scale)) R^T.
    Mat3 rq = quat_to_rot(g.rot_quat);
    Vec3 s2 = (2.0 * g.log_scale).array().exp();
    Mat3 g_rq = (g_sigma + g_sigma.transpose()) * rq * s2.asDiagonal();
    Vec3 diag = (rq.transpose() * g_sigma * rq).diagonal();
    out.d_log_scale[src] += 2.0 * s2.cwiseProduct(diag);
    out.d_rot_quat[src] += quat_to_rot_backward(g.rot_quat, g_rq);

    out.d_mean[src] += pose.rotation * d_pcam;
    double opa = s.opacity;
    out.d_logit_opacity[src] += d_opacity[i] * opa * (1.0 - opa);
    out.d_color[src] += d_color[i];

    // Camera pose: p_cam = R^T (x - t) contributes through both the mean
    // transform and W = R^T inside the covariance chain.
    out.d_translation += -(pose.rotation * d_pcam);
    out.d_rotation += (g.mean - pose.translation) * d_pcam.transpose() + g_w.transpose();
  }

  size_t n_static = scene.static_gaussians.size();
  for (size_t di = 0; di < scene.dynamic_gaussians.size(); ++di) {
    const ControlPoints& ctrl = scene.dynamic_gaussians[di].ctrl;
    const Vec3& dm = out.d_mean[n_static + di];
    std::vector<double> ws =
        spline_weights(static_cast<int>(ctrl.points.size()), t, scene.n_frames);
    for (size_t j = 0; j < ws.size(); ++j) out.d_ctrl[di][j] = ws[j] * dm;
    out.d_time += dm.dot(spline_derivative(ctrl, t, scene.n_frames));
  }
  return out;
}

SceneGrads render_with_grads(const SceneModel& scene, const Pose& pose, double t,
                             const Image& loss_adjoint, RenderedImage* out_image) {
  RenderCache cache;
  RenderedImage img = render(scene, pose, t, &cache);
  RenderAdjoint adj;
  adj.d_color = &loss_adjoint;
  SceneGrads grads = render_backward(scene, pose, t, cache, adj);
  if (out_image) *out_image = std::move(img);
  return grads;
}

}  // namespace desplat
