#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "desplat/grad_engine.hpp"
#include "desplat/rasterizer.hpp"
#include "desplat/rng.hpp"

using namespace desplat;

namespace {

Intrinsics small_intr() { return Intrinsics{12.0, 12.0, 3.5, 3.5, 8, 8}; }

// Randomized 5-Gaussian scene (3 static, 2 dynamic) in front of an identity
// camera. Depths are well separated and opacities kept moderate so finite
// differencing never crosses a sort swap, the 1/255 weight cutoff, or the
// 1e-4 transmittance stop.
SceneModel random_scene(uint64_t seed) {
  Rng rng(seed);
  SceneModel scene;
  scene.intrinsics = small_intr();
  scene.n_frames = 5;

  auto make = [&](double depth) {
    Gaussian g;
    g.mean = Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), depth);
    Vec4 q(1.0 + rng.normal() * 0.2, rng.normal() * 0.2, rng.normal() * 0.2, rng.normal() * 0.2);
    g.rot_quat = q.normalized();
    g.log_scale = Vec3(rng.uniform(-2.2, -1.6), rng.uniform(-2.2, -1.6), rng.uniform(-2.2, -1.6));
    g.logit_opacity = rng.uniform(-1.0, 1.2);
    g.color = Vec3(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
    return g;
  };

  for (int i = 0; i < 3; ++i) scene.static_gaussians.push_back(make(1.5 + 0.4 * i));
  for (int i = 0; i < 2; ++i) {
    DynamicGaussian dg;
    dg.gaussian = make(2.9 + 0.45 * i);
    dg.gaussian.kind = GaussianKind::Dynamic;
    for (int j = 0; j < 4; ++j)
      dg.ctrl.points.push_back(dg.gaussian.mean +
                               Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                                    rng.uniform(-0.05, 0.05)));
    scene.dynamic_gaussians.push_back(dg);
  }
  return scene;
}

// Flat parameter view of a scene plus camera pose and time, for driving the
// finite-difference oracle through the renderer.
ParamStore pack(const SceneModel& scene, const Pose& pose, double t) {
  ParamStore store;
  size_t n_static = scene.static_gaussians.size();
  size_t n_total = n_static + scene.dynamic_gaussians.size();
  auto flat = [&](size_t i) -> const Gaussian& {
    return i < n_static ? scene.static_gaussians[i]
                        : scene.dynamic_gaussians[i - n_static].gaussian;
  };
  for (size_t i = 0; i < n_total; ++i) {
    std::string p = "g" + std::to_string(i) + "_";
    const Gaussian& g = flat(i);
    store.register_slice(p + "mean", 3, 1);
    store.register_slice(p + "quat", 4, 1);
    store.register_slice(p + "log_scale", 3, 1);
    store.register_slice(p + "logit", 1, 1);
    store.register_slice(p + "color", 3, 1);
    for (int k = 0; k < 3; ++k) store.slice_values(p + "mean")[k] = g.mean(k);
    for (int k = 0; k < 4; ++k) store.slice_values(p + "quat")[k] = g.rot_quat(k);
    for (int k = 0; k < 3; ++k) store.slice_values(p + "log_scale")[k] = g.log_scale(k);
    store.slice_values(p + "logit")[0] = g.logit_opacity;
    for (int k = 0; k < 3; ++k) store.slice_values(p + "color")[k] = g.color(k);
  }
  for (size_t d = 0; d < scene.dynamic_gaussians.size(); ++d) {
    const ControlPoints& ctrl = scene.dynamic_gaussians[d].ctrl;
    std::string name = "d" + std::to_string(d) + "_ctrl";
    store.register_slice(name, ctrl.points.size() * 3, 1);
    double* c = store.slice_values(name);
    for (size_t j = 0; j < ctrl.points.size(); ++j)
      for (int k = 0; k < 3; ++k) c[j * 3 + k] = ctrl.points[j](k);
  }
  store.register_slice("pose_r", 9, 1);
  store.register_slice("pose_t", 3, 1);
  store.register_slice("time", 1, 1);
  for (int i = 0; i < 9; ++i) store.slice_values("pose_r")[i] = pose.rotation(i / 3, i % 3);
  for (int k = 0; k < 3; ++k) store.slice_values("pose_t")[k] = pose.translation(k);
  store.slice_values("time")[0] = t;
  return store;
}

void unpack(const ParamStore& store, SceneModel& scene, Pose& pose, double& t) {
  size_t n_static = scene.static_gaussians.size();
  size_t n_total = n_static + scene.dynamic_gaussians.size();
  auto flat = [&](size_t i) -> Gaussian& {
    return i < n_static ? scene.static_gaussians[i]
                        : scene.dynamic_gaussians[i - n_static].gaussian;
  };
  for (size_t i = 0; i < n_total; ++i) {
    std::string p = "g" + std::to_string(i) + "_";
    Gaussian& g = flat(i);
    const double* mean = store.slice_values(p + "mean");
    for (int k = 0; k < 3; ++k) g.mean(k) = mean[k];
    const double* quat = store.slice_values(p + "quat");
    for (int k = 0; k < 4; ++k) g.rot_quat(k) = quat[k];
    const double* ls = store.slice_values(p + "log_scale");
    for (int k = 0; k < 3; ++k) g.log_scale(k) = ls[k];
    g.logit_opacity = store.slice_values(p + "logit")[0];
    const double* col = store.slice_values(p + "color");
    for (int k = 0; k < 3; ++k) g.color(k) = col[k];
  }
  for (size_t d = 0; d < scene.dynamic_gaussians.size(); ++d) {
    ControlPoints& ctrl = scene.dynamic_gaussians[d].ctrl;
    const double* c = store.slice_values("d" + std::to_string(d) + "_ctrl");
    for (size_t j = 0; j < ctrl.points.size(); ++j)
      for (int k = 0; k < 3; ++k) ctrl.points[j](k) = c[j * 3 + k];
  }
  const double* pr = store.slice_values("pose_r");
  for (int i = 0; i < 9; ++i) pose.rotation(i / 3, i % 3) = pr[i];
  const double* pt = store.slice_values("pose_t");
  for (int k = 0; k < 3; ++k) pose.translation(k) = pt[k];
  t = store.slice_values("time")[0];
}

void scatter_grads(const SceneGrads& grads, const SceneModel& scene, ParamStore& store) {
  size_t n_static = scene.static_gaussians.size();
  size_t n_total = n_static + scene.dynamic_gaussians.size();
  for (size_t i = 0; i < n_total; ++i) {
    std::string p = "g" + std::to_string(i) + "_";
    // Dynamic means are produced by the spline, so the stored mean field is
    // inert; its gradient reaches the store through the ctrl slices instead.
    bool dyn = i >= n_static;
    for (int k = 0; k < 3; ++k) store.slice_grads(p + "mean")[k] = dyn ? 0.0 : grads.d_mean[i](k);
    for (int k = 0; k < 4; ++k) store.slice_grads(p + "quat")[k] = grads.d_rot_quat[i](k);
    for (int k = 0; k < 3; ++k) store.slice_grads(p + "log_scale")[k] = grads.d_log_scale[i](k);
    store.slice_grads(p + "logit")[0] = grads.d_logit_opacity[i];
    for (int k = 0; k < 3; ++k) store.slice_grads(p + "color")[k] = grads.d_color[i](k);
  }
  for (size_t d = 0; d < grads.d_ctrl.size(); ++d) {
    double* c = store.slice_grads("d" + std::to_string(d) + "_ctrl");
    for (size_t j = 0; j < grads.d_ctrl[d].size(); ++j)
      for (int k = 0; k < 3; ++k) c[j * 3 + k] = grads.d_ctrl[d][j](k);
  }
  for (int i = 0; i < 9; ++i) store.slice_grads("pose_r")[i] = grads.d_rotation(i / 3, i % 3);
  for (int k = 0; k < 3; ++k) store.slice_grads("pose_t")[k] = grads.d_translation(k);
  store.slice_grads("time")[0] = grads.d_time;
}

}  // namespace

TEST_CASE("project_gaussian on-axis isotropic example") {
  Intrinsics intr{50, 50, 16, 16, 32, 32};
  Gaussian g;
  g.mean = Vec3(0, 0, 1);
  double s = 0.02;
  g.log_scale = Vec3::Constant(std::log(s));
  g.logit_opacity = 0.5;
  auto splat = project_gaussian(g, Pose{}, intr);
  REQUIRE(splat.has_value());
  CHECK(splat->pixel_mean.x() == doctest::Approx(16.0));
  CHECK(splat->pixel_mean.y() == doctest::Approx(16.0));
  CHECK(splat->depth == doctest::Approx(1.0));
  double expected = 50.0 * 50.0 * s * s + 0.3;
  CHECK(splat->cov2d(0, 0) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(splat->cov2d(1, 1) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(std::abs(splat->cov2d(0, 1)) < 1e-12);
}

TEST_CASE("project_gaussian culls behind the camera and off image") {
  Intrinsics intr{50, 50, 16, 16, 32, 32};
  Gaussian g;
  g.mean = Vec3(0, 0, -1);
  CHECK(!project_gaussian(g, Pose{}, intr).has_value());
  g.mean = Vec3(100, 0, 1);  // footprint lands far off the right edge
  g.log_scale = Vec3::Constant(std::log(0.05));
  CHECK(!project_gaussian(g, Pose{}, intr).has_value());
}

TEST_CASE("project_gaussian shifts opposite a camera translation") {
  Intrinsics intr{50, 50, 16, 16, 32, 32};
  Gaussian g;
  g.mean = Vec3(0, 0, 2);
  g.log_scale = Vec3::Constant(std::log(0.05));
  auto base = project_gaussian(g, Pose{}, intr);
  Pose shifted;
  double delta = 0.1;
  shifted.translation = Vec3(delta, 0, 0);
  auto moved = project_gaussian(g, shifted, intr);
  REQUIRE(base.has_value());
  REQUIRE(moved.has_value());
  CHECK(moved->pixel_mean.x() - base->pixel_mean.x() ==
        doctest::Approx(-50.0 * delta / 2.0).epsilon(1e-9));
  CHECK(moved->pixel_mean.y() == doctest::Approx(base->pixel_mean.y()));
}

TEST_CASE("render of an empty scene is black with zero alpha") {
  SceneModel scene;
  scene.intrinsics = small_intr();
  scene.n_frames = 3;
  RenderedImage img = render(scene, Pose{}, 0.0);
  for (double v : img.color.data) CHECK(v == 0.0);
  for (double v : img.alpha.data) CHECK(v == 0.0);
  for (double v : img.depth.data) CHECK(v == 0.0);
}

TEST_CASE("render of one near-opaque Gaussian recovers its color and depth") {
  SceneModel scene;
  scene.intrinsics = Intrinsics{40, 40, 8, 8, 17, 17};
  scene.n_frames = 3;
  Gaussian g;
  g.mean = Vec3(0, 0, 2);
  g.log_scale = Vec3::Constant(std::log(0.15));
  g.logit_opacity = 20.0;  // opacity -> 1
  g.color = Vec3(0.8, 0.3, 0.6);
  scene.static_gaussians.push_back(g);

  RenderedImage img = render(scene, Pose{}, 0.0);
  CHECK(std::abs(img.color.at(8, 8, 0) - 0.8) < 1e-3);
  CHECK(std::abs(img.color.at(8, 8, 1) - 0.3) < 1e-3);
  CHECK(std::abs(img.color.at(8, 8, 2) - 0.6) < 1e-3);
  CHECK(std::abs(img.depth.at(8, 8, 0) - 2.0) < 1e-3 * 2.0);
}

TEST_CASE("two overlapping Gaussians blend front to back") {
  SceneModel scene;
  scene.intrinsics = Intrinsics{40, 40, 8, 8, 17, 17};
  scene.n_frames = 3;
  Gaussian near, far;
  near.mean = Vec3(0, 0, 1.5);
  far.mean = Vec3(0, 0, 3.0);
  near.log_scale = far.log_scale = Vec3::Constant(std::log(0.1));
  near.logit_opacity = 0.4;
  far.logit_opacity = -0.3;
  near.color = Vec3(0.9, 0.2, 0.1);
  far.color = Vec3(0.1, 0.5, 0.8);
  scene.static_gaussians = {near, far};

  RenderedImage img = render(scene, Pose{}, 0.0);

  // Closed-form two-term blend at the shared center pixel.
  auto alpha_at_center = [&](const Gaussian& g) {
    auto s = project_gaussian(g, Pose{}, scene.intrinsics);
    REQUIRE(s.has_value());
    Vec2 d = Vec2(8, 8) - s->pixel_mean;
    return s->opacity * std::exp(-0.5 * d.dot(s->cov2d_inv * d));
  };
  double a1 = alpha_at_center(near), a2 = alpha_at_center(far);
  Vec3 expected = a1 * near.color + a2 * (1 - a1) * far.color;
  for (int c = 0; c < 3; ++c) CHECK(std::abs(img.color.at(8, 8, c) - expected(c)) < 1e-6);
}

TEST_CASE("gaussian order in the input list does not matter") {
  SceneModel scene = random_scene(51);
  RenderedImage a = render(scene, Pose{}, 1.0);
  std::reverse(scene.static_gaussians.begin(), scene.static_gaussians.end());
  RenderedImage b = render(scene, Pose{}, 1.0);
  for (size_t i = 0; i < a.color.size(); ++i) CHECK(a.color.data[i] == b.color.data[i]);
}

TEST_CASE("blending respects transmittance and energy bounds") {
  SceneModel scene = random_scene(52);
  for (int i = 0; i < 6; ++i) {
    Gaussian extra = scene.static_gaussians[static_cast<size_t>(i % 3)];
    extra.mean += Vec3(0.02 * i, -0.015 * i, 0.1 * i);
    extra.logit_opacity = 2.0;
    scene.static_gaussians.push_back(extra);
  }
  RenderedImage img = render(scene, Pose{}, 0.5);
  for (double v : img.alpha.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-12);
  }
  for (double v : img.color.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-12);
  }
}

TEST_CASE("zero adjoint produces zero gradients") {
  SceneModel scene = random_scene(53);
  Image adj(8, 8, 3, 0.0);
  SceneGrads grads = render_with_grads(scene, Pose{}, 1.2, adj);
  for (const Vec3& v : grads.d_mean) CHECK(v.norm() == 0.0);
  for (const Vec3& v : grads.d_color) CHECK(v.norm() == 0.0);
  CHECK(grads.d_rotation.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.d_time == 0.0);
}

TEST_CASE("color gradient of a single Gaussian equals its blend weight") {
  SceneModel scene;
  scene.intrinsics = small_intr();
  scene.n_frames = 3;
  Gaussian g;
  g.mean = Vec3(0, 0, 2);
  g.log_scale = Vec3::Constant(std::log(0.12));
  g.logit_opacity = 0.3;
  g.color = Vec3(0.5, 0.5, 0.5);
  scene.static_gaussians.push_back(g);

  RenderCache cache;
  RenderedImage img = render(scene, Pose{}, 0.0, &cache);
  Image adj(8, 8, 3, 0.0);
  adj.at(4, 4, 0) = 1.0;
  RenderAdjoint ra;
  ra.d_color = &adj;
  SceneGrads grads = render_backward(scene, Pose{}, 0.0, cache, ra);
  // Single splat: the blend weight at (4,4) is exactly the rendered alpha.
  CHECK(grads.d_color[0].x() == doctest::Approx(img.alpha.at(4, 4, 0)).epsilon(1e-12));
  CHECK(grads.d_color[0].y() == 0.0);
}

TEST_CASE("render_backward matches central differences for every parameter class") {
  SceneModel scene = random_scene(54);
  Pose pose;  // identity, gradients still flow through R entries
  double t = 1.3;

  Rng rng(55);
  Image adj_color(8, 8, 3);
  Image adj_depth(8, 8, 1);
  for (double& v : adj_color.data) v = rng.normal();
  for (double& v : adj_depth.data) v = rng.normal() * 0.1;

  ParamStore store = pack(scene, pose, t);

  SceneModel work = scene;
  auto eval = [&]() {
    Pose p;
    double tt;
    unpack(store, work, p, tt);
    RenderedImage img = render(work, p, tt);
    double l = 0.0;
    for (size_t i = 0; i < img.color.size(); ++i) l += adj_color.data[i] * img.color.data[i];
    for (size_t i = 0; i < img.depth.size(); ++i) l += adj_depth.data[i] * img.depth.data[i];
    return l;
  };

  // Guard the finite-difference probe: no blend weight may sit within 1e-5
  // of the 1/255 cutoff, otherwise the probe itself is ill-posed.
  {
    RenderCache cache;
    render(scene, pose, t, &cache);
    for (const RenderCache::Entry& e : cache.entries)
      CHECK(std::abs(e.alpha - 1.0 / 255.0) > 1e-5);
  }

  RenderCache cache;
  render(scene, pose, t, &cache);
  RenderAdjoint ra;
  ra.d_color = &adj_color;
  ra.d_depth = &adj_depth;
  SceneGrads grads = render_backward(scene, pose, t, cache, ra);
  scatter_grads(grads, scene, store);

  FiniteDiffReport rep = finite_diff_check(store, eval, 1e-5);
  INFO("worst slice index ", rep.worst_index, " analytic ", rep.worst_analytic, " numeric ",
       rep.worst_numeric);
  CHECK(rep.max_rel_err < 1e-3);
}
