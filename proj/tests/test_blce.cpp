#include <algorithm>
#include <cmath>
#include <vector>

#include "desplat/blce.hpp"
#include "desplat/grad_engine.hpp"
#include "desplat/image.hpp"
#include "desplat/rng.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace desplat;

namespace {

// Offset of layer `layer` inside the packed parameter block.
size_t layer_offset(const MlpSpec& spec, int layer) {
  std::vector<int> w = spec.widths();
  size_t off = 0;
  for (int l = 0; l < layer; ++l)
    off += static_cast<size_t>(w[l + 1]) * w[l] + static_cast<size_t>(w[l + 1]);
  return off;
}

void set_weight(const MlpSpec& spec, double* params, int layer, int row, int col, double v) {
  std::vector<int> w = spec.widths();
  params[layer_offset(spec, layer) + static_cast<size_t>(row) * w[layer] + col] = v;
}

void set_bias(const MlpSpec& spec, double* params, int layer, int row, double v) {
  std::vector<int> w = spec.widths();
  params[layer_offset(spec, layer) + static_cast<size_t>(w[layer + 1]) * w[layer] + row] = v;
}

// Wires the field MLP into the exact linear map z -> A z, ignoring u (and
// phi if present). ReLU is bypassed with the split x = relu(x) - relu(-x):
// the first hidden layer emits (pos, neg), the second passes both through
// unchanged (they are nonnegative), the output layer recombines with A.
void make_linear_field(const BlceSpec& spec, double* params, const std::vector<double>& a_mat) {
  MlpSpec fs = spec.field();
  const int zd = spec.latent_dim;
  std::fill(params, params + fs.param_count(), 0.0);
  for (int i = 0; i < zd; ++i) {
    set_weight(fs, params, 0, i, i, 1.0);
    set_weight(fs, params, 0, zd + i, i, -1.0);
  }
  for (int i = 0; i < 2 * zd; ++i) set_weight(fs, params, 1, i, i, 1.0);
  for (int r = 0; r < zd; ++r)
    for (int c = 0; c < zd; ++c) {
      double a = a_mat[static_cast<size_t>(r) * zd + c];
      set_weight(fs, params, 2, r, c, a);
      set_weight(fs, params, 2, r, zd + c, -a);
    }
}

// exp(A u) z0 by plain power series; converges fast for the small matrices
// used here and is entirely independent of the integrator.
std::vector<double> expm_apply(const std::vector<double>& a_mat, int n, double u,
                               const std::vector<double>& z0) {
  std::vector<double> sum = z0;
  std::vector<double> term = z0;
  for (int j = 1; j < 80; ++j) {
    std::vector<double> next(static_cast<size_t>(n), 0.0);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        next[static_cast<size_t>(r)] += a_mat[static_cast<size_t>(r) * n + c] * term[static_cast<size_t>(c)];
    double nrm = 0.0;
    for (int r = 0; r < n; ++r) {
      term[static_cast<size_t>(r)] = next[static_cast<size_t>(r)] * u / j;
      sum[static_cast<size_t>(r)] += term[static_cast<size_t>(r)];
      nrm = std::max(nrm, std::abs(term[static_cast<size_t>(r)]));
    }
    if (nrm < 1e-18) break;
  }
  return sum;
}

BlceSpec small_spec() {
  BlceSpec spec;
  spec.latent_dim = 4;
  spec.feature_dim = 2;
  spec.pe_bands = 2;
  spec.n_latent = 9;
  spec.substeps = 4;
  spec.inject_blur_feature = false;
  return spec;
}

Pose test_pose() {
  Pose p;
  p.rotation = screw_exp(ScrewAxis{Vec3(0.3, -0.2, 0.5), Vec3::Zero()}).rotation;
  p.translation = Vec3(0.4, -1.1, 2.0);
  return p;
}

}  // namespace

TEST_CASE("blur_score of an impulse image is the crop fraction") {
  Image img(64, 64, 1);
  img.at(5, 9) = 1.0;
  BlurScore s = blur_score(img, 20, 3);
  // Impulse magnitudes are flat across the spectrum, so the score is just
  // the crop area over the image area: 400/4096.
  CHECK(s.beta == doctest::Approx(400.0 / 4096.0).epsilon(1e-6));
  CHECK(s.frame_index == 3);
}

TEST_CASE("blur_score of a constant image is one") {
  Image img(32, 32, 3, 0.7);
  CHECK(blur_score(img, 20).beta == doctest::Approx(1.0).epsilon(1e-12));
  Image zeros(32, 32, 3);
  CHECK(blur_score(zeros, 20).beta == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("blur_score increases with blur radius") {
  Rng rng(77);
  Image img(48, 48, 3);
  for (double& v : img.data) v = rng.uniform();
  double prev = -1.0;
  for (double sigma : {0.0, 1.0, 2.0, 4.0}) {
    double beta = blur_score(gaussian_blur(img, sigma), 20).beta;
    CHECK(beta > prev);
    prev = beta;
  }
  CHECK(prev <= 1.0 + 1e-12);
}

TEST_CASE("blur_score rejects images smaller than the crop") {
  Image img(16, 32, 1, 0.5);
  CHECK_THROWS_AS(blur_score(img, 20), ImageSmallerThanCrop);
}

TEST_CASE("blur_feature is deterministic and zero for a zero net") {
  BlceSpec spec = small_spec();
  ParamStore store;
  spec.register_params(store, 1e-3);

  BlurScore score{0.37, 0};
  BlurFeature f0 = blur_feature(spec, store, score);
  for (double v : f0.phi) CHECK(v == 0.0);

  Rng rng(11);
  spec.init_params(store, rng);
  BlurFeature f1 = blur_feature(spec, store, score);
  BlurFeature f2 = blur_feature(spec, store, score);
  REQUIRE(f1.phi.size() == static_cast<size_t>(spec.feature_dim));
  for (size_t i = 0; i < f1.phi.size(); ++i) CHECK(f1.phi[i] == f2.phi[i]);
}

TEST_CASE("integrate_latents with a zero field is constant") {
  BlceSpec spec = small_spec();
  ParamStore store;
  spec.register_params(store, 1e-3);
  Rng rng(4);
  spec.init_params(store, rng);
  std::fill(store.slice_values(BlceSpec::kField),
            store.slice_values(BlceSpec::kField) + spec.field().param_count(), 0.0);

  BlurFeature feat;
  feat.phi.assign(static_cast<size_t>(spec.feature_dim), 0.0);
  auto states = integrate_latents(spec, store, test_pose(), feat);
  REQUIRE(states.size() == static_cast<size_t>(spec.n_latent));
  for (size_t k = 1; k < states.size(); ++k) {
    CHECK(states[k].u == doctest::Approx(static_cast<double>(k) / (spec.n_latent - 1)).epsilon(1e-15));
    for (size_t i = 0; i < states[k].z.size(); ++i) CHECK(states[k].z[i] == states[0].z[i]);
  }
}

TEST_CASE("integrate_latents is exact for a constant field") {
  BlceSpec spec = small_spec();
  ParamStore store;
  spec.register_params(store, 1e-3);
  Rng rng(4);
  spec.init_params(store, rng);

  // Zero weights everywhere, constant c in the output bias: dz/du = c.
  MlpSpec fs = spec.field();
  double* fp = store.slice_values(BlceSpec::kField);
  std::fill(fp, fp + fs.param_count(), 0.0);
  std::vector<double> c = {0.7, -1.3, 0.25, 2.0};
  for (int i = 0; i < spec.latent_dim; ++i) set_bias(fs, fp, 2, i, c[static_cast<size_t>(i)]);

  BlurFeature feat;
  feat.phi.assign(static_cast<size_t>(spec.feature_dim), 0.0);
  auto states = integrate_latents(spec, store, test_pose(), feat);
  for (size_t k = 0; k < states.size(); ++k) {
    double u = static_cast<double>(k) / (spec.n_latent - 1);
    for (int i = 0; i < spec.latent_dim; ++i)
      CHECK(states[k].z[static_cast<size_t>(i)] ==
            doctest::Approx(states[0].z[static_cast<size_t>(i)] + c[static_cast<size_t>(i)] * u)
                .epsilon(1e-12));
  }
}

TEST_CASE("integrate_latents matches the matrix exponential for a linear field") {
  BlceSpec spec = small_spec();
  ParamStore store;
  spec.register_params(store, 1e-3);
  Rng rng(9);
  spec.init_params(store, rng);

  std::vector<double> a_mat(16);
  for (double& v : a_mat) v = rng.uniform(-0.4, 0.4);
  make_linear_field(spec, store.slice_values(BlceSpec::kField), a_mat);

  BlurFeature feat;
  feat.phi.assign(static_cast<size_t>(spec.feature_dim), 0.0);
  auto states = integrate_latents(spec, store, test_pose(), feat);
  for (size_t k = 0; k < states.size(); ++k) {
    std::vector<double> ref = expm_apply(a_mat, spec.latent_dim, states[k].u, states[0].z);
    for (int i = 0; i < spec.latent_dim; ++i)
      CHECK(states[k].z[static_cast<size_t>(i)] ==
            doctest::Approx(ref[static_cast<size_t>(i)]).epsilon(1e-6));
  }
}

TEST_CASE("integrator converges at fourth order") {
  BlceSpec spec = small_spec();
  ParamStore store;
  spec.register_params(store, 1e-3);
  Rng rng(21);
  spec.init_params(store, rng);

  std::vector<double> a_mat(16);
  for (double& v : a_mat) v = rng.uniform(-1.0, 1.0);
  make_linear_field(spec, store.slice_values(BlceSpec::kField), a_mat);

  BlurFeature feat;
  feat.phi.assign(static_cast<size_t>(spec.feature_dim), 0.0);

  auto final_err = [&](int substeps) {
    BlceSpec s = spec;
    s.substeps = substeps;
    auto states = integrate_latents(s, store, test_pose(), feat);
    std::vector<double> ref = expm_apply(a_mat, spec.latent_dim, 1.0, states[0].z);
    double err = 0.0;
    for (int i = 0; i < spec.latent_dim; ++i)
      err = std::max(err, std::abs(states.back().z[static_cast<size_t>(i)] -
                                   ref[static_cast<size_t>(i)]));
    return err;
  };

  double e1 = final_err(1);
  double e2 = final_err(2);
  REQUIRE(e1 > 1e-12);  // above roundoff, so the ratio means something
  double order = std::log2(e1 / e2);
  CHECK(order > 3.5);
  CHECK(order < 4.5);
}

TEST_CASE("freshly initialized model decodes every latent pose to the frame pose") {
  BlceSpec spec = small_spec();
  ParamStore store;
  spec.register_params(store, 1e-3);
  Rng rng(5);
  spec.init_params(store, rng);

  Pose p = test_pose();
  LatentTrajectory traj = blce_forward(spec, store, p, 0.42, 7);
  REQUIRE(traj.poses.size() == static_cast<size_t>(spec.n_latent));
  CHECK(traj.frame_index == 7);
  for (const Pose& q : traj.poses) {
    CHECK((q.rotation - p.rotation).norm() == 0.0);
    CHECK((q.translation - p.translation).norm() == 0.0);
  }
  for (const ScrewAxis& ax : traj.screw_axes) {
    CHECK(ax.omega.norm() == 0.0);
    CHECK(ax.v.norm() == 0.0);
  }
}

TEST_CASE("screw axes stay inside the soft bound even for a wild decoder") {
  BlceSpec spec = small_spec();
  spec.max_screw = 0.75;
  ParamStore store;
  spec.register_params(store, 1e-3);
  Rng rng(6);
  spec.init_params(store, rng);

  MlpSpec ds = spec.f_dec();
  double* dp = store.slice_values(BlceSpec::kFDec);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 64; ++c) set_weight(ds, dp, 1, r, c, rng.uniform(-50.0, 50.0));
    set_bias(ds, dp, 1, r, rng.uniform(-50.0, 50.0));
  }

  LatentTrajectory traj = blce_forward(spec, store, test_pose(), 0.3, 0);
  for (const ScrewAxis& ax : traj.screw_axes) {
    // tanh saturates to exactly 1.0 in doubles, so the bound can be hit.
    for (int i = 0; i < 3; ++i) {
      CHECK(std::abs(ax.omega(i)) <= spec.max_screw);
      CHECK(std::abs(ax.v(i)) <= spec.max_screw);
    }
  }
  for (const Pose& q : traj.poses) {
    CHECK(q.rotation.allFinite());
    CHECK(q.translation.allFinite());
    CHECK(std::abs(q.rotation.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("blce_forward is bit-identical across runs with the same seed") {
  BlceSpec spec = small_spec();
  spec.inject_blur_feature = true;

  auto run = [&] {
    ParamStore store;
    spec.register_params(store, 1e-3);
    Rng rng(123);
    spec.init_params(store, rng);
    // Nudge the decoder away from zero so the poses actually move.
    double* dp = store.slice_values(BlceSpec::kFDec);
    Rng nudge(124);
    MlpSpec ds = spec.f_dec();
    for (size_t i = layer_offset(ds, 1); i < ds.param_count(); ++i)
      dp[i] = nudge.uniform(-0.2, 0.2);
    return blce_forward(spec, store, test_pose(), 0.55, 2);
  };

  LatentTrajectory a = run();
  LatentTrajectory b = run();
  REQUIRE(a.poses.size() == b.poses.size());
  for (size_t k = 0; k < a.poses.size(); ++k) {
    CHECK((a.poses[k].rotation - b.poses[k].rotation).norm() == 0.0);
    CHECK((a.poses[k].translation - b.poses[k].translation).norm() == 0.0);
  }
}

TEST_CASE("blce_backward matches finite differences end to end") {
  BlceSpec spec;
  spec.latent_dim = 8;
  spec.feature_dim = 4;
  spec.pe_bands = 3;
  spec.n_latent = 3;
  spec.substeps = 2;
  spec.inject_blur_feature = true;

  ParamStore store;
  spec.register_params(store, 1e-3);
  Rng rng(31);
  spec.init_params(store, rng);
  // Random small decoder output layer: nonzero screw axes exercise the full
  // exponential backward rather than the Taylor branch alone.
  MlpSpec ds = spec.f_dec();
  double* dp = store.slice_values(BlceSpec::kFDec);
  for (size_t i = layer_offset(ds, 1); i < ds.param_count(); ++i) dp[i] = rng.uniform(-0.3, 0.3);

  const Pose frame = test_pose();
  const double beta = 0.61;

  // Fixed random pose adjoints define the scalar objective
  // sum_k <WR_k, R_k> + <wt_k, t_k>.
  std::vector<PoseGrad> d_poses(static_cast<size_t>(spec.n_latent));
  Rng adj(32);
  for (auto& pg : d_poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) pg.d_rotation(r, c) = adj.uniform(-1.0, 1.0);
      pg.d_translation(r) = adj.uniform(-1.0, 1.0);
    }
  }

  auto eval = [&]() {
    LatentTrajectory traj = blce_forward(spec, store, frame, beta, 0);
    double loss = 0.0;
    for (size_t k = 0; k < traj.poses.size(); ++k) {
      loss += (d_poses[k].d_rotation.array() * traj.poses[k].rotation.array()).sum();
      loss += d_poses[k].d_translation.dot(traj.poses[k].translation);
    }
    return loss;
  };

  store.zero_grads();
  BlceCache cache;
  blce_forward(spec, store, frame, beta, 0, &cache);
  blce_backward(spec, store, cache, frame, d_poses);

  // Spot-check a spread of indices in every slice; full FD over ~30k
  // parameters would dominate the suite's runtime for no extra coverage.
  std::vector<size_t> indices;
  Rng pick(33);
  for (const auto& sl : store.slices)
    for (int j = 0; j < 30; ++j)
      indices.push_back(sl.offset + pick.uniform_int(sl.count));
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());

  FiniteDiffReport rep = finite_diff_check(store, eval, 1e-5, indices);
  INFO("worst index ", rep.worst_index, " analytic ", rep.worst_analytic, " numeric ",
       rep.worst_numeric);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("neural ode ablation ignores the blur feature entirely") {
  BlceSpec spec = small_spec();
  REQUIRE_FALSE(spec.inject_blur_feature);
  ParamStore store;
  spec.register_params(store, 1e-3);
  Rng rng(8);
  spec.init_params(store, rng);
  double* dp = store.slice_values(BlceSpec::kFDec);
  MlpSpec ds = spec.f_dec();
  Rng nudge(9);
  for (size_t i = layer_offset(ds, 1); i < ds.param_count(); ++i) dp[i] = nudge.uniform(-0.2, 0.2);

  LatentTrajectory a = blce_forward(spec, store, test_pose(), 0.1, 0);
  LatentTrajectory b = blce_forward(spec, store, test_pose(), 0.9, 0);
  for (size_t k = 0; k < a.poses.size(); ++k) {
    CHECK((a.poses[k].rotation - b.poses[k].rotation).norm() == 0.0);
    CHECK((a.poses[k].translation - b.poses[k].translation).norm() == 0.0);
  }
}
