#include "desplat/blce.hpp"

#include <cmath>

#include "desplat/fft.hpp"

namespace desplat {

BlurScore blur_score(const Image& frame, int s, int frame_index) {
  if (frame.width < s || frame.height < s) throw ImageSmallerThanCrop();
  Image gray = luminance(frame);
  ComplexGrid spec = fftshift(dft_2d(gray));

  double total = 0.0;
  for (const auto& z : spec.data) total += std::abs(z);

  int x0 = frame.width / 2 - s / 2;
  int y0 = frame.height / 2 - s / 2;
  double low = 0.0;
  for (int y = y0; y < y0 + s; ++y)
    for (int x = x0; x < x0 + s; ++x) low += std::abs(spec.at(x, y));

  BlurScore out;
  out.frame_index = frame_index;
  // An all-zero frame has no spectrum to speak of; call it pure DC.
  out.beta = total > 0.0 ? low / total : 1.0;
  return out;
}

void BlceSpec::register_params(ParamStore& store, double lr) const {
  store.register_slice(kFTheta, f_theta().param_count(), lr);
  store.register_slice(kFEnc, f_enc().param_count(), lr);
  store.register_slice(kField, field().param_count(), lr);
  store.register_slice(kFDec, f_dec().param_count(), lr);
}

void BlceSpec::init_params(ParamStore& store, Rng& rng) const {
  mlp_init(f_theta(), rng, store.slice_values(kFTheta));
  mlp_init(f_enc(), rng, store.slice_values(kFEnc));
  mlp_init(field(), rng, store.slice_values(kField));
  mlp_init(f_dec(), rng, store.slice_values(kFDec), true);
}

BlurFeature blur_feature(const BlceSpec& spec, const ParamStore& store, const BlurScore& score) {
  BlurFeature out;
  out.phi = mlp_forward(spec.f_theta(), store.slice_values(spec.kFTheta),
                        positional_encoding({score.beta}, spec.pe_bands));
  return out;
}

namespace {

std::vector<double> flatten_pose(const Pose& pose) {
  std::vector<double> v(12);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) v[static_cast<size_t>(r) * 4 + c] = pose.rotation(r, c);
    v[static_cast<size_t>(r) * 4 + 3] = pose.translation(r);
  }
  return v;
}

std::vector<double> field_input(const BlceSpec& spec, const std::vector<double>& z, double u,
                                const std::vector<double>& phi) {
  std::vector<double> in;
  in.reserve(static_cast<size_t>(spec.field().in_dim));
  in.insert(in.end(), z.begin(), z.end());
  in.push_back(u);
  if (spec.inject_blur_feature) in.insert(in.end(), phi.begin(), phi.end());
  return in;
}

}  // namespace

std::vector<LatentState> integrate_latents(const BlceSpec& spec, const ParamStore& store,
                                           const Pose& frame_pose, const BlurFeature& feature,
                                           BlceCache* cache) {
  MlpSpec field_spec = spec.field();
  const double* field_params = store.slice_values(spec.kField);

  std::vector<double> enc_in = positional_encoding(flatten_pose(frame_pose), spec.enc_pe_bands);
  MlpCache enc_cache;
  std::vector<double> z =
      mlp_forward(spec.f_enc(), store.slice_values(spec.kFEnc), enc_in, &enc_cache);
  if (cache) {
    cache->enc_input = enc_in;
    cache->enc_cache = std::move(enc_cache);
    cache->phi = feature.phi;
    cache->steps.clear();
    cache->states.clear();
  }

  auto eval_field = [&](const std::vector<double>& zz, double u, BlceCache::Stage* stage) {
    std::vector<double> in = field_input(spec, zz, u, feature.phi);
    MlpCache mc;
    std::vector<double> k = mlp_forward(field_spec, field_params, in, stage ? &mc : nullptr);
    if (stage) {
      stage->input = std::move(in);
      stage->cache = std::move(mc);
      stage->k = k;
    }
    return k;
  };

  std::vector<LatentState> states;
  states.push_back({z, 0.0});

  const int n_intervals = spec.n_latent - 1;
  const double h = 1.0 / (n_intervals * spec.substeps);
  double u = 0.0;
  for (int interval = 0; interval < n_intervals; ++interval) {
    for (int sub = 0; sub < spec.substeps; ++sub) {
      BlceCache::Step step;
      BlceCache::Step* sp = cache ? &step : nullptr;
      if (sp) {
        sp->z0 = z;
        sp->u0 = u;
        sp->h = h;
      }
      std::vector<double> k1 = eval_field(z, u, sp ? &sp->stages[0] : nullptr);
      std::vector<double> z2(z.size()), z3(z.size()), z4(z.size());
      for (size_t i = 0; i < z.size(); ++i) z2[i] = z[i] + 0.5 * h * k1[i];
      std::vector<double> k2 = eval_field(z2, u + 0.5 * h, sp ? &sp->stages[1] : nullptr);
      for (size_t i = 0; i < z.size(); ++i) z3[i] = z[i] + 0.5 * h * k2[i];
      std::vector<double> k3 = eval_field(z3, u + 0.5 * h, sp ? &sp->stages[2] : nullptr);
      for (size_t i = 0; i < z.size(); ++i) z4[i] = z[i] + h * k3[i];
      std::vector<double> k4 = eval_field(z4, u + h, sp ? &sp->stages[3] : nullptr);
      for (size_t i = 0; i < z.size(); ++i)
        z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
      u += h;
      if (cache) cache->steps.push_back(std::move(step));
    }
    states.push_back({z, static_cast<double>(interval + 1) / n_intervals});
  }
  if (cache) cache->states = states;
  return states;
}

LatentTrajectory decode_latent_poses(const BlceSpec& spec, const ParamStore& store,
                                     const std::vector<LatentState>& states,
                                     const Pose& frame_pose, int frame_index, BlceCache* cache) {
  MlpSpec dec_spec = spec.f_dec();
  const double* dec_params = store.slice_values(spec.kFDec);

  LatentTrajectory traj;
  traj.frame_index = frame_index;
  if (cache) {
    cache->dec_caches.assign(states.size(), MlpCache{});
    cache->raw_axes.assign(states.size(), {});
  }
  for (size_t k = 0; k < states.size(); ++k) {
    MlpCache mc;
    std::vector<double> raw =
        mlp_forward(dec_spec, dec_params, states[k].z, cache ? &mc : nullptr);
    ScrewAxis axis;
    for (int i = 0; i < 6; ++i) {
      double bounded = spec.max_screw * std::tanh(raw[static_cast<size_t>(i)] / spec.max_screw);
      if (i < 3)
        axis.omega(i) = bounded;
      else
        axis.v(i - 3) = bounded;
      if (cache) cache->raw_axes[k][static_cast<size_t>(i)] = raw[static_cast<size_t>(i)];
    }
    if (cache) cache->dec_caches[k] = std::move(mc);
    traj.screw_axes.push_back(axis);
    traj.poses.push_back(compose(frame_pose, screw_exp(axis)));
  }
  return traj;
}

LatentTrajectory blce_forward(const BlceSpec& spec, const ParamStore& store,
                              const Pose& frame_pose, double beta, int frame_index,
                              BlceCache* cache) {
  std::vector<double> pe = positional_encoding({beta}, spec.pe_bands);
  MlpCache ftheta_cache;
  BlurFeature feature;
  feature.phi = mlp_forward(spec.f_theta(), store.slice_values(spec.kFTheta), pe,
                            cache ? &ftheta_cache : nullptr);
  if (cache) {
    cache->pe = pe;
    cache->ftheta_cache = std::move(ftheta_cache);
  }
  std::vector<LatentState> states = integrate_latents(spec, store, frame_pose, feature, cache);
  return decode_latent_poses(spec, store, states, frame_pose, frame_index, cache);
}

void blce_backward(const BlceSpec& spec, ParamStore& store, const BlceCache& cache,
                   const Pose& frame_pose, const std::vector<PoseGrad>& d_poses) {
  MlpSpec dec_spec = spec.f_dec();
  MlpSpec field_spec = spec.field();
  const double* dec_params = store.slice_values(spec.kFDec);
  const double* field_params = store.slice_values(spec.kField);
  double* d_dec = store.slice_grads(spec.kFDec);
  double* d_field = store.slice_grads(spec.kField);

  const size_t n_states = cache.states.size();
  const size_t zdim = static_cast<size_t>(spec.latent_dim);

  // Latent-pose adjoints pulled back to per-grid-point z adjoints.
  std::vector<std::vector<double>> d_states(n_states, std::vector<double>(zdim, 0.0));
  for (size_t k = 0; k < n_states; ++k) {
    const PoseGrad& pg = d_poses[k];
    if (pg.d_rotation.isZero(0.0) && pg.d_translation.isZero(0.0)) continue;

    // Pose_hat = frame_pose * exp(axis); the frame pose is a constant.
    Mat3 d_psi_r = frame_pose.rotation.transpose() * pg.d_rotation;
    Vec3 d_psi_t = frame_pose.rotation.transpose() * pg.d_translation;

    ScrewAxis axis;
    for (int i = 0; i < 6; ++i) {
      double bounded =
          spec.max_screw * std::tanh(cache.raw_axes[k][static_cast<size_t>(i)] / spec.max_screw);
      if (i < 3)
        axis.omega(i) = bounded;
      else
        axis.v(i - 3) = bounded;
    }
    ScrewAxisGrad ag = screw_exp_backward(axis, d_psi_r, d_psi_t);

    std::vector<double> d_raw(6);
    for (int i = 0; i < 6; ++i) {
      double bounded = i < 3 ? axis.omega(i) : axis.v(i - 3);
      double d_axis = i < 3 ? ag.d_omega(i) : ag.d_v(i - 3);
      double r = bounded / spec.max_screw;  // tanh(raw / max_screw)
      d_raw[static_cast<size_t>(i)] = d_axis * (1.0 - r * r);
    }
    std::vector<double> d_z;
    mlp_backward(dec_spec, dec_params, cache.dec_caches[k], d_raw, d_dec, &d_z);
    for (size_t i = 0; i < zdim; ++i) d_states[k][i] += d_z[i];
  }

  // Reverse the RK4 sweep. d_phi collects the blur-feature adjoint from
  // every stage input.
  std::vector<double> d_phi(cache.phi.size(), 0.0);
  std::vector<double> lambda = d_states[n_states - 1];

  auto stage_backward = [&](const BlceCache::Stage& stage, const std::vector<double>& d_k,
                            std::vector<double>& d_z_in) {
    std::vector<double> d_in;
    mlp_backward(field_spec, field_params, stage.cache, d_k, d_field, &d_in);
    for (size_t i = 0; i < zdim; ++i) d_z_in[i] += d_in[i];
    if (spec.inject_blur_feature)
      for (size_t i = 0; i < d_phi.size(); ++i) d_phi[i] += d_in[zdim + 1 + i];
  };

  const int n_intervals = spec.n_latent - 1;
  size_t step_idx = cache.steps.size();
  for (int interval = n_intervals; interval-- > 0;) {
    for (int sub = spec.substeps; sub-- > 0;) {
      const BlceCache::Step& step = cache.steps[--step_idx];
      const double h = step.h;

      std::vector<double> a1(zdim), a2(zdim), a3(zdim), a4(zdim);
      for (size_t i = 0; i < zdim; ++i) {
        a1[i] = h / 6.0 * lambda[i];
        a2[i] = h / 3.0 * lambda[i];
        a3[i] = h / 3.0 * lambda[i];
        a4[i] = h / 6.0 * lambda[i];
      }
      std::vector<double> dz(zdim, 0.0);
      std::vector<double> g(zdim, 0.0);

      g.assign(zdim, 0.0);
      stage_backward(step.stages[3], a4, g);  // k4 at z + h k3
      for (size_t i = 0; i < zdim; ++i) {
        dz[i] += g[i];
        a3[i] += h * g[i];
      }
      g.assign(zdim, 0.0);
      stage_backward(step.stages[2], a3, g);  // k3 at z + h/2 k2
      for (size_t i = 0; i < zdim; ++i) {
        dz[i] += g[i];
        a2[i] += 0.5 * h * g[i];
      }
      g.assign(zdim, 0.0);
      stage_backward(step.stages[1], a2, g);  // k2 at z + h/2 k1
      for (size_t i = 0; i < zdim; ++i) {
        dz[i] += g[i];
        a1[i] += 0.5 * h * g[i];
      }
      g.assign(zdim, 0.0);
      stage_backward(step.stages[0], a1, g);  // k1 at z
      for (size_t i = 0; i < zdim; ++i) lambda[i] = lambda[i] + dz[i] + g[i];
    }
    // Crossing a grid point: fold in the decoder adjoint that lives there.
    for (size_t i = 0; i < zdim; ++i) lambda[i] += d_states[static_cast<size_t>(interval)][i];
  }

  mlp_backward(spec.f_enc(), store.slice_values(spec.kFEnc), cache.enc_cache, lambda,
               store.slice_grads(spec.kFEnc), nullptr);

  if (spec.inject_blur_feature) {
    bool any = false;
    for (double v : d_phi)
      if (v != 0.0) any = true;
    if (any)
      mlp_backward(spec.f_theta(), store.slice_values(spec.kFTheta), cache.ftheta_cache, d_phi,
                   store.slice_grads(spec.kFTheta), nullptr);
  }
}

}  // namespace desplat
