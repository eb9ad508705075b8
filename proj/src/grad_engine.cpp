#include "desplat/grad_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace desplat {

size_t ParamStore::register_slice(const std::string& name, size_t count, double lr) {
  for (const Slice& s : slices)
    if (s.name == name) throw std::runtime_error("duplicate slice: " + name);
  size_t offset = values.size();
  slices.push_back({name, offset, count, lr});
  values.resize(offset + count, 0.0);
  grads.resize(offset + count, 0.0);
  return offset;
}

const ParamStore::Slice& ParamStore::slice(const std::string& name) const {
  for (const Slice& s : slices)
    if (s.name == name) return s;
  throw std::runtime_error("unknown slice: " + name);
}

bool ParamStore::has_slice(const std::string& name) const {
  for (const Slice& s : slices)
    if (s.name == name) return true;
  return false;
}

double* ParamStore::slice_values(const std::string& name) { return values.data() + slice(name).offset; }

const double* ParamStore::slice_values(const std::string& name) const {
  return values.data() + slice(name).offset;
}

double* ParamStore::slice_grads(const std::string& name) { return grads.data() + slice(name).offset; }

void ParamStore::zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }

size_t MlpSpec::param_count() const {
  std::vector<int> w = widths();
  size_t n = 0;
  for (size_t i = 0; i + 1 < w.size(); ++i)
    n += static_cast<size_t>(w[i]) * w[i + 1] + w[i + 1];
  return n;
}

std::vector<int> MlpSpec::widths() const {
  std::vector<int> w;
  w.push_back(in_dim);
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out_dim);
  return w;
}

std::vector<double> mlp_forward(const MlpSpec& spec, const double* params,
                                const std::vector<double>& input, MlpCache* cache) {
  if (static_cast<int>(input.size()) != spec.in_dim)
    throw std::runtime_error("mlp_forward: input size mismatch");
  std::vector<int> w = spec.widths();
  std::vector<double> cur = input;
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(cur);
  }
  size_t p = 0;
  for (size_t layer = 0; layer + 1 < w.size(); ++layer) {
    int n_in = w[layer], n_out = w[layer + 1];
    std::vector<double> next(static_cast<size_t>(n_out));
    const double* weight = params + p;
    const double* bias = params + p + static_cast<size_t>(n_in) * n_out;
    for (int o = 0; o < n_out; ++o) {
      double acc = bias[o];
      const double* row = weight + static_cast<size_t>(o) * n_in;
      for (int i = 0; i < n_in; ++i) acc += row[i] * cur[static_cast<size_t>(i)];
      next[static_cast<size_t>(o)] = acc;
    }
    bool last = layer + 2 == w.size();
    if (!last) {
      if (spec.act == Activation::Tanh)
        for (double& x : next) x = std::tanh(x);
      else
        for (double& x : next) x = std::max(x, 0.0);
    }
    cur = std::move(next);
    if (cache) cache->acts.push_back(cur);
    p += static_cast<size_t>(n_in) * n_out + n_out;
  }
  return cur;
}

void mlp_backward(const MlpSpec& spec, const double* params, const MlpCache& cache,
                  const std::vector<double>& d_out, double* d_params,
                  std::vector<double>* d_input) {
  std::vector<int> w = spec.widths();
  size_t n_layers = w.size() - 1;
  if (cache.acts.size() != w.size()) throw std::runtime_error("mlp_backward: stale cache");

  // Parameter offsets per layer, front to back.
  std::vector<size_t> offs(n_layers);
  size_t p = 0;
  for (size_t layer = 0; layer < n_layers; ++layer) {
    offs[layer] = p;
    p += static_cast<size_t>(w[layer]) * w[layer + 1] + w[layer + 1];
  }

  std::vector<double> delta = d_out;
  for (size_t layer = n_layers; layer-- > 0;) {
    int n_in = w[layer], n_out = w[layer + 1];
    const std::vector<double>& in_act = cache.acts[layer];
    const std::vector<double>& out_act = cache.acts[layer + 1];
    bool last = layer + 1 == n_layers;

    // Fold the activation derivative into delta, reading it off the stored
    // post-activation value. For ReLU, zero output means the unit was
    // clamped (or sat exactly at zero, where the subgradient 0 is fine).
    if (!last) {
      if (spec.act == Activation::Tanh) {
        for (int o = 0; o < n_out; ++o) {
          double y = out_act[static_cast<size_t>(o)];
          delta[static_cast<size_t>(o)] *= 1.0 - y * y;
        }
      } else {
        for (int o = 0; o < n_out; ++o)
          if (out_act[static_cast<size_t>(o)] <= 0.0) delta[static_cast<size_t>(o)] = 0.0;
      }
    }

    const double* weight = params + offs[layer];
    double* d_weight = d_params + offs[layer];
    double* d_bias = d_weight + static_cast<size_t>(n_in) * n_out;
    std::vector<double> d_in(static_cast<size_t>(n_in), 0.0);
    for (int o = 0; o < n_out; ++o) {
      double d = delta[static_cast<size_t>(o)];
      d_bias[o] += d;
      const double* row = weight + static_cast<size_t>(o) * n_in;
      double* d_row = d_weight + static_cast<size_t>(o) * n_in;
      for (int i = 0; i < n_in; ++i) {
        d_row[i] += d * in_act[static_cast<size_t>(i)];
        d_in[static_cast<size_t>(i)] += d * row[i];
      }
    }
    delta = std::move(d_in);
  }
  if (d_input) *d_input = delta;
}

void mlp_init(const MlpSpec& spec, Rng& rng, double* params, bool zero_last_layer) {
  std::vector<int> w = spec.widths();
  size_t p = 0;
  for (size_t layer = 0; layer + 1 < w.size(); ++layer) {
    int n_in = w[layer], n_out = w[layer + 1];
    bool last = layer + 2 == w.size();
    double bound = std::sqrt(6.0 / n_in);
    for (size_t i = 0; i < static_cast<size_t>(n_in) * n_out; ++i)
      params[p + i] = (last && zero_last_layer) ? 0.0 : rng.uniform(-bound, bound);
    for (int i = 0; i < n_out; ++i) params[p + static_cast<size_t>(n_in) * n_out + i] = 0.0;
    p += static_cast<size_t>(n_in) * n_out + n_out;
  }
}

std::vector<double> positional_encoding(const std::vector<double>& x, int bands) {
  std::vector<double> out;
  out.reserve(x.size() * 2 * static_cast<size_t>(bands));
  for (double xi : x) {
    double freq = std::numbers::pi;
    for (int b = 0; b < bands; ++b) {
      out.push_back(std::sin(freq * xi));
      out.push_back(std::cos(freq * xi));
      freq *= 2.0;
    }
  }
  return out;
}

std::vector<double> positional_encoding_backward(const std::vector<double>& x, int bands,
                                                 const std::vector<double>& d_enc) {
  std::vector<double> d_x(x.size(), 0.0);
  size_t k = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    double freq = std::numbers::pi;
    for (int b = 0; b < bands; ++b) {
      d_x[i] += d_enc[k++] * freq * std::cos(freq * x[i]);
      d_x[i] += d_enc[k++] * -freq * std::sin(freq * x[i]);
      freq *= 2.0;
    }
  }
  return d_x;
}

void AdamState::resize(size_t n) {
  m.assign(n, 0.0);
  v.assign(n, 0.0);
}

void adam_step(ParamStore& store, AdamState& state, double lr_scale, double beta1, double beta2,
               double eps) {
  if (state.m.size() != store.values.size()) state.resize(store.values.size());
  state.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (const ParamStore::Slice& s : store.slices) {
    double lr = lr_scale * s.lr;
    for (size_t i = s.offset; i < s.offset + s.count; ++i) {
      double g = store.grads[i];
      state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
      state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
      if (lr == 0.0) continue;
      double mhat = state.m[i] / bc1;
      double vhat = state.v[i] / bc2;
      store.values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

FiniteDiffReport finite_diff_check(ParamStore& store, const std::function<double()>& eval,
                                   double h, std::vector<size_t> indices) {
  if (indices.empty()) {
    indices.resize(store.values.size());
    for (size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  }
  FiniteDiffReport rep;
  for (size_t idx : indices) {
    double saved = store.values[idx];
    store.values[idx] = saved + h;
    double fp = eval();
    store.values[idx] = saved - h;
    double fm = eval();
    store.values[idx] = saved;
    double numeric = (fp - fm) / (2.0 * h);
    double analytic = store.grads[idx];
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    double rel = std::abs(analytic - numeric) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = idx;
      rep.worst_analytic = analytic;
      rep.worst_numeric = numeric;
    }
    rep.n_checked += 1;
  }
  return rep;
}

}  // namespace desplat
