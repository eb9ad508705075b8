#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "desplat/rng.hpp"

namespace desplat {

// Flat parameter vector with a parallel gradient buffer. Components claim
// contiguous named slices; the optimizer walks the slices so each can carry
// its own learning rate.
struct ParamStore {
  struct Slice {
    std::string name;
    size_t offset = 0;
    size_t count = 0;
    double lr = 0.0;
  };

  std::vector<double> values;
  std::vector<double> grads;
  std::vector<Slice> slices;

  // Appends a slice and returns its offset. Values start at zero.
  size_t register_slice(const std::string& name, size_t count, double lr);

  const Slice& slice(const std::string& name) const;
  bool has_slice(const std::string& name) const;

  double* slice_values(const std::string& name);
  const double* slice_values(const std::string& name) const;
  double* slice_grads(const std::string& name);

  void zero_grads();
};

// Fully connected net: in_dim -> hidden[0] -> ... -> out_dim. The output
// layer is affine. Parameters are packed per layer as row-major weight
// [out x in] followed by bias [out].
enum class Activation { Relu, Tanh };

struct MlpSpec {
  int in_dim = 0;
  std::vector<int> hidden;
  int out_dim = 0;
  Activation act = Activation::Relu;

  size_t param_count() const;
  std::vector<int> widths() const;  // in_dim, hidden..., out_dim
};

// Forward activations kept around for the backward pass. acts[0] is the
// input, acts[i] the post-activation output of layer i.
struct MlpCache {
  std::vector<std::vector<double>> acts;
};

std::vector<double> mlp_forward(const MlpSpec& spec, const double* params,
                                const std::vector<double>& input, MlpCache* cache = nullptr);

// Accumulates dL/d(params) into d_params (same packing as params) and, when
// d_input is non-null, dL/d(input) into it (overwritten, not accumulated).
void mlp_backward(const MlpSpec& spec, const double* params, const MlpCache& cache,
                  const std::vector<double>& d_out, double* d_params,
                  std::vector<double>* d_input = nullptr);

// Kaiming-uniform weights, zero biases. zero_last_layer forces the final
// affine layer to all zeros so the net starts as the constant zero map.
void mlp_init(const MlpSpec& spec, Rng& rng, double* params, bool zero_last_layer = false);

// NeRF-style embedding, interleaved per band: for each input component x,
// (sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)).
std::vector<double> positional_encoding(const std::vector<double>& x, int bands);

// dL/dx given dL/d(encoding).
std::vector<double> positional_encoding_backward(const std::vector<double>& x, int bands,
                                                 const std::vector<double>& d_enc);

// First and second Adam moments, persisted alongside the parameters across
// checkpoints so resumed runs continue bit-identically.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  void resize(size_t n);
};

// One Adam update with bias correction. Each slice steps with
// lr_scale * slice.lr; slices with lr 0 are frozen.
void adam_step(ParamStore& store, AdamState& state, double lr_scale = 1.0, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  size_t n_checked = 0;
};

// Central-difference oracle. store.grads must already hold the analytic
// gradient of eval at the current values; each probed coordinate is bumped
// by +-h, eval re-run, and the relative error
// |a - n| / max(|a|, |n|, 1e-6) recorded. Empty indices means all.
FiniteDiffReport finite_diff_check(ParamStore& store, const std::function<double()>& eval,
                                   double h = 1e-5, std::vector<size_t> indices = {});

}  // namespace desplat
