#pragma once

// Interest alignment for users present in both domains.
//
// User-user: each user gets one view per domain, a dot-product softmax
// weighted sum of its two-hop neighbours' embeddings. Views are projected by
// F_S / F_T to unit vectors z, scored against K unit prototypes, and each
// view predicts the other's Sinkhorn code:
//   L_UU = mean_u 1/2 [ l(z_T, q_S) + l(z_S, q_T) ],  l(z, q) = -sum_k q_k log softmax(z C^T / tau)_k.
//
// User-item: g_d is the gradient of the domain's mean BCE over aligned users
// w.r.t. the user tower F_d^u, built with create_graph so that
//   L_UI = 1 - cos(g_S, g_T)
// can be differentiated.

#include <array>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "coast/tensor.hpp"
#include "coast/towers.hpp"
#include "coast/xgraph.hpp"

namespace coast {

struct AlignConfig {
  std::size_t prototypes = 256;  // K
  std::size_t proj_dim = 64;
  double tau = 0.1;
  double sinkhorn_eps = 0.05;
  std::size_t sinkhorn_iters = 3;
  bool last_layer_only = false;  // gradient alignment over the last tower layer only
};

struct AlignParams {
  std::array<Mlp, 2> extractor;  // F_S, F_T: [D', d_proj, d_proj]
  Tensor prototypes;             // K x d_proj, unit rows

  static AlignParams init(std::size_t d, const AlignConfig& cfg, std::mt19937_64& rng);
  void register_into(ParamSet& params) const;
  void normalize_prototypes() const;
};

// Softmax-weighted neighbour sums, one row per center. neighbors[i] lists
// node indices for center i; an empty list yields the center's own row.
Tensor build_views(const Tensor& embeddings, std::span<const std::size_t> centers,
                   std::span<const std::vector<std::size_t>> neighbors);

// Sinkhorn-Knopp codes (rows sum to 1) for a B x K score matrix. The
// returned tensor is a constant. Throws NumericDomainError on non-finite scores.
Tensor sinkhorn_codes(const Tensor& scores, double eps, std::size_t iters);
// The transport plan before the final row rescaling (total mass 1).
std::vector<double> sinkhorn_plan(std::span<const double> scores, std::size_t rows, std::size_t cols, double eps,
                                  std::size_t iters);

// Mean over rows of -sum_k q_k log softmax(z C^T / tau)_k.
Tensor swapped_prediction(const Tensor& z, const Tensor& codes, const Tensor& prototypes, double tau);

// L_UU for row-aligned views. Returns a zero scalar with fewer than two rows.
Tensor user_user_loss(const Tensor& view_s, const Tensor& view_t, const AlignParams& params, const AlignConfig& cfg);

// Flattened create_graph gradient of `loss` w.r.t. the given tensors.
Tensor grad_vector(const Tensor& loss, std::span<const Tensor> wrt);

// 1 - cos(g_s, g_t). Both zero -> 0, one zero -> 1. Length mismatch throws ContractError.
Tensor user_item_loss(const Tensor& g_s, const Tensor& g_t);

}  // namespace coast
