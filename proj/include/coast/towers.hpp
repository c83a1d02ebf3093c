#pragma once

// Per-domain user and item towers and the supervised objective.
//
// A tower is an MLP with widths [D, 2D, 4D, 8D, 4D, 2D, D], ReLU between
// layers and an L2-normalized output. A pair scores
//   y_hat = clamp((<F^u(e_u), F^v(e_v)> + 1) / 2, eps, 1 - eps).

#include <array>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "coast/dataio.hpp"
#include "coast/tensor.hpp"
#include "coast/xgraph.hpp"

namespace coast {

inline constexpr double kProbEps = 1e-7;

struct Mlp {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static Mlp init(std::span<const std::size_t> widths, std::mt19937_64& rng);
  // Linear layers with ReLU in between (none after the last).
  Tensor forward(const Tensor& x) const;
  std::vector<Tensor> tensors() const;             // w0, b0, w1, b1, ...
  std::vector<Tensor> last_layer_tensors() const;  // w_last, b_last
  void register_into(ParamSet& params, const std::string& prefix) const;
  std::size_t input_dim() const { return weights.front().rows(); }
};

std::vector<std::size_t> tower_widths(std::size_t d);

struct TowerParams {
  std::array<Mlp, 2> user;  // F_s^u, F_t^u
  std::array<Mlp, 2> item;  // F_s^v, F_t^v

  static TowerParams init(std::size_t d, std::mt19937_64& rng);
  void register_into(ParamSet& params) const;
};

// Row-wise L2-normalized MLP output; DegenerateOutputError on a zero row.
Tensor tower_forward(const Mlp& tower, const Tensor& x);

// Scores for row-aligned pairs of normalized tower outputs, as a column.
Tensor predict_scores(const Tensor& user_out, const Tensor& item_out);

// Mean binary cross-entropy; labels is a constant column of 0/1.
Tensor bce(const Tensor& y_hat, const Tensor& labels);

// Tower inputs and score tensors for the examples of one domain.
struct DomainBatch {
  Domain domain = Domain::kSource;
  std::vector<std::size_t> example_index;  // positions in the original batch
  Tensor user_emb;                         // per unique user, merged propagated embedding
  Tensor item_emb;                         // per unique item
  std::vector<std::size_t> user_row, item_row;  // per example
  Tensor labels;                               // column
};

// Groups the examples of domain d, gathering merged user embeddings and item
// embeddings from the propagated table. `keep` optionally filters users.
DomainBatch gather_domain_batch(const Tensor& propagated, const CrossDomainGraph& g, std::span<const Example> batch,
                                Domain d, const std::vector<bool>* keep = nullptr);

struct DomainScores {
  Tensor y_hat;     // column, one per example
  Tensor bce_loss;  // scalar mean BCE
};

DomainScores score_domain(const DomainBatch& b, const TowerParams& towers);

struct SupervisedLoss {
  Tensor total;                      // sum of per-domain BCE + lambda1 * regularizer
  std::array<Tensor, 2> per_domain;  // undefined when the domain has no examples
  Tensor regularizer;
};

// Mean BCE per domain plus lambda1 * mean over examples of |e_u|^2 + |e_v|^2.
SupervisedLoss supervised_loss(const Tensor& propagated, const CrossDomainGraph& g, std::span<const Example> batch,
                               const TowerParams& towers, double lambda1);

}  // namespace coast
