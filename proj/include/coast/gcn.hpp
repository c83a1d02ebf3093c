#pragma once

// Cross-domain graph convolution.
//
//   E' = LeakyReLU((L + I) E W1 + ((L_S E) ⊙ E) W2 + ((L_T E) ⊙ E) W3)
//
// Node-wise this is the sum of a self message W1 e_u and, for every
// neighbour v over an edge of type d,
//   m_{u<-v} = w(u,v) (W1 e_v + W_d (e_v ⊙ e_u)),   W_S = W2, W_T = W3.
// With literal_messages the neighbour term uses W1 e_u instead of W1 e_v.
// Row-vector convention: embeddings are rows and W has shape D_in x D_out.

#include <cstddef>
#include <random>
#include <vector>

#include "coast/tensor.hpp"
#include "coast/xgraph.hpp"

namespace coast {

struct GcnConfig {
  std::size_t layers = 2;
  std::size_t dim = 64;
  double leaky_alpha = 0.01;
  bool interaction_terms = true;  // false drops the W2/W3 terms
  bool literal_messages = false;
};

struct GcnLayer {
  Tensor w1, w2, w3;
};

struct GcnParams {
  std::vector<GcnLayer> layers;

  static GcnParams init(const GcnConfig& cfg, std::mt19937_64& rng);
  void register_into(ParamSet& params) const;
};

// One node-wise message from `sender` to `receiver` (plain evaluation).
// Throws ContractError when the pair is not an edge.
std::vector<double> message(const CrossDomainGraph& g, std::size_t receiver, std::size_t sender,
                            std::span<const double> e_receiver, std::span<const double> e_sender,
                            const GcnLayer& layer, const GcnConfig& cfg);

Tensor propagate_layer(const Tensor& e, const CrossDomainGraph& g, const GcnLayer& layer, const GcnConfig& cfg);

// E0 ⊕ E1 ⊕ ... ⊕ E_L per node.
Tensor propagate(const Tensor& e0, const CrossDomainGraph& g, const GcnParams& params, const GcnConfig& cfg);

inline std::size_t propagated_dim(const GcnConfig& cfg) { return cfg.dim * (cfg.layers + 1); }

}  // namespace coast
