#pragma once

// Unified user/item graph over both domains.
//
// Node layout: user nodes first, then the items of S, then the items of T.
// A user normally owns one node shared by both domains. Users listed in
// GraphOptions::severed_users (or every user when separate_domains is set)
// get one node per domain they appear in instead.
//
// Edge weights are 1/sqrt(deg(a) deg(b)) with total node degrees. Items live
// in one domain, so for a user u and item v this equals
// 1/sqrt(|N_u| max(|N_v^S|,1) max(|N_v^T|,1)), and the matrix is symmetric.

#include <array>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "coast/dataio.hpp"
#include "coast/tensor.hpp"

namespace coast {

// e_S alone, e_T alone, or their elementwise max. Throws ContractError when
// both are absent and DimensionError on a length mismatch.
std::vector<double> merge_user_embedding(std::optional<std::span<const double>> e_s,
                                         std::optional<std::span<const double>> e_t);

inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

struct GraphOptions {
  bool separate_domains = false;
  std::vector<std::size_t> severed_users;
};

struct CrossDomainGraph {
  std::size_t user_nodes = 0;
  std::array<std::size_t, 2> item_offset{};
  std::array<std::size_t, 2> item_count{};
  std::size_t node_count = 0;

  std::array<std::vector<std::size_t>, 2> user_node;  // [domain][user] -> node or kNoNode
  std::vector<std::size_t> node_user;                 // user node -> dataset user
  // Overlapping users whose cross-domain link is kept (sorted). They take
  // part in alignment and, with separate_domains, are max-merged when predicting.
  std::vector<std::size_t> overlap_users;
  std::vector<bool> is_overlap;  // per dataset user
  bool merge_presences = false;

  std::array<std::vector<std::pair<std::size_t, std::size_t>>, 2> edges;  // (user node, item node)
  std::vector<std::vector<std::size_t>> adjacency;                        // sorted neighbour nodes
  std::vector<std::size_t> degree;
  std::array<std::vector<std::size_t>, 2> type_degree;

  std::shared_ptr<const SparseMatrix> laplacian;
  std::array<std::shared_ptr<const SparseMatrix>, 2> type_laplacian;

  // Constant inputs of the initial embedding layer.
  std::size_t feature_dim = 0;
  Tensor user_features;                 // rows: S presence of every user, then T presence
  std::array<Tensor, 2> item_features;  // per domain
  std::vector<std::size_t> user_pick_a, user_pick_b;  // per user node: rows of user_features to max-merge

  std::size_t item_node(Domain d, std::size_t item) const { return item_offset[index_of(d)] + item; }
  Domain item_domain(std::size_t node) const {
    return node >= item_offset[index_of(Domain::kTarget)] ? Domain::kTarget : Domain::kSource;
  }
  bool is_item(std::size_t node) const { return node >= user_nodes; }
  double edge_weight(std::size_t a, std::size_t b) const;  // 0 for non-edges
  bool has_edge(std::size_t a, std::size_t b) const;
  // Nodes whose embeddings are max-merged to represent `user` when predicting
  // in domain d. Equal unless the user is split by separate_domains.
  std::pair<std::size_t, std::size_t> prediction_nodes(Domain d, std::size_t user) const;
  nlohmann::json stats() const;
};

// Builds the graph from training positives. Throws ContractError if an
// entity of the dataset has no interactions at all.
CrossDomainGraph build_graph(const Dataset& ds, const TrainingSet& train, const GraphOptions& options = {});

// Users (as user nodes of domain d) that share an item with `user` through
// d-edges, excluding the user itself, ranked by co-interaction count (ties by
// node index) and capped at max_neighbors.
std::vector<std::size_t> two_hop_neighbors(const CrossDomainGraph& g, std::size_t user, Domain d,
                                           std::size_t max_neighbors = 64);

struct TwoHopIndex {
  // [domain][position in g.overlap_users] -> neighbour user nodes
  std::array<std::vector<std::vector<std::size_t>>, 2> neighbors;
};
TwoHopIndex build_two_hop_index(const CrossDomainGraph& g, std::size_t max_neighbors = 64);

// Trainable map from features (or free vectors) to the initial node table E0.
struct EmbeddingParams {
  bool free = false;
  Tensor table;                  // free: node_count x D
  Tensor user_map;               // feature_dim x D, shared by both domains
  std::array<Tensor, 2> item_map;

  static EmbeddingParams init(const CrossDomainGraph& g, std::size_t dim, bool free, std::mt19937_64& rng);
  void register_into(ParamSet& params) const;
};

Tensor initial_embeddings(const CrossDomainGraph& g, const EmbeddingParams& p);

// Fan-in scaled normal init, sqrt(2 / fan_in).
Tensor kaiming_normal(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace coast
