#include "coast/xgraph.hpp"

#include <algorithm>
#include <cmath>

#include "coast/errors.hpp"

namespace coast {

std::vector<double> merge_user_embedding(std::optional<std::span<const double>> e_s,
                                         std::optional<std::span<const double>> e_t) {
  if (!e_s && !e_t) throw ContractError("merge_user_embedding: user has no embedding in either domain");
  if (!e_t) return {e_s->begin(), e_s->end()};
  if (!e_s) return {e_t->begin(), e_t->end()};
  if (e_s->size() != e_t->size()) throw DimensionError("merge_user_embedding: embedding lengths differ");
  std::vector<double> out(e_s->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max((*e_s)[i], (*e_t)[i]);
  return out;
}

bool CrossDomainGraph::has_edge(std::size_t a, std::size_t b) const {
  const auto& adj = adjacency.at(a);
  return std::binary_search(adj.begin(), adj.end(), b);
}

double CrossDomainGraph::edge_weight(std::size_t a, std::size_t b) const {
  if (!has_edge(a, b)) return 0.0;
  return 1.0 / std::sqrt(static_cast<double>(degree[a]) * static_cast<double>(degree[b]));
}

std::pair<std::size_t, std::size_t> CrossDomainGraph::prediction_nodes(Domain d, std::size_t user) const {
  const std::size_t own = user_node[index_of(d)].at(user);
  if (own == kNoNode) throw ContractError("user has no node in the requested domain");
  const std::size_t other_node = user_node[index_of(other(d))][user];
  if (other_node == own || other_node == kNoNode || !merge_presences || !is_overlap[user]) return {own, own};
  return {own, other_node};
}

nlohmann::json CrossDomainGraph::stats() const {
  return {{"nodes", node_count},
          {"user_nodes", user_nodes},
          {"overlap_users", overlap_users.size()},
          {"items", {{"S", item_count[0]}, {"T", item_count[1]}}},
          {"edges", {{"S", edges[0].size()}, {"T", edges[1].size()}}}};
}

CrossDomainGraph build_graph(const Dataset& ds, const TrainingSet& train, const GraphOptions& options) {
  const std::size_t n_users = ds.user_count();
  for (Domain d : kDomains) {
    const auto& dd = ds.domain(d);
    for (std::size_t i = 0; i < dd.item_count(); ++i)
      if (dd.item_users[i].empty()) throw ContractError("item " + dd.item_ids[i] + " has no interactions");
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    if (ds.domain(Domain::kSource).user_items[u].empty() && ds.domain(Domain::kTarget).user_items[u].empty()) {
      throw ContractError("user " + ds.user_ids[u] + " has no interactions");
    }
  }

  CrossDomainGraph g;
  std::vector<bool> severed(n_users, false);
  for (std::size_t u : options.severed_users) severed.at(u) = true;
  g.merge_presences = options.separate_domains;

  g.is_overlap.assign(n_users, false);
  for (Domain d : kDomains) g.user_node[index_of(d)].assign(n_users, kNoNode);
  for (std::size_t u = 0; u < n_users; ++u) {
    const bool in_s = ds.in_domain(u, Domain::kSource);
    const bool in_t = ds.in_domain(u, Domain::kTarget);
    if (in_s && in_t && !severed[u]) {
      g.is_overlap[u] = true;
      g.overlap_users.push_back(u);
      if (!options.separate_domains) {
        g.user_node[0][u] = g.user_node[1][u] = g.node_user.size();
        g.node_user.push_back(u);
        continue;
      }
    }
    for (Domain d : kDomains) {
      if (!ds.in_domain(u, d)) continue;
      g.user_node[index_of(d)][u] = g.node_user.size();
      g.node_user.push_back(u);
    }
  }
  g.user_nodes = g.node_user.size();
  g.item_count = {ds.domain(Domain::kSource).item_count(), ds.domain(Domain::kTarget).item_count()};
  g.item_offset = {g.user_nodes, g.user_nodes + g.item_count[0]};
  g.node_count = g.user_nodes + g.item_count[0] + g.item_count[1];

  g.adjacency.assign(g.node_count, {});
  for (const auto& p : train.positives()) {
    const std::size_t a = g.user_node[index_of(p.domain)][p.user];
    const std::size_t b = g.item_node(p.domain, p.item);
    g.edges[index_of(p.domain)].emplace_back(a, b);
    g.adjacency[a].push_back(b);
    g.adjacency[b].push_back(a);
  }
  for (auto& es : g.edges) std::sort(es.begin(), es.end());
  for (auto& adj : g.adjacency) std::sort(adj.begin(), adj.end());

  g.degree.assign(g.node_count, 0);
  for (Domain d : kDomains) g.type_degree[index_of(d)].assign(g.node_count, 0);
  for (Domain d : kDomains) {
    for (const auto& [a, b] : g.edges[index_of(d)]) {
      ++g.degree[a];
      ++g.degree[b];
      ++g.type_degree[index_of(d)][a];
      ++g.type_degree[index_of(d)][b];
    }
  }

  std::vector<SparseMatrix::Triplet> all;
  for (Domain d : kDomains) {
    std::vector<SparseMatrix::Triplet> typed;
    for (const auto& [a, b] : g.edges[index_of(d)]) {
      const double w = 1.0 / std::sqrt(static_cast<double>(g.degree[a]) * static_cast<double>(g.degree[b]));
      typed.push_back({a, b, w});
      typed.push_back({b, a, w});
    }
    all.insert(all.end(), typed.begin(), typed.end());
    g.type_laplacian[index_of(d)] = SparseMatrix::from_triplets(g.node_count, g.node_count, std::move(typed));
  }
  g.laplacian = SparseMatrix::from_triplets(g.node_count, g.node_count, std::move(all));

  // Initial-embedding inputs.
  g.feature_dim = ds.feature_dim;
  {
    std::vector<double> stacked;
    stacked.reserve(2 * n_users * ds.feature_dim);
    for (Domain d : kDomains) {
      const auto& v = ds.domain(d).user_features.values;
      stacked.insert(stacked.end(), v.begin(), v.end());
    }
    g.user_features = Tensor::from_data({2 * n_users, ds.feature_dim}, std::move(stacked));
  }
  for (Domain d : kDomains) {
    const auto& f = ds.domain(d).item_features;
    g.item_features[index_of(d)] = Tensor::from_data({f.rows, ds.feature_dim}, f.values);
  }
  g.user_pick_a.resize(g.user_nodes);
  g.user_pick_b.resize(g.user_nodes);
  for (std::size_t n = 0; n < g.user_nodes; ++n) {
    const std::size_t u = g.node_user[n];
    const std::size_t s_row = u, t_row = n_users + u;
    const bool owns_s = g.user_node[0][u] == n;
    const bool owns_t = g.user_node[1][u] == n;
    g.user_pick_a[n] = owns_s ? s_row : t_row;
    g.user_pick_b[n] = owns_t ? t_row : s_row;
  }
  return g;
}

std::vector<std::size_t> two_hop_neighbors(const CrossDomainGraph& g, std::size_t user, Domain d,
                                           std::size_t max_neighbors) {
  const std::size_t self = g.user_node[index_of(d)].at(user);
  if (self == kNoNode) return {};
  std::vector<std::pair<std::size_t, std::size_t>> counts;  // (node, co-count)
  std::vector<std::size_t> slot(g.user_nodes, kNoNode);
  const std::size_t lo = g.item_offset[index_of(d)];
  const std::size_t hi = lo + g.item_count[index_of(d)];
  for (std::size_t item : g.adjacency[self]) {
    if (item < lo || item >= hi) continue;
    for (std::size_t w : g.adjacency[item]) {
      if (w == self) continue;
      if (slot[w] == kNoNode) {
        slot[w] = counts.size();
        counts.emplace_back(w, 0);
      }
      ++counts[slot[w]].second;
    }
  }
  std::sort(counts.begin(), counts.end(),
            [](const auto& a, const auto& b) { return a.second != b.second ? a.second > b.second : a.first < b.first; });
  if (counts.size() > max_neighbors) counts.resize(max_neighbors);
  std::vector<std::size_t> out;
  out.reserve(counts.size());
  for (const auto& [w, _] : counts) out.push_back(w);
  return out;
}

TwoHopIndex build_two_hop_index(const CrossDomainGraph& g, std::size_t max_neighbors) {
  TwoHopIndex index;
  for (Domain d : kDomains) {
    auto& lists = index.neighbors[index_of(d)];
    lists.reserve(g.overlap_users.size());
    for (std::size_t u : g.overlap_users) lists.push_back(two_hop_neighbors(g, u, d, max_neighbors));
  }
  return index;
}

Tensor kaiming_normal(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = n(rng);
  return Tensor::from_data({fan_in, fan_out}, std::move(v), true);
}

EmbeddingParams EmbeddingParams::init(const CrossDomainGraph& g, std::size_t dim, bool free, std::mt19937_64& rng) {
  EmbeddingParams p;
  p.free = free;
  if (free) {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    std::vector<double> v(g.node_count * dim);
    for (auto& x : v) x = n(rng);
    p.table = Tensor::from_data({g.node_count, dim}, std::move(v), true);
    return p;
  }
  p.user_map = kaiming_normal(g.feature_dim, dim, rng);
  for (auto& m : p.item_map) m = kaiming_normal(g.feature_dim, dim, rng);
  return p;
}

void EmbeddingParams::register_into(ParamSet& params) const {
  if (free) {
    params.add("embed.table", table);
    return;
  }
  params.add("embed.user", user_map);
  params.add("embed.item_S", item_map[0]);
  params.add("embed.item_T", item_map[1]);
}

Tensor initial_embeddings(const CrossDomainGraph& g, const EmbeddingParams& p) {
  if (p.free) return p.table;
  const Tensor projected = matmul(g.user_features, p.user_map);
  const Tensor users = maximum(gather_rows(projected, g.user_pick_a), gather_rows(projected, g.user_pick_b));
  const std::array<Tensor, 3> parts{users, matmul(g.item_features[0], p.item_map[0]),
                                    matmul(g.item_features[1], p.item_map[1])};
  return concat_rows(parts);
}

}  // namespace coast
