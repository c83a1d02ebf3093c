#include "coast/xgraph.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "coast/errors.hpp"
#include "support/fixtures.hpp"

namespace coast {
namespace {

using fixture::Link;

CrossDomainGraph graph_of(const Dataset& ds, const GraphOptions& opt = {}) {
  const TrainingSet train(ds, fixture::no_holdout(ds));
  return build_graph(ds, train, opt);
}

TEST(Merge, SingleDomainPassesThroughAndOverlapTakesMax) {
  const std::vector<double> s{0.5, -1.0, 2.0}, t{0.1, 0.3, -4.0};
  EXPECT_EQ(merge_user_embedding(std::span<const double>(s), std::nullopt), s);
  EXPECT_EQ(merge_user_embedding(std::nullopt, std::span<const double>(t)), t);
  EXPECT_EQ(merge_user_embedding(std::span<const double>(s), std::span<const double>(t)),
            (std::vector<double>{0.5, 0.3, 2.0}));
  EXPECT_THROW(merge_user_embedding(std::nullopt, std::nullopt), ContractError);
  const std::vector<double> shorter{1.0};
  EXPECT_THROW(merge_user_embedding(std::span<const double>(s), std::span<const double>(shorter)), DimensionError);
}

TEST(Graph, StarWeights) {
  // One user with two S items, each item seen by that user only.
  const Dataset ds = fixture::dataset({{"u", "a", Domain::kSource}, {"u", "b", Domain::kSource}});
  const auto g = graph_of(ds);
  ASSERT_EQ(g.node_count, 3u);
  EXPECT_NEAR(g.laplacian->coeff(0, 1), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(g.laplacian->coeff(2, 0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(g.laplacian->coeff(1, 2), 0.0);
}

TEST(Graph, WeightsMatchPerEdgeNormalizer) {
  const auto links = fixture::random_links(30, 25, 20, 40, 35, 6, 7);
  const Dataset ds = fixture::dataset(links);
  const auto g = graph_of(ds);

  // Oracle degrees straight from the link list.
  std::map<std::string, std::size_t> user_deg;
  std::map<std::pair<int, std::string>, std::size_t> item_deg;
  for (const auto& l : links) {
    ++user_deg[l.user];
    ++item_deg[{static_cast<int>(l.domain), l.item}];
  }
  std::size_t checked = 0;
  for (const auto& l : links) {
    const auto u = *ds.find_user(l.user);
    const auto i = *ds.find_item(l.domain, l.item);
    const std::size_t a = g.user_node[index_of(l.domain)][u];
    const std::size_t b = g.item_node(l.domain, i);
    const double nv_s = l.domain == Domain::kSource ? static_cast<double>(item_deg[{0, l.item}]) : 0.0;
    const double nv_t = l.domain == Domain::kTarget ? static_cast<double>(item_deg[{1, l.item}]) : 0.0;
    const double expected =
        1.0 / std::sqrt(static_cast<double>(user_deg[l.user]) * std::max(nv_s, 1.0) * std::max(nv_t, 1.0));
    EXPECT_NEAR(g.laplacian->coeff(a, b), expected, 1e-14);
    EXPECT_NEAR(g.laplacian->coeff(b, a), expected, 1e-14);
    EXPECT_NEAR(g.type_laplacian[index_of(l.domain)]->coeff(a, b), expected, 1e-14);
    EXPECT_EQ(g.type_laplacian[index_of(other(l.domain))]->coeff(a, b), 0.0);
    ++checked;
  }
  EXPECT_EQ(checked, links.size());
  EXPECT_EQ(g.laplacian->nnz(), 2 * links.size());
}

TEST(Graph, SymmetricAndBlockPure) {
  const Dataset ds = fixture::dataset(fixture::random_links(15, 12, 10, 20, 18, 4, 3));
  const auto g = graph_of(ds);
  for (Domain d : kDomains) {
    const auto& m = *g.type_laplacian[index_of(d)];
    const std::size_t lo = g.item_offset[index_of(d)], hi = lo + g.item_count[index_of(d)];
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t k = m.row_ptr()[r]; k < m.row_ptr()[r + 1]; ++k) {
        const std::size_t c = m.col_idx()[k];
        EXPECT_EQ(m.values()[k], m.coeff(c, r));
        // Every typed edge joins a user node and an item of that domain.
        const bool user_item = r < g.user_nodes && c >= lo && c < hi;
        const bool item_user = c < g.user_nodes && r >= lo && r < hi;
        EXPECT_TRUE(user_item || item_user) << r << "," << c;
      }
    }
  }
  for (std::size_t r = 0; r < g.node_count; ++r)
    for (std::size_t c = 0; c < g.node_count; ++c)
      EXPECT_EQ(g.laplacian->coeff(r, c),
                g.type_laplacian[0]->coeff(r, c) + g.type_laplacian[1]->coeff(r, c));
}

TEST(Graph, OverlapUsersShareOneNode) {
  const Dataset ds = fixture::dataset(fixture::random_links(5, 5, 4, 10, 10, 3, 11));
  const auto g = graph_of(ds);
  EXPECT_EQ(g.overlap_users.size(), 4u);
  EXPECT_EQ(g.user_nodes, ds.user_count());
  for (std::size_t u : g.overlap_users) {
    EXPECT_EQ(g.user_node[0][u], g.user_node[1][u]);
    const auto [a, b] = g.prediction_nodes(Domain::kTarget, u);
    EXPECT_EQ(a, b);
  }
}

TEST(Graph, SeparateDomainsSplitsOverlapUsersAndMergesAtPrediction) {
  const Dataset ds = fixture::dataset(fixture::random_links(5, 5, 4, 10, 10, 3, 11));
  GraphOptions opt;
  opt.separate_domains = true;
  const auto g = graph_of(ds, opt);
  EXPECT_EQ(g.user_nodes, ds.user_count() + 4);
  EXPECT_EQ(g.overlap_users.size(), 4u);
  for (std::size_t u : g.overlap_users) {
    ASSERT_NE(g.user_node[0][u], g.user_node[1][u]);
    const auto [a, b] = g.prediction_nodes(Domain::kSource, u);
    EXPECT_EQ(a, g.user_node[0][u]);
    EXPECT_EQ(b, g.user_node[1][u]);
    // No edge links the two presences, directly or through a shared item.
    for (std::size_t item : g.adjacency[a]) EXPECT_EQ(g.item_domain(item), Domain::kSource);
    for (std::size_t item : g.adjacency[b]) EXPECT_EQ(g.item_domain(item), Domain::kTarget);
  }
}

TEST(Graph, SeveredUsersBecomeIndependent) {
  const Dataset ds = fixture::dataset(fixture::random_links(5, 5, 4, 10, 10, 3, 11));
  const auto overlap = ds.overlap_users();
  GraphOptions opt;
  opt.severed_users = {overlap[1], overlap[3]};
  const auto g = graph_of(ds, opt);
  EXPECT_EQ(g.overlap_users, (std::vector<std::size_t>{overlap[0], overlap[2]}));
  for (std::size_t u : opt.severed_users) {
    EXPECT_FALSE(g.is_overlap[u]);
    EXPECT_NE(g.user_node[0][u], g.user_node[1][u]);
    const auto [a, b] = g.prediction_nodes(Domain::kTarget, u);
    EXPECT_EQ(a, b);
  }
}

TEST(Graph, HeldOutEdgesAreAbsent) {
  const Dataset ds = fixture::dataset(
      {{"u", "a", Domain::kSource}, {"u", "b", Domain::kSource}, {"v", "a", Domain::kSource}, {"v", "b", Domain::kSource}});
  SplitPlan split = fixture::no_holdout(ds);
  split.cases.push_back({0, Domain::kSource, 1, {}});
  const TrainingSet train(ds, split);
  const auto g = build_graph(ds, train);
  EXPECT_FALSE(g.has_edge(g.user_node[0][0], g.item_node(Domain::kSource, 1)));
  EXPECT_TRUE(g.has_edge(g.user_node[0][1], g.item_node(Domain::kSource, 1)));
  EXPECT_EQ(g.edges[0].size(), 3u);
}

TEST(TwoHop, MatchesBruteForceAndCap) {
  // About 200 nodes: 60 overlap users plus single-domain users and items.
  const auto links = fixture::random_links(30, 30, 60, 40, 40, 5, 21);
  const Dataset ds = fixture::dataset(links);
  const auto g = graph_of(ds);
  ASSERT_GE(g.node_count, 190u);
  for (std::size_t cap : {std::size_t{3}, std::size_t{64}}) {
    for (Domain d : kDomains) {
      for (std::size_t u : g.overlap_users) {
        // Oracle: co-interaction counts from the dataset's own item lists.
        const auto& dd = ds.domain(d);
        std::map<std::size_t, std::size_t> co;
        for (std::size_t item : dd.user_items[u])
          for (std::size_t w : dd.item_users[item])
            if (w != u) ++co[g.user_node[index_of(d)][w]];
        std::vector<std::pair<std::size_t, std::size_t>> ranked(co.begin(), co.end());
        std::stable_sort(ranked.begin(), ranked.end(), [](auto a, auto b) { return a.second > b.second; });
        std::vector<std::size_t> expected;
        for (std::size_t k = 0; k < std::min(cap, ranked.size()); ++k) expected.push_back(ranked[k].first);
        EXPECT_EQ(two_hop_neighbors(g, u, d, cap), expected);
      }
    }
  }
  const auto index = build_two_hop_index(g, 3);
  for (Domain d : kDomains)
    for (const auto& list : index.neighbors[index_of(d)]) EXPECT_LE(list.size(), 3u);
}

TEST(Embedding, FeatureUsersTakeMaxOfBothProjections) {
  const Dataset ds = fixture::dataset(fixture::random_links(3, 3, 3, 6, 6, 2, 5));
  const auto g = graph_of(ds);
  std::mt19937_64 rng(4);
  const auto p = EmbeddingParams::init(g, 5, false, rng);
  const Tensor e0 = initial_embeddings(g, p);
  ASSERT_EQ(e0.shape(), (Shape{g.node_count, 5}));
  const auto w = p.user_map.data();
  for (std::size_t u = 0; u < ds.user_count(); ++u) {
    std::optional<std::vector<double>> proj[2];
    for (Domain d : kDomains) {
      if (!ds.in_domain(u, d)) continue;
      const auto f = ds.domain(d).user_features.row(u);
      std::vector<double> out(5, 0.0);
      for (std::size_t k = 0; k < f.size(); ++k)
        for (std::size_t j = 0; j < 5; ++j) out[j] += f[k] * w[k * 5 + j];
      proj[index_of(d)] = out;
    }
    const auto s = proj[0] ? std::optional<std::span<const double>>(*proj[0]) : std::nullopt;
    const auto t = proj[1] ? std::optional<std::span<const double>>(*proj[1]) : std::nullopt;
    const auto expected = merge_user_embedding(s, t);
    const std::size_t node = g.user_node[ds.in_domain(u, Domain::kSource) ? 0 : 1][u];
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(e0.data()[node * 5 + j], expected[j], 1e-12);
  }
}

}  // namespace
}  // namespace coast
