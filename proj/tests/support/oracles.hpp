#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run. Plain loops only; nothing here calls the code under test
// except to read graph structure and inputs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "coast/engine.hpp"
#include "coast/gcn.hpp"
#include "coast/xgraph.hpp"

namespace coast::oracle {

inline Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(r * c);
  for (auto& x : v) x = u(rng);
  return Tensor::from_data({r, c}, std::move(v), requires_grad);
}

inline Tensor unit_rows(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  return row_l2_normalize(random_matrix(r, c, rng));
}

inline std::vector<double> vec_mat(std::span<const double> x, const Tensor& w) {
  std::vector<double> y(w.cols(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k)
    for (std::size_t j = 0; j < w.cols(); ++j) y[j] += x[k] * w.data()[k * w.cols() + j];
  return y;
}

// One GCN layer evaluated node by node from the message-passing definition.
// Degrees and neighbourhoods come from the graph's edge lists only.
inline std::vector<double> gcn_layer(const CrossDomainGraph& g, const Tensor& e, const GcnLayer& layer, double alpha,
                                     bool interactions) {
  const std::size_t n = g.node_count, d = e.cols();
  std::vector<double> deg(n, 0.0);
  std::vector<std::vector<std::pair<std::size_t, Domain>>> nb(n);
  for (Domain dom : kDomains) {
    for (const auto& [a, b] : g.edges[index_of(dom)]) {
      deg[a] += 1;
      deg[b] += 1;
      nb[a].push_back({b, dom});
      nb[b].push_back({a, dom});
    }
  }
  std::vector<double> out(n * d);
  auto row = [&](std::size_t i) { return std::span<const double>(e.data()).subspan(i * d, d); };
  for (std::size_t u = 0; u < n; ++u) {
    std::vector<double> acc = vec_mat(row(u), layer.w1);
    for (const auto& [v, dom] : nb[u]) {
      const double w = 1.0 / std::sqrt(deg[u] * deg[v]);
      auto m = vec_mat(row(v), layer.w1);
      if (interactions) {
        std::vector<double> prod(d);
        for (std::size_t k = 0; k < d; ++k) prod[k] = row(v)[k] * row(u)[k];
        const auto t = vec_mat(prod, dom == Domain::kSource ? layer.w2 : layer.w3);
        for (std::size_t j = 0; j < d; ++j) m[j] += t[j];
      }
      for (std::size_t j = 0; j < d; ++j) acc[j] += w * m[j];
    }
    for (std::size_t j = 0; j < d; ++j) out[u * d + j] = acc[j] > 0 ? acc[j] : alpha * acc[j];
  }
  return out;
}

// Textbook Sinkhorn-Knopp on Q = exp(S / eps)^T (K x B), returned as B x K
// codes with rows summing to one.
inline std::vector<double> sinkhorn(const std::vector<double>& s, std::size_t b, std::size_t k, double eps,
                                    std::size_t iters) {
  std::vector<double> q(k * b);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j) total += q[j * b + i] = std::exp(s[i * k + j] / eps);
  for (auto& x : q) x /= total;
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t j = 0; j < k; ++j) {
      double r = 0.0;
      for (std::size_t i = 0; i < b; ++i) r += q[j * b + i];
      for (std::size_t i = 0; i < b; ++i) q[j * b + i] /= r * static_cast<double>(k);
    }
    for (std::size_t i = 0; i < b; ++i) {
      double c = 0.0;
      for (std::size_t j = 0; j < k; ++j) c += q[j * b + i];
      for (std::size_t j = 0; j < k; ++j) q[j * b + i] /= c * static_cast<double>(b);
    }
  }
  std::vector<double> out(b * k);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = q[j * b + i] * static_cast<double>(b);
  return out;
}

// Sort candidates by (score desc, item asc) and find the positive (index 0).
inline std::size_t rank(const std::vector<double>& scores, const std::vector<std::size_t>& items) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : items[a] < items[b];
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), 0) - order.begin()) + 1;
}

// Hand-planted score tables with coarse levels so ties are common.
struct PlantedCases {
  SplitPlan plan;
  std::vector<std::vector<double>> tables;  // indexed by TestCase::user
};

inline PlantedCases planted_cases(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 9);
  PlantedCases out;
  for (std::size_t c = 0; c < count; ++c) {
    TestCase tc;
    tc.user = c;
    tc.domain = c % 3 == 0 ? Domain::kTarget : Domain::kSource;
    std::vector<std::size_t> pool(200);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    tc.positive = pool[0];
    tc.negatives.assign(pool.begin() + 1, pool.begin() + 100);
    std::vector<double> t(100);
    for (auto& x : t) x = level(rng) / 10.0;
    out.plan.cases.push_back(tc);
    out.tables.push_back(t);
  }
  std::sort(out.plan.cases.begin(), out.plan.cases.end(), [](const TestCase& a, const TestCase& b) {
    return std::pair(a.domain, a.user) < std::pair(b.domain, b.user);
  });
  return out;
}

// Counts of hits and summed NDCG per cutoff, per domain, by brute force.
struct MetricSums {
  std::array<std::size_t, 2> cases{};
  std::array<std::array<double, kMaxCutoff>, 2> hit{}, ndcg{};
};

inline MetricSums brute_force_metrics(const PlantedCases& p) {
  MetricSums m;
  for (const auto& tc : p.plan.cases) {
    const std::size_t d = index_of(tc.domain);
    std::vector<std::size_t> items{tc.positive};
    items.insert(items.end(), tc.negatives.begin(), tc.negatives.end());
    const std::size_t r = rank(p.tables[tc.user], items);
    ++m.cases[d];
    for (std::size_t k = 1; k <= kMaxCutoff; ++k) {
      if (r <= k) {
        m.hit[d][k - 1] += 1;
        m.ndcg[d][k - 1] += 1.0 / std::log2(r + 1.0);
      }
    }
  }
  return m;
}

// Number of (domain, cutoff, metric) entries where the report disagrees with
// the brute-force oracle. Exact comparison.
inline std::size_t planted_mismatches(const PlantedCases& p, const EvalReport& report) {
  const MetricSums want = brute_force_metrics(p);
  std::size_t bad = 0;
  for (std::size_t d = 0; d < 2; ++d) {
    const auto& got = report.domains[d];
    if (got.test_cases != want.cases[d]) ++bad;
    const double n = static_cast<double>(want.cases[d]);
    for (std::size_t k = 0; k < kMaxCutoff; ++k) {
      if (got.hit[k] != want.hit[d][k] / n) ++bad;
      if (got.ndcg[k] != want.ndcg[d][k] / n) ++bad;
    }
  }
  return bad;
}

// 100 candidates per case with i.i.d. uniform scores.
inline EvalReport random_score_report(std::size_t trials) {
  SplitPlan plan;
  for (std::size_t c = 0; c < trials; ++c) {
    TestCase tc{c, Domain::kSource, 0, {}};
    for (std::size_t k = 1; k < 100; ++k) tc.negatives.push_back(k);
    plan.cases.push_back(tc);
  }
  return evaluate_with(plan, [](const TestCase& tc) {
    std::mt19937_64 rng(tc.user * 7919 + 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> s(100);
    for (auto& x : s) x = u(rng);
    return s;
  });
}

}  // namespace coast::oracle
