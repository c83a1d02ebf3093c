#pragma once

// Small datasets shared by the model tests.

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "coast/dataio.hpp"

namespace coast::fixture {

struct Link {
  std::string user;
  std::string item;
  Domain domain;
};

// No filtering, id-hash features of width 8.
inline Dataset dataset(const std::vector<Link>& links) {
  std::vector<Interaction> xs;
  for (const auto& l : links) xs.push_back({l.user, l.item, l.domain, 1.0, std::nullopt});
  LoadOptions opt;
  opt.min_interactions = 1;
  opt.fallback_dim = 8;
  return build_dataset(std::move(xs), {}, opt);
}

// Every observed edge is a training positive.
inline SplitPlan no_holdout(const Dataset& ds) {
  SplitPlan p;
  p.dataset_hash = ds.hash();
  return p;
}

// Random bipartite links: each user draws `per_user` distinct items of a
// domain. Users [0, overlap) appear in both domains.
inline std::vector<Link> random_links(std::size_t s_only, std::size_t t_only, std::size_t overlap,
                                      std::size_t s_items, std::size_t t_items, std::size_t per_user,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Link> out;
  auto draw = [&](const std::string& user, Domain d, std::size_t items) {
    std::vector<std::size_t> pool(items);
    for (std::size_t i = 0; i < items; ++i) pool[i] = i;
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::string prefix = d == Domain::kSource ? "s" : "t";
    for (std::size_t k = 0; k < std::min(per_user, items); ++k) out.push_back({user, prefix + std::to_string(pool[k]), d});
  };
  std::size_t id = 0;
  for (std::size_t u = 0; u < overlap; ++u, ++id) {
    draw("u" + std::to_string(id), Domain::kSource, s_items);
    draw("u" + std::to_string(id), Domain::kTarget, t_items);
  }
  for (std::size_t u = 0; u < s_only; ++u, ++id) draw("u" + std::to_string(id), Domain::kSource, s_items);
  for (std::size_t u = 0; u < t_only; ++u, ++id) draw("u" + std::to_string(id), Domain::kTarget, t_items);
  return out;
}

}  // namespace coast::fixture
