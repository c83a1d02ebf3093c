#include "coast/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "coast/errors.hpp"
#include "coast/util.hpp"

namespace coast {

namespace fs = std::filesystem;
using nlohmann::json;

// --- domains -----------------------------------------------------------------

std::string_view domain_tag(Domain d) { return d == Domain::kSource ? "S" : "T"; }

Domain parse_domain(std::string_view tag) {
  if (tag == "S" || tag == "s") return Domain::kSource;
  if (tag == "T" || tag == "t") return Domain::kTarget;
  throw InvalidArgumentError("unknown domain '" + std::string(tag) + "' (expected S or T)");
}

bool DomainData::has(std::size_t user, std::size_t item) const {
  if (user >= user_items.size()) return false;
  const auto& items = user_items[user];
  return std::binary_search(items.begin(), items.end(), item);
}

bool Dataset::in_domain(std::size_t user, Domain d) const {
  const UserRole r = roles.at(user);
  if (r == UserRole::kOverlap) return true;
  return d == Domain::kSource ? r == UserRole::kSourceOnly : r == UserRole::kTargetOnly;
}

std::vector<std::size_t> Dataset::overlap_users() const {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < roles.size(); ++u)
    if (roles[u] == UserRole::kOverlap) out.push_back(u);
  return out;
}

std::size_t Dataset::users_in(Domain d) const {
  std::size_t n = 0;
  for (std::size_t u = 0; u < roles.size(); ++u) n += in_domain(u, d) ? 1 : 0;
  return n;
}

std::optional<std::size_t> Dataset::find_user(std::string_view id) const {
  const auto it = std::lower_bound(user_ids.begin(), user_ids.end(), id);
  if (it == user_ids.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - user_ids.begin());
}

std::optional<std::size_t> Dataset::find_item(Domain d, std::string_view id) const {
  const auto& ids = domain(d).item_ids;
  const auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}

std::uint64_t Dataset::hash() const {
  Fnv1a h;
  h.u64(user_ids.size());
  for (std::size_t u = 0; u < user_ids.size(); ++u) {
    h.str(user_ids[u]);
    h.u64(static_cast<std::uint64_t>(roles[u]));
  }
  h.u64(feature_dim);
  for (const auto& d : domains) {
    h.u64(d.item_ids.size());
    for (const auto& id : d.item_ids) h.str(id);
    h.u64(d.edges.size());
    for (const auto& e : d.edges) {
      h.u64(e.user);
      h.u64(e.item);
      h.f64(e.rating);
      h.u64(e.timestamp ? static_cast<std::uint64_t>(*e.timestamp) : ~0ULL);
    }
    h.f64s(d.user_features.values);
    h.f64s(d.item_features.values);
  }
  return h.digest();
}

// --- parsing helpers ------------------------------------------------------------

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

template <class F>
void for_each_line(const fs::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    f(std::string_view(line), number);
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<Interaction> read_interactions(const fs::path& path) {
  std::vector<Interaction> out;
  const std::string file = path.string();
  for_each_line(path, [&](std::string_view line, std::size_t number) {
    const auto fields = split(line, '\t');
    if (fields.size() != 4 && fields.size() != 5) {
      throw ParseError(file, number, "expected 4 or 5 tab-separated fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty() || fields[1].empty()) throw ParseError(file, number, "empty user or item id");
    Interaction it;
    it.user = std::string(fields[0]);
    it.item = std::string(fields[1]);
    if (fields[2] == "S") {
      it.domain = Domain::kSource;
    } else if (fields[2] == "T") {
      it.domain = Domain::kTarget;
    } else {
      throw ParseError(file, number, "domain must be S or T");
    }
    const auto rating = parse_double(fields[3]);
    if (!rating) throw ParseError(file, number, "rating is not a number");
    it.rating = *rating;
    if (fields.size() == 5) {
      const auto ts = parse_int(fields[4]);
      if (!ts) throw ParseError(file, number, "timestamp is not an integer");
      it.timestamp = *ts;
    }
    out.push_back(std::move(it));
  });
  return out;
}

FeatureRows read_features(const fs::path& path) {
  FeatureRows out;
  const std::string file = path.string();
  std::optional<std::size_t> dim;
  for_each_line(path, [&](std::string_view line, std::size_t number) {
    const auto fields = split(line, '\t');
    if (fields.size() != 2 || fields[0].empty()) throw ParseError(file, number, "expected entity_id<TAB>f1,f2,...");
    std::vector<double> values;
    for (auto tok : split(fields[1], ',')) {
      const auto v = parse_double(tok);
      if (!v) throw ParseError(file, number, "feature value '" + std::string(tok) + "' is not a number");
      values.push_back(*v);
    }
    if (dim && *dim != values.size()) {
      throw ParseError(file, number,
                       "feature dim mismatch: " + std::to_string(values.size()) + " vs " + std::to_string(*dim));
    }
    dim = values.size();
    out.rows.emplace_back(std::string(fields[0]), std::move(values));
  });
  return out;
}

void write_interactions(const fs::path& path, std::span<const Interaction> interactions) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& it : interactions) {
    out << it.user << '\t' << it.item << '\t' << domain_tag(it.domain) << '\t' << format_double(it.rating);
    if (it.timestamp) out << '\t' << *it.timestamp;
    out << '\n';
  }
}

void write_features(const fs::path& path, const FeatureRows& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [id, values] : rows.rows) {
    out << id << '\t';
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << format_double(values[i]);
    out << '\n';
  }
}

// --- featurization -----------------------------------------------------------------

ColumnKind parse_column_kind(std::string_view kind) {
  if (kind == "numeric") return ColumnKind::kNumeric;
  if (kind == "categorical") return ColumnKind::kCategorical;
  if (kind == "text") return ColumnKind::kText;
  throw ConfigError("unknown attribute kind '" + std::string(kind) + "' (numeric|categorical|text)");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::size_t text_bucket(std::string_view token, std::size_t buckets) {
  if (buckets == 0) throw ConfigError("text bucket count must be positive");
  return static_cast<std::size_t>(fnv1a(token) % buckets);
}

std::vector<double> hashed_bag_of_words(std::string_view text, std::size_t buckets) {
  std::vector<double> v(buckets, 0.0);
  for (const auto& tok : tokenize(text)) v[text_bucket(tok, buckets)] += 1.0;
  const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  if (norm > 0.0)
    for (auto& x : v) x /= norm;
  return v;
}

std::vector<std::vector<double>> featurize(std::span<const ColumnSpec> schema,
                                           std::span<const std::vector<std::string>> rows,
                                           const FeaturizeOptions& options) {
  for (const auto& row : rows) {
    if (row.size() != schema.size()) {
      throw DimensionError("attribute row has " + std::to_string(row.size()) + " columns, schema declares " +
                           std::to_string(schema.size()));
    }
  }
  std::vector<std::vector<double>> out(rows.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    switch (schema[c].kind) {
      case ColumnKind::kNumeric: {
        std::vector<double> vals(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const auto v = parse_double(rows[r][c]);
          if (!v) throw ConfigError("column " + schema[c].name + ": '" + rows[r][c] + "' is not numeric");
          vals[r] = *v;
        }
        const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
        const double lo_v = vals.empty() ? 0.0 : *lo;
        const double span = vals.empty() ? 0.0 : *hi - *lo;
        for (std::size_t r = 0; r < rows.size(); ++r) out[r].push_back(span > 0.0 ? (vals[r] - lo_v) / span : 0.0);
        break;
      }
      case ColumnKind::kCategorical: {
        std::set<std::string> levels;
        for (const auto& row : rows) levels.insert(row[c]);
        const std::vector<std::string> ordered(levels.begin(), levels.end());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const auto pos = std::lower_bound(ordered.begin(), ordered.end(), rows[r][c]) - ordered.begin();
          for (std::size_t l = 0; l < ordered.size(); ++l) out[r].push_back(static_cast<std::ptrdiff_t>(l) == pos);
        }
        break;
      }
      case ColumnKind::kText: {
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const auto v = hashed_bag_of_words(rows[r][c], options.text_buckets);
          out[r].insert(out[r].end(), v.begin(), v.end());
        }
        break;
      }
    }
  }
  for (auto& v : out) v.resize(options.dim, 0.0);
  return out;
}

// --- dataset construction ------------------------------------------------------------

namespace {

struct EdgeKey {
  std::string user;
  std::string item;
  Domain domain;
  bool operator==(const EdgeKey&) const = default;
};

struct EdgeKeyHash {
  std::size_t operator()(const EdgeKey& k) const {
    Fnv1a h;
    h.str(k.user);
    h.str(k.item);
    h.u64(static_cast<std::uint64_t>(k.domain));
    return static_cast<std::size_t>(h.digest());
  }
};

std::vector<Interaction> deduplicate(std::vector<Interaction> interactions) {
  std::unordered_map<EdgeKey, std::size_t, EdgeKeyHash> seen;
  seen.reserve(interactions.size());
  std::vector<Interaction> out;
  out.reserve(interactions.size());
  for (auto& it : interactions) {
    EdgeKey key{it.user, it.item, it.domain};
    auto [pos, inserted] = seen.try_emplace(std::move(key), out.size());
    if (inserted) {
      out.push_back(std::move(it));
      continue;
    }
    auto& kept = out[pos->second];
    kept.rating = std::max(kept.rating, it.rating);
    if (it.timestamp && (!kept.timestamp || *it.timestamp > *kept.timestamp)) kept.timestamp = it.timestamp;
  }
  return out;
}

// Removes (user, domain) and item entries below the threshold until nothing changes.
std::vector<Interaction> filter_to_fixpoint(std::vector<Interaction> interactions, std::size_t min_count) {
  while (true) {
    std::array<std::unordered_map<std::string_view, std::size_t>, 2> user_count;
    std::array<std::unordered_map<std::string_view, std::size_t>, 2> item_count;
    for (const auto& it : interactions) {
      ++user_count[index_of(it.domain)][it.user];
      ++item_count[index_of(it.domain)][it.item];
    }
    std::vector<Interaction> kept;
    kept.reserve(interactions.size());
    for (const auto& it : interactions) {
      const std::size_t d = index_of(it.domain);
      if (user_count[d][it.user] >= min_count && item_count[d][it.item] >= min_count) kept.push_back(it);
    }
    if (kept.size() == interactions.size()) return kept;
    interactions = std::move(kept);
  }
}

class FeatureLookup {
 public:
  explicit FeatureLookup(const std::optional<FeatureRows>& rows) {
    if (!rows) return;
    for (const auto& [id, values] : rows->rows) {
      index_.emplace(id, &values);
      dim_ = values.size();
    }
  }
  const std::vector<double>* find(const std::string& id) const {
    const auto it = index_.find(id);
    return it == index_.end() ? nullptr : it->second;
  }
  std::optional<std::size_t> dim() const { return index_.empty() ? std::nullopt : std::optional(dim_); }

 private:
  std::unordered_map<std::string, const std::vector<double>*> index_;
  std::size_t dim_ = 0;
};

}  // namespace

Dataset build_dataset(std::vector<Interaction> interactions, const RawFeatures& features, const LoadOptions& options) {
  if (options.min_interactions == 0) throw ConfigError("min_interactions must be positive");
  interactions = filter_to_fixpoint(deduplicate(std::move(interactions)), options.min_interactions);

  Dataset ds;
  {
    std::set<std::string> users;
    std::array<std::set<std::string>, 2> items;
    for (const auto& it : interactions) {
      users.insert(it.user);
      items[index_of(it.domain)].insert(it.item);
    }
    ds.user_ids.assign(users.begin(), users.end());
    for (Domain d : kDomains) ds.domain(d).item_ids.assign(items[index_of(d)].begin(), items[index_of(d)].end());
  }
  const std::size_t n_users = ds.user_ids.size();

  std::array<std::pair<double, double>, 2> rating_range{};
  for (Domain d : kDomains) rating_range[index_of(d)] = {INFINITY, -INFINITY};
  for (const auto& it : interactions) {
    auto& [lo, hi] = rating_range[index_of(it.domain)];
    lo = std::min(lo, it.rating);
    hi = std::max(hi, it.rating);
  }

  for (Domain d : kDomains) {
    auto& dd = ds.domain(d);
    dd.user_items.assign(n_users, {});
    dd.item_users.assign(dd.item_ids.size(), {});
  }
  for (const auto& it : interactions) {
    auto& dd = ds.domain(it.domain);
    Edge e;
    e.user = *ds.find_user(it.user);
    e.item = *ds.find_item(it.domain, it.item);
    const auto [lo, hi] = rating_range[index_of(it.domain)];
    e.rating = hi > lo ? (it.rating - lo) / (hi - lo) : 1.0;
    e.timestamp = it.timestamp;
    dd.edges.push_back(e);
  }
  for (Domain d : kDomains) {
    auto& dd = ds.domain(d);
    std::sort(dd.edges.begin(), dd.edges.end(),
              [](const Edge& a, const Edge& b) { return a.user != b.user ? a.user < b.user : a.item < b.item; });
    for (const auto& e : dd.edges) {
      dd.user_items[e.user].push_back(e.item);
      dd.item_users[e.item].push_back(e.user);
    }
    for (auto& us : dd.item_users) std::sort(us.begin(), us.end());
  }

  ds.roles.resize(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    const bool s = !ds.domain(Domain::kSource).user_items[u].empty();
    const bool t = !ds.domain(Domain::kTarget).user_items[u].empty();
    ds.roles[u] = s && t ? UserRole::kOverlap : (s ? UserRole::kSourceOnly : UserRole::kTargetOnly);
  }

  // Features.
  const FeatureLookup shared_users(features.users);
  const std::array<FeatureLookup, 2> users_by_domain{FeatureLookup(features.users_by_domain[0]),
                                                      FeatureLookup(features.users_by_domain[1])};
  const std::array<FeatureLookup, 2> items{FeatureLookup(features.items[0]), FeatureLookup(features.items[1])};
  std::optional<std::size_t> dim;
  auto check_dim = [&](std::optional<std::size_t> d, const char* what) {
    if (!d) return;
    if (dim && *dim != *d) {
      throw DimensionError(std::string("feature dim mismatch in ") + what + ": " + std::to_string(*d) + " vs " +
                           std::to_string(*dim));
    }
    dim = d;
  };
  check_dim(shared_users.dim(), "user features");
  for (std::size_t d = 0; d < 2; ++d) {
    check_dim(users_by_domain[d].dim(), "per-domain user features");
    check_dim(items[d].dim(), "item features");
  }
  ds.feature_dim = dim.value_or(options.fallback_dim);

  auto resolve = [&](const std::string& id, std::initializer_list<const FeatureLookup*> sources,
                     const char* what) -> std::vector<double> {
    for (const auto* src : sources)
      if (const auto* v = src->find(id)) return *v;
    if (!options.fallback_features) {
      throw ConfigError(std::string("no ") + what + " features for '" + id + "' and fallback featurizer is disabled");
    }
    return hashed_bag_of_words(id, ds.feature_dim);
  };

  for (Domain d : kDomains) {
    auto& dd = ds.domain(d);
    dd.user_features = FeatureMatrix{n_users, ds.feature_dim, std::vector<double>(n_users * ds.feature_dim, 0.0)};
    for (std::size_t u = 0; u < n_users; ++u) {
      if (!ds.in_domain(u, d)) continue;
      const auto v = resolve(ds.user_ids[u], {&users_by_domain[index_of(d)], &shared_users}, "user");
      std::copy(v.begin(), v.end(), dd.user_features.row(u).begin());
    }
    const std::size_t n_items = dd.item_ids.size();
    dd.item_features = FeatureMatrix{n_items, ds.feature_dim, std::vector<double>(n_items * ds.feature_dim, 0.0)};
    for (std::size_t i = 0; i < n_items; ++i) {
      const auto v = resolve(dd.item_ids[i], {&items[index_of(d)]}, "item");
      std::copy(v.begin(), v.end(), dd.item_features.row(i).begin());
    }
  }
  return ds;
}

Dataset load_dataset(const fs::path& interactions, const FeatureSources& features, const LoadOptions& options) {
  RawFeatures raw;
  if (features.users) raw.users = read_features(*features.users);
  for (std::size_t d = 0; d < 2; ++d) {
    if (features.users_by_domain[d]) raw.users_by_domain[d] = read_features(*features.users_by_domain[d]);
    if (features.items[d]) raw.items[d] = read_features(*features.items[d]);
  }
  return build_dataset(read_interactions(interactions), raw, options);
}

Dataset load_dataset_dir(const fs::path& dir, const LoadOptions& options) {
  auto optional_file = [&](const char* name) -> std::optional<fs::path> {
    const fs::path p = dir / name;
    return fs::exists(p) ? std::optional(p) : std::nullopt;
  };
  FeatureSources src;
  src.users = optional_file("user_features.tsv");
  src.users_by_domain = {optional_file("user_features_S.tsv"), optional_file("user_features_T.tsv")};
  src.items = {optional_file("item_features_S.tsv"), optional_file("item_features_T.tsv")};
  return load_dataset(dir / "interactions.tsv", src, options);
}

// --- splits -------------------------------------------------------------------------

std::uint64_t SplitPlan::hash() const {
  Fnv1a h;
  h.u64(seed);
  h.u64(dataset_hash);
  h.u64(cases.size());
  for (const auto& c : cases) {
    h.u64(c.user);
    h.u64(static_cast<std::uint64_t>(c.domain));
    h.u64(c.positive);
    h.u64(c.negatives.size());
    for (auto n : c.negatives) h.u64(n);
  }
  for (const auto& ex : excluded_users) {
    h.u64(ex.size());
    for (auto u : ex) h.u64(u);
  }
  return h.digest();
}

json SplitPlan::to_json(const Dataset& ds) const {
  json cases_json = json::array();
  for (const auto& c : cases) {
    const auto& items = ds.domain(c.domain).item_ids;
    json negs = json::array();
    for (auto n : c.negatives) negs.push_back(items.at(n));
    cases_json.push_back({{"user", ds.user_ids.at(c.user)},
                          {"domain", domain_tag(c.domain)},
                          {"positive", items.at(c.positive)},
                          {"negatives", negs}});
  }
  json excluded = json::object();
  for (Domain d : kDomains) {
    json ids = json::array();
    for (auto u : excluded_users[index_of(d)]) ids.push_back(ds.user_ids.at(u));
    excluded[std::string(domain_tag(d))] = ids;
  }
  return {{"format", "coast-split-v1"},
          {"seed", seed},
          {"dataset_hash", hex64(dataset_hash)},
          {"cases", cases_json},
          {"excluded_users", excluded}};
}

SplitPlan SplitPlan::from_json(const json& j, const Dataset& ds) {
  if (j.value("format", "") != "coast-split-v1") throw InvalidArgumentError("not a coast split file");
  if (j.at("dataset_hash").get<std::string>() != hex64(ds.hash())) {
    throw InvalidArgumentError("split was created for a different dataset (hash mismatch)");
  }
  SplitPlan plan;
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.dataset_hash = ds.hash();
  auto user_index = [&](const std::string& id) {
    const auto u = ds.find_user(id);
    if (!u) throw InvalidArgumentError("split references unknown user " + id);
    return *u;
  };
  for (const auto& c : j.at("cases")) {
    TestCase tc;
    tc.domain = parse_domain(c.at("domain").get<std::string>());
    tc.user = user_index(c.at("user").get<std::string>());
    auto item_index = [&](const std::string& id) {
      const auto i = ds.find_item(tc.domain, id);
      if (!i) throw InvalidArgumentError("split references unknown item " + id);
      return *i;
    };
    tc.positive = item_index(c.at("positive").get<std::string>());
    for (const auto& n : c.at("negatives")) tc.negatives.push_back(item_index(n.get<std::string>()));
    plan.cases.push_back(std::move(tc));
  }
  for (Domain d : kDomains) {
    for (const auto& id : j.at("excluded_users").at(std::string(domain_tag(d))))
      plan.excluded_users[index_of(d)].push_back(user_index(id.get<std::string>()));
  }
  return plan;
}

namespace {

std::vector<std::size_t> sample_negatives(const DomainData& dd, std::size_t user, std::size_t count,
                                          std::mt19937_64& rng) {
  const auto& positives = dd.user_items[user];
  const std::size_t n_items = dd.item_count();
  const std::size_t available = n_items - positives.size();
  if (available < count) return {};
  std::vector<std::size_t> out;
  out.reserve(count);
  if (available >= 4 * count) {
    std::unordered_set<std::size_t> taken;
    std::uniform_int_distribution<std::size_t> pick(0, n_items - 1);
    while (out.size() < count) {
      const std::size_t j = pick(rng);
      if (std::binary_search(positives.begin(), positives.end(), j) || !taken.insert(j).second) continue;
      out.push_back(j);
    }
    return out;
  }
  std::vector<std::size_t> candidates;
  candidates.reserve(available);
  for (std::size_t j = 0; j < n_items; ++j)
    if (!std::binary_search(positives.begin(), positives.end(), j)) candidates.push_back(j);
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, candidates.size() - 1);
    std::swap(candidates[k], candidates[pick(rng)]);
    out.push_back(candidates[k]);
  }
  return out;
}

}  // namespace

SplitPlan split_leave_one_out(const Dataset& ds, std::uint64_t seed, const SplitOptions& options) {
  SplitPlan plan;
  plan.seed = seed;
  plan.dataset_hash = ds.hash();
  std::mt19937_64 rng(seed);
  for (Domain d : kDomains) {
    const auto& dd = ds.domain(d);
    if (dd.edges.empty()) continue;
    if (dd.item_count() < options.negatives + 1) {
      throw ConfigError("domain " + std::string(domain_tag(d)) + " has " + std::to_string(dd.item_count()) +
                        " items; need at least " + std::to_string(options.negatives + 1) + " to sample negatives");
    }
    // Edges are sorted by (user, item), so each user's edges are contiguous.
    std::size_t pos = 0;
    for (std::size_t u = 0; u < ds.user_count(); ++u) {
      const std::size_t begin = pos;
      while (pos < dd.edges.size() && dd.edges[pos].user == u) ++pos;
      const std::size_t n = pos - begin;
      if (n == 0) continue;
      if (n < 2) {
        plan.excluded_users[index_of(d)].push_back(u);
        log(LogLevel::kInfo, "user " + ds.user_ids[u] + " has fewer than 2 positives in domain " +
                                 std::string(domain_tag(d)) + "; excluded from its test set");
        continue;
      }
      const bool timed = options.prefer_latest && std::all_of(dd.edges.begin() + static_cast<std::ptrdiff_t>(begin),
                                                               dd.edges.begin() + static_cast<std::ptrdiff_t>(pos),
                                                               [](const Edge& e) { return e.timestamp.has_value(); });
      std::size_t held = begin;
      if (timed) {
        for (std::size_t k = begin + 1; k < pos; ++k)
          if (*dd.edges[k].timestamp > *dd.edges[held].timestamp) held = k;
      } else {
        std::uniform_int_distribution<std::size_t> pick(begin, pos - 1);
        held = pick(rng);
      }
      auto negatives = sample_negatives(dd, u, options.negatives, rng);
      if (negatives.size() != options.negatives) {
        plan.excluded_users[index_of(d)].push_back(u);
        log(LogLevel::kInfo, "user " + ds.user_ids[u] + " lacks enough unobserved items; excluded");
        continue;
      }
      plan.cases.push_back({u, d, dd.edges[held].item, std::move(negatives)});
    }
  }
  return plan;
}

// --- training examples ----------------------------------------------------------------

TrainingSet::TrainingSet(const Dataset& ds, const SplitPlan& split) {
  std::array<std::vector<std::optional<std::size_t>>, 2> held;
  for (Domain d : kDomains) held[index_of(d)].assign(ds.user_count(), std::nullopt);
  for (const auto& c : split.cases) held[index_of(c.domain)].at(c.user) = c.positive;
  for (Domain d : kDomains) {
    const auto& dd = ds.domain(d);
    auto& items = train_items_[index_of(d)];
    items.assign(ds.user_count(), {});
    for (std::size_t u = 0; u < ds.user_count(); ++u) {
      for (std::size_t i : dd.user_items[u]) {
        if (held[index_of(d)][u] == i) continue;
        items[u].push_back(i);
        positives_.push_back({u, d, i});
      }
    }
  }
}

std::size_t TrainingSet::count(Domain d) const {
  return static_cast<std::size_t>(
      std::count_if(positives_.begin(), positives_.end(), [d](const Positive& p) { return p.domain == d; }));
}

std::vector<Example> make_examples(const Dataset& ds, std::span<const Positive> positives, std::size_t neg_ratio,
                                   std::mt19937_64& rng) {
  if (neg_ratio < 1) throw ConfigError("neg_ratio must be at least 1");
  std::vector<Example> out;
  out.reserve(positives.size() * (1 + neg_ratio));
  for (const auto& p : positives) {
    const auto& dd = ds.domain(p.domain);
    const auto& observed = dd.user_items.at(p.user);
    if (observed.size() >= dd.item_count()) {
      throw ContractError("user " + ds.user_ids[p.user] + " has interacted with every item; cannot sample negatives");
    }
    out.push_back({p.user, p.domain, p.item, 1.0});
    std::uniform_int_distribution<std::size_t> pick(0, dd.item_count() - 1);
    for (std::size_t k = 0; k < neg_ratio; ++k) {
      std::size_t j = pick(rng);
      while (std::binary_search(observed.begin(), observed.end(), j)) j = pick(rng);
      out.push_back({p.user, p.domain, j, 0.0});
    }
  }
  return out;
}

std::vector<std::vector<Example>> epoch_batches(const Dataset& ds, const TrainingSet& train, std::size_t batch_size,
                                                std::size_t neg_ratio, std::mt19937_64& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<Positive> order(train.positives().begin(), train.positives().end());
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t per_batch = std::max<std::size_t>(1, batch_size / (1 + neg_ratio));
  std::vector<std::vector<Example>> batches;
  for (std::size_t start = 0; start < order.size(); start += per_batch) {
    const std::size_t n = std::min(per_batch, order.size() - start);
    batches.push_back(make_examples(ds, std::span(order).subspan(start, n), neg_ratio, rng));
  }
  return batches;
}

std::vector<Example> sample_training_batch(const Dataset& ds, const TrainingSet& train, std::size_t batch_size,
                                           std::size_t neg_ratio, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto batches = epoch_batches(ds, train, batch_size, neg_ratio, rng);
  if (batches.empty()) return {};
  return std::move(batches.front());
}

// --- synthetic data ----------------------------------------------------------------------

void SynthConfig::validate() const {
  if (source_only_users + overlap_users == 0 || target_only_users + overlap_users == 0) {
    throw ConfigError("synthetic config needs users in both domains");
  }
  if (source_items == 0 || target_items == 0 || interests == 0) throw ConfigError("synthetic counts must be positive");
  if (feature_dim < interests) throw ConfigError("feature_dim must be at least the number of interests");
  if (mean_interactions_source < static_cast<double>(min_interactions) ||
      mean_interactions_target < static_cast<double>(min_interactions)) {
    throw ConfigError("mean interactions per user must be at least min_interactions");
  }
  if (mean_interactions_source > static_cast<double>(source_items) ||
      mean_interactions_target > static_cast<double>(target_items)) {
    throw ConfigError("mean interactions per user exceed the item count");
  }
  if (!(affinity_temperature > 0.0)) throw ConfigError("affinity_temperature must be positive");
}

json SynthConfig::to_json() const {
  return {{"source_only_users", source_only_users},
          {"target_only_users", target_only_users},
          {"overlap_users", overlap_users},
          {"source_items", source_items},
          {"target_items", target_items},
          {"interests", interests},
          {"mean_interactions_source", mean_interactions_source},
          {"mean_interactions_target", mean_interactions_target},
          {"affinity_temperature", affinity_temperature},
          {"popularity_scale", popularity_scale},
          {"feature_dim", feature_dim},
          {"feature_noise", feature_noise},
          {"min_interactions", min_interactions},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  c.source_only_users = j.value("source_only_users", c.source_only_users);
  c.target_only_users = j.value("target_only_users", c.target_only_users);
  c.overlap_users = j.value("overlap_users", c.overlap_users);
  c.source_items = j.value("source_items", c.source_items);
  c.target_items = j.value("target_items", c.target_items);
  c.interests = j.value("interests", c.interests);
  c.mean_interactions_source = j.value("mean_interactions_source", c.mean_interactions_source);
  c.mean_interactions_target = j.value("mean_interactions_target", c.mean_interactions_target);
  c.affinity_temperature = j.value("affinity_temperature", c.affinity_temperature);
  c.popularity_scale = j.value("popularity_scale", c.popularity_scale);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.feature_noise = j.value("feature_noise", c.feature_noise);
  c.min_interactions = j.value("min_interactions", c.min_interactions);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

std::string padded(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", prefix, i);
  return buf;
}

std::vector<double> sparse_mixture(std::size_t k, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(0.3, 1.0);
  std::vector<double> pi(k);
  double total = 0.0;
  for (auto& p : pi) total += (p = gamma(rng) + 1e-12);
  for (auto& p : pi) p /= total;
  return pi;
}

}  // namespace

SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  SynthData out;
  out.config = cfg;

  // Users: overlap first, then source-only, then target-only.
  struct SynthUser {
    std::string id;
    bool in_source;
    bool in_target;
    std::vector<double> mixture;
  };
  std::vector<SynthUser> users;
  const std::size_t n_users = cfg.overlap_users + cfg.source_only_users + cfg.target_only_users;
  for (std::size_t u = 0; u < n_users; ++u) {
    const bool overlap = u < cfg.overlap_users;
    const bool source = overlap || u < cfg.overlap_users + cfg.source_only_users;
    users.push_back({padded('u', u), source, overlap || !source, sparse_mixture(cfg.interests, rng)});
  }

  struct SynthItem {
    std::string id;
    std::size_t cluster;
    double popularity;
  };
  std::array<std::vector<SynthItem>, 2> items;
  for (Domain d : kDomains) {
    const std::size_t n = d == Domain::kSource ? cfg.source_items : cfg.target_items;
    std::uniform_int_distribution<std::size_t> cluster(0, cfg.interests - 1);
    for (std::size_t i = 0; i < n; ++i)
      items[index_of(d)].push_back(
          {padded(d == Domain::kSource ? 'S' : 'T', i), cluster(rng), cfg.popularity_scale * noise(rng)});
  }

  // Interactions: count = min + Poisson(mean - min); items drawn without
  // replacement ∝ exp(affinity / temperature + popularity) via Gumbel top-k.
  std::extreme_value_distribution<double> gumbel(0.0, 1.0);
  std::uniform_int_distribution<int> stars(1, 5);
  for (const auto& user : users) {
    for (Domain d : kDomains) {
      if (d == Domain::kSource ? !user.in_source : !user.in_target) continue;
      const auto& pool = items[index_of(d)];
      const double mean = d == Domain::kSource ? cfg.mean_interactions_source : cfg.mean_interactions_target;
      std::poisson_distribution<std::size_t> extra(mean - static_cast<double>(cfg.min_interactions));
      const std::size_t count = std::min(pool.size(), cfg.min_interactions + extra(rng));
      std::vector<std::pair<double, std::size_t>> keys(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) {
        const double logit = user.mixture[pool[i].cluster] / cfg.affinity_temperature + pool[i].popularity;
        keys[i] = {logit + gumbel(rng), i};
      }
      std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(count), keys.end(),
                        [](const auto& a, const auto& b) { return a.first > b.first; });
      std::vector<std::int64_t> stamps(count);
      std::iota(stamps.begin(), stamps.end(), 1);
      std::shuffle(stamps.begin(), stamps.end(), rng);
      for (std::size_t k = 0; k < count; ++k) {
        out.interactions.push_back(
            {user.id, pool[keys[k].second].id, d, static_cast<double>(stars(rng)), stamps[k]});
      }
    }
  }

  // Features: noisy planted indicators.
  auto noisy = [&](std::span<const double> signal) {
    std::vector<double> v(cfg.feature_dim);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = (k < signal.size() ? signal[k] : 0.0) + cfg.feature_noise * noise(rng);
    return v;
  };
  for (Domain d : kDomains) {
    FeatureRows rows;
    for (const auto& user : users) {
      if (d == Domain::kSource ? user.in_source : user.in_target) rows.rows.emplace_back(user.id, noisy(user.mixture));
    }
    out.features.users_by_domain[index_of(d)] = std::move(rows);
    FeatureRows item_rows;
    for (const auto& item : items[index_of(d)]) {
      std::vector<double> indicator(cfg.interests, 0.0);
      indicator[item.cluster] = 1.0;
      item_rows.rows.emplace_back(item.id, noisy(indicator));
    }
    out.features.items[index_of(d)] = std::move(item_rows);
  }
  for (const auto& user : users) out.labels.emplace_back(user.id, user.mixture);

  LoadOptions opts;
  opts.min_interactions = cfg.min_interactions;
  opts.fallback_dim = cfg.feature_dim;
  out.dataset = build_dataset(out.interactions, out.features, opts);
  return out;
}

void write_synth(const SynthData& data, const fs::path& dir) {
  fs::create_directories(dir);
  write_interactions(dir / "interactions.tsv", data.interactions);
  for (Domain d : kDomains) {
    const std::string tag(domain_tag(d));
    write_features(dir / ("user_features_" + tag + ".tsv"), *data.features.users_by_domain[index_of(d)]);
    write_features(dir / ("item_features_" + tag + ".tsv"), *data.features.items[index_of(d)]);
  }
  FeatureRows labels;
  labels.rows = data.labels;
  write_features(dir / "labels.tsv", labels);
  std::ofstream cfg(dir / "synth_config.json", std::ios::trunc);
  cfg << data.config.to_json().dump(2) << '\n';
}

std::vector<std::pair<std::string, std::vector<double>>> read_labels(const fs::path& path) {
  return read_features(path).rows;
}

}  // namespace coast
