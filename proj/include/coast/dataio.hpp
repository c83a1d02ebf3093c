#pragma once

// Dual-domain interaction data: ingestion, featurization, leave-one-out
// splits, training negatives and a synthetic generator with planted interests.
//
// File formats (UTF-8, tab separated):
//   interactions.tsv       user_id  item_id  domain(S|T)  rating  [timestamp]
//   user_features[_S|_T].tsv, item_features_{S,T}.tsv
//                          entity_id  f1,f2,...
//   labels.tsv (synthetic) user_id  k1,...,kK

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace coast {

enum class Domain : std::uint8_t { kSource = 0, kTarget = 1 };
inline constexpr std::array<Domain, 2> kDomains{Domain::kSource, Domain::kTarget};
inline constexpr std::size_t index_of(Domain d) { return static_cast<std::size_t>(d); }
std::string_view domain_tag(Domain d);
Domain parse_domain(std::string_view tag);  // "S" | "T", throws InvalidArgumentError
inline Domain other(Domain d) { return d == Domain::kSource ? Domain::kTarget : Domain::kSource; }

enum class UserRole : std::uint8_t { kSourceOnly, kTargetOnly, kOverlap };

struct Interaction {
  std::string user;
  std::string item;
  Domain domain = Domain::kSource;
  double rating = 1.0;
  std::optional<std::int64_t> timestamp;
};

// Row-major table of fixed-width feature vectors.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t r) const { return std::span<const double>(values).subspan(r * dim, dim); }
  std::span<double> row(std::size_t r) { return std::span<double>(values).subspan(r * dim, dim); }
};

struct Edge {
  std::size_t user = 0;
  std::size_t item = 0;
  double rating = 1.0;  // normalized to [0, 1]
  std::optional<std::int64_t> timestamp;
};

struct DomainData {
  std::vector<std::string> item_ids;
  std::vector<Edge> edges;  // sorted by (user, item), unique
  // Per global user index: sorted item indices (A_d rows). Empty when absent.
  std::vector<std::vector<std::size_t>> user_items;
  // Per item: sorted user indices.
  std::vector<std::vector<std::size_t>> item_users;
  FeatureMatrix user_features;  // rows = all users; rows of absent users are zero
  FeatureMatrix item_features;

  std::size_t item_count() const { return item_ids.size(); }
  bool has(std::size_t user, std::size_t item) const;
};

struct Dataset {
  std::vector<std::string> user_ids;  // sorted
  std::vector<UserRole> roles;
  std::array<DomainData, 2> domains;
  std::size_t feature_dim = 0;

  std::size_t user_count() const { return user_ids.size(); }
  const DomainData& domain(Domain d) const { return domains[index_of(d)]; }
  DomainData& domain(Domain d) { return domains[index_of(d)]; }
  bool in_domain(std::size_t user, Domain d) const;
  std::vector<std::size_t> overlap_users() const;
  std::size_t users_in(Domain d) const;
  std::optional<std::size_t> find_user(std::string_view id) const;
  std::optional<std::size_t> find_item(Domain d, std::string_view id) const;
  std::uint64_t hash() const;
};

// --- featurization -------------------------------------------------------------

enum class ColumnKind { kNumeric, kCategorical, kText };
ColumnKind parse_column_kind(std::string_view kind);  // throws ConfigError

struct ColumnSpec {
  std::string name;
  ColumnKind kind;
};

struct FeaturizeOptions {
  std::size_t dim = 32;           // output width (pad with zeros / truncate)
  std::size_t text_buckets = 16;  // hashed bag-of-words width per text column
};

// Bucket of a (lower-cased) token in the hashed bag-of-words encoding.
std::size_t text_bucket(std::string_view token, std::size_t buckets);
std::vector<std::string> tokenize(std::string_view text);
// L2-normalized bucket counts; all zeros for text without tokens.
std::vector<double> hashed_bag_of_words(std::string_view text, std::size_t buckets);

// Numeric columns are min-max scaled over the given rows (constant → 0),
// categorical columns become one-hot over their sorted distinct levels, text
// columns become hashed bags of words. The concatenation is zero padded or
// truncated to options.dim.
std::vector<std::vector<double>> featurize(std::span<const ColumnSpec> schema,
                                           std::span<const std::vector<std::string>> rows,
                                           const FeaturizeOptions& options);

// --- loading -------------------------------------------------------------------

struct FeatureSources {
  std::optional<std::filesystem::path> users;                    // shared across domains
  std::array<std::optional<std::filesystem::path>, 2> users_by_domain;  // override `users`
  std::array<std::optional<std::filesystem::path>, 2> items;
};

struct LoadOptions {
  std::size_t min_interactions = 5;
  // Entities without a feature row get a hashed bag-of-words of their id.
  bool fallback_features = true;
  std::size_t fallback_dim = 32;
};

struct FeatureRows {
  std::vector<std::pair<std::string, std::vector<double>>> rows;
};

std::vector<Interaction> read_interactions(const std::filesystem::path& path);
FeatureRows read_features(const std::filesystem::path& path);

struct RawFeatures {
  std::optional<FeatureRows> users;
  std::array<std::optional<FeatureRows>, 2> users_by_domain;
  std::array<std::optional<FeatureRows>, 2> items;
};

// Filters (per domain) until every retained user and item has at least
// min_interactions edges, indexes entities and attaches features.
Dataset build_dataset(std::vector<Interaction> interactions, const RawFeatures& features, const LoadOptions& options);

Dataset load_dataset(const std::filesystem::path& interactions, const FeatureSources& features,
                     const LoadOptions& options);
// Loads the standard file names from a directory (missing feature files are skipped).
Dataset load_dataset_dir(const std::filesystem::path& dir, const LoadOptions& options);

// --- splits ----------------------------------------------------------------------

struct TestCase {
  std::size_t user = 0;
  Domain domain = Domain::kSource;
  std::size_t positive = 0;
  std::vector<std::size_t> negatives;
};

struct SplitOptions {
  std::size_t negatives = 99;
  bool prefer_latest = true;  // hold out the latest interaction when all have timestamps
};

struct SplitPlan {
  std::uint64_t seed = 0;
  std::uint64_t dataset_hash = 0;
  std::vector<TestCase> cases;  // ordered by (domain, user)
  std::array<std::vector<std::size_t>, 2> excluded_users;

  std::uint64_t hash() const;
  nlohmann::json to_json(const Dataset& ds) const;
  static SplitPlan from_json(const nlohmann::json& j, const Dataset& ds);
};

SplitPlan split_leave_one_out(const Dataset& ds, std::uint64_t seed, const SplitOptions& options = {});

// --- training examples -------------------------------------------------------------

struct Positive {
  std::size_t user;
  Domain domain;
  std::size_t item;
};

struct Example {
  std::size_t user = 0;
  Domain domain = Domain::kSource;
  std::size_t item = 0;
  double label = 0.0;
};

// Observed positives minus the held-out test items.
class TrainingSet {
 public:
  TrainingSet(const Dataset& ds, const SplitPlan& split);

  std::span<const Positive> positives() const { return positives_; }
  std::span<const std::size_t> items(Domain d, std::size_t user) const { return train_items_[index_of(d)][user]; }
  std::size_t count(Domain d) const;

 private:
  std::vector<Positive> positives_;
  std::array<std::vector<std::vector<std::size_t>>, 2> train_items_;
};

// Each positive followed by neg_ratio sampled items the user never
// interacted with in that domain (labels 1 / 0).
std::vector<Example> make_examples(const Dataset& ds, std::span<const Positive> positives, std::size_t neg_ratio,
                                   std::mt19937_64& rng);

// Shuffles all training positives of both domains and cuts them into batches
// of about batch_size examples (positives_per_batch = batch_size / (1 + neg_ratio)).
std::vector<std::vector<Example>> epoch_batches(const Dataset& ds, const TrainingSet& train, std::size_t batch_size,
                                                std::size_t neg_ratio, std::mt19937_64& rng);

std::vector<Example> sample_training_batch(const Dataset& ds, const TrainingSet& train, std::size_t batch_size,
                                           std::size_t neg_ratio, std::uint64_t seed);

// --- synthetic data ----------------------------------------------------------------

struct SynthConfig {
  std::size_t source_only_users = 1400;
  std::size_t target_only_users = 1400;
  std::size_t overlap_users = 600;
  std::size_t source_items = 1000;
  std::size_t target_items = 1000;
  std::size_t interests = 8;  // K*
  double mean_interactions_source = 16.0;
  double mean_interactions_target = 8.0;
  double affinity_temperature = 0.1;
  double popularity_scale = 0.5;
  std::size_t feature_dim = 32;
  double feature_noise = 0.5;
  std::size_t min_interactions = 5;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthData {
  SynthConfig config;
  std::vector<Interaction> interactions;
  RawFeatures features;
  std::vector<std::pair<std::string, std::vector<double>>> labels;  // user id -> interest mixture
  Dataset dataset;
};

SynthData synth_generate(const SynthConfig& cfg);
void write_synth(const SynthData& data, const std::filesystem::path& dir);
std::vector<std::pair<std::string, std::vector<double>>> read_labels(const std::filesystem::path& path);

void write_interactions(const std::filesystem::path& path, std::span<const Interaction> interactions);
void write_features(const std::filesystem::path& path, const FeatureRows& rows);

}  // namespace coast
