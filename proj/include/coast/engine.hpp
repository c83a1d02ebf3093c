#pragma once

// Joint training, ranking evaluation and experiment runners.
//
// Each step propagates the full graph, then on a minibatch computes
//   L = L_s + lambda2 (L_UU + L_UI)
// and takes one Adam step. Prototype rows are renormalized afterwards. In
// f32 mode every parameter is then rounded to float32.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coast/align.hpp"
#include "coast/dataio.hpp"
#include "coast/gcn.hpp"
#include "coast/tensor.hpp"
#include "coast/towers.hpp"
#include "coast/xgraph.hpp"

namespace coast {

struct Ablation {
  bool no_features = false;     // NF: free node embeddings
  bool separate_graph = false;  // NS: one user node per domain, merged when predicting
  bool no_interaction = false;  // NM: drop the W2/W3 terms
  bool no_user_user = false;    // NU
  bool no_user_item = false;    // NI

  bool operator==(const Ablation&) const = default;
};

// "full", "NF", "NS", "NM", "NU", "NI"; throws ConfigError otherwise.
Ablation parse_ablation(std::string_view variant);
inline constexpr std::array<std::string_view, 5> kAblationVariants{"NF", "NS", "NM", "NU", "NI"};

struct TrainConfig {
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t prototypes = 256;
  std::size_t proj_dim = 64;
  double tau = 0.1;
  double sinkhorn_eps = 0.05;
  std::size_t sinkhorn_iters = 3;
  double lambda1 = 1e-2;
  double lambda2 = 1e-2;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 4096;
  std::size_t epochs = 100;
  std::size_t neg_ratio = 4;
  std::size_t max_neighbors = 64;
  double leaky_alpha = 0.01;
  bool literal_messages = false;
  std::string grad_align_params = "all";  // all | last_layer
  bool f32_params = true;
  std::uint64_t seed = 1;
  Ablation ablation;
  double overlap_ratio = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys throw ConfigError.
  static TrainConfig from_json(const nlohmann::json& j);
  std::uint64_t hash() const;

  GcnConfig gcn() const;
  AlignConfig align() const;
};

// The (1 - ratio) share of overlapping users whose link is severed, chosen
// by a seeded shuffle. Sorted.
std::vector<std::size_t> severed_overlap_users(const Dataset& ds, double ratio, std::uint64_t seed);

struct StepLosses {
  Tensor total;
  Tensor supervised;
  Tensor user_user;  // scalar; zero when disabled or skipped
  Tensor user_item;
};

class Model {
 public:
  TrainConfig config;
  std::uint64_t dataset_hash = 0;
  std::uint64_t split_hash = 0;
  std::shared_ptr<const CrossDomainGraph> graph;
  TwoHopIndex two_hop;
  std::vector<std::size_t> overlap_position;  // dataset user -> index in graph->overlap_users
  EmbeddingParams embed;
  GcnParams gcn;
  TowerParams towers;
  AlignParams align;
  ParamSet params;

  // Builds the graph from the split's training positives and initializes
  // every parameter from config.seed.
  static Model create(const Dataset& ds, const SplitPlan& split, const TrainConfig& config);

  Tensor propagate() const;
  StepLosses losses(const Tensor& propagated, std::span<const Example> batch) const;
};

class Adam {
 public:
  Adam(const ParamSet& params, double lr, double beta1, double beta2, double eps);
  void step(std::span<const Tensor> grads);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochStats {
  double total = 0.0;
  double supervised = 0.0;
  double user_user = 0.0;
  double user_item = 0.0;
  std::size_t batches = 0;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> epochs;
  double wall_time_s = 0.0;
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

// Throws DivergenceError when a loss becomes non-finite.
TrainResult train(const Dataset& ds, const SplitPlan& split, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// --- evaluation -------------------------------------------------------------------------

inline constexpr std::size_t kMaxCutoff = 10;

struct DomainMetrics {
  std::size_t test_cases = 0;
  std::array<double, kMaxCutoff> hit{};   // hit[n-1] = Hit@n
  std::array<double, kMaxCutoff> ndcg{};  // ndcg[n-1] = NDCG@n
};

struct EvalReport {
  std::array<DomainMetrics, 2> domains;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t dataset_hash = 0;
  std::uint64_t split_hash = 0;
  double wall_time_s = 0.0;

  // Deterministic content (no timing).
  nlohmann::json metrics_json() const;
  // metrics_json plus wall time.
  nlohmann::json to_json() const;
  std::uint64_t metrics_hash() const;
};

// 1-based rank of scores[0] among all entries, descending, ties broken by the
// smaller item index.
std::size_t rank_of_positive(std::span<const double> scores, std::span<const std::size_t> items);

// Per-domain Hit@n / NDCG@n from 1-based ranks.
DomainMetrics metrics_from_ranks(std::span<const std::size_t> ranks);

// Scores for one test case: positive first, then the negatives in order.
using CaseScorer = std::function<std::vector<double>(const TestCase&)>;

// Ranks every test case (in parallel, capped by COAST_THREADS).
EvalReport evaluate_with(const SplitPlan& split, const CaseScorer& scorer);
EvalReport evaluate(const Model& model, const Dataset& ds, const SplitPlan& split);

// --- persistence -----------------------------------------------------------------------

void save_model(const Model& model, const std::filesystem::path& blob,
                const nlohmann::json& extra_metadata = nlohmann::json::object());
Model load_model(const Dataset& ds, const SplitPlan& split, const std::filesystem::path& blob);

// --- experiments ------------------------------------------------------------------------

nlohmann::json epochs_to_json(std::span<const EpochStats> epochs);

struct RunResult {
  EvalReport report;
  std::vector<EpochStats> epochs;
  nlohmann::json to_json() const;
};

RunResult run_config(const Dataset& ds, const SplitPlan& split, const TrainConfig& config);
RunResult run_ablation(const Dataset& ds, const SplitPlan& split, const TrainConfig& config, std::string_view variant);
// One run per ratio; returns {"runs": [{"overlap_ratio": M, ...run}, ...]}.
nlohmann::json run_overlap(const Dataset& ds, const SplitPlan& split, const TrainConfig& config,
                           std::span<const double> ratios);

struct SweepAxes {
  std::vector<std::size_t> dims{8, 16, 32, 64, 128, 256};
  std::vector<std::size_t> prototypes{32, 64, 128, 256, 512, 1024};
  std::vector<double> lambda2{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
};
// One-at-a-time sweep around the base config.
nlohmann::json run_sweep(const Dataset& ds, const SplitPlan& split, const TrainConfig& config, const SweepAxes& axes);

}  // namespace coast
