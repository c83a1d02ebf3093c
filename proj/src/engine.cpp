#include "coast/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_set>

#include "coast/checkpoint.hpp"
#include "coast/errors.hpp"
#include "coast/util.hpp"

namespace coast {

namespace fs = std::filesystem;
using nlohmann::json;

// --- config ---------------------------------------------------------------------

Ablation parse_ablation(std::string_view variant) {
  Ablation a;
  if (variant == "full") return a;
  if (variant == "NF") {
    a.no_features = true;
  } else if (variant == "NS") {
    a.separate_graph = true;
  } else if (variant == "NM") {
    a.no_interaction = true;
  } else if (variant == "NU") {
    a.no_user_user = true;
  } else if (variant == "NI") {
    a.no_user_item = true;
  } else {
    throw ConfigError("unknown ablation variant '" + std::string(variant) + "' (full|NF|NS|NM|NU|NI)");
  }
  return a;
}

void TrainConfig::validate() const {
  if (dim == 0 || proj_dim == 0) throw ConfigError("dim and proj_dim must be positive");
  if (layers > 4) throw ConfigError("layers must be in 0..4");
  if (prototypes < 2) throw ConfigError("prototypes (K) must be at least 2");
  if (!(tau > 0.0) || !(sinkhorn_eps > 0.0)) throw ConfigError("tau and sinkhorn_eps must be positive");
  if (sinkhorn_iters == 0) throw ConfigError("sinkhorn_iters must be positive");
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("lambda1 and lambda2 must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("Adam moments must be in [0,1) and eps positive");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (neg_ratio == 0) throw ConfigError("neg_ratio must be at least 1");
  if (!(overlap_ratio > 0.0 && overlap_ratio <= 1.0)) throw ConfigError("overlap_ratio must be in (0, 1]");
  if (grad_align_params != "all" && grad_align_params != "last_layer") {
    throw ConfigError("grad_align_params must be 'all' or 'last_layer'");
  }
}

json TrainConfig::to_json() const {
  return {{"dim", dim},
          {"layers", layers},
          {"prototypes", prototypes},
          {"proj_dim", proj_dim},
          {"tau", tau},
          {"sinkhorn_eps", sinkhorn_eps},
          {"sinkhorn_iters", sinkhorn_iters},
          {"lambda1", lambda1},
          {"lambda2", lambda2},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"neg_ratio", neg_ratio},
          {"max_neighbors", max_neighbors},
          {"leaky_alpha", leaky_alpha},
          {"literal_messages", literal_messages},
          {"grad_align_params", grad_align_params},
          {"f32_params", f32_params},
          {"seed", seed},
          {"ablation",
           {{"NF", ablation.no_features},
            {"NS", ablation.separate_graph},
            {"NM", ablation.no_interaction},
            {"NU", ablation.no_user_user},
            {"NI", ablation.no_user_item}}},
          {"overlap_ratio", overlap_ratio}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "dim") c.dim = v.get<std::size_t>();
      else if (key == "layers") c.layers = v.get<std::size_t>();
      else if (key == "prototypes") c.prototypes = v.get<std::size_t>();
      else if (key == "proj_dim") c.proj_dim = v.get<std::size_t>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "sinkhorn_eps") c.sinkhorn_eps = v.get<double>();
      else if (key == "sinkhorn_iters") c.sinkhorn_iters = v.get<std::size_t>();
      else if (key == "lambda1") c.lambda1 = v.get<double>();
      else if (key == "lambda2") c.lambda2 = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "beta1") c.beta1 = v.get<double>();
      else if (key == "beta2") c.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "neg_ratio") c.neg_ratio = v.get<std::size_t>();
      else if (key == "max_neighbors") c.max_neighbors = v.get<std::size_t>();
      else if (key == "leaky_alpha") c.leaky_alpha = v.get<double>();
      else if (key == "literal_messages") c.literal_messages = v.get<bool>();
      else if (key == "grad_align_params") c.grad_align_params = v.get<std::string>();
      else if (key == "f32_params") c.f32_params = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "overlap_ratio") c.overlap_ratio = v.get<double>();
      else if (key == "ablation") {
        if (v.is_string()) {
          c.ablation = parse_ablation(v.get<std::string>());
        } else {
          c.ablation.no_features = v.value("NF", false);
          c.ablation.separate_graph = v.value("NS", false);
          c.ablation.no_interaction = v.value("NM", false);
          c.ablation.no_user_user = v.value("NU", false);
          c.ablation.no_user_item = v.value("NI", false);
        }
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t TrainConfig::hash() const { return fnv1a(to_json().dump()); }

GcnConfig TrainConfig::gcn() const {
  GcnConfig g;
  g.layers = layers;
  g.dim = dim;
  g.leaky_alpha = leaky_alpha;
  g.interaction_terms = !ablation.no_interaction;
  g.literal_messages = literal_messages;
  return g;
}

AlignConfig TrainConfig::align() const {
  AlignConfig a;
  a.prototypes = prototypes;
  a.proj_dim = proj_dim;
  a.tau = tau;
  a.sinkhorn_eps = sinkhorn_eps;
  a.sinkhorn_iters = sinkhorn_iters;
  a.last_layer_only = grad_align_params == "last_layer";
  return a;
}

std::vector<std::size_t> severed_overlap_users(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("overlap ratio must be in (0, 1]");
  std::vector<std::size_t> users = ds.overlap_users();
  std::mt19937_64 rng(seed ^ 0x6f7665726c6170ULL);
  std::shuffle(users.begin(), users.end(), rng);
  const auto n = static_cast<std::size_t>(std::llround((1.0 - ratio) * static_cast<double>(users.size())));
  users.resize(n);
  std::sort(users.begin(), users.end());
  return users;
}

// --- model ----------------------------------------------------------------------

namespace {

void round_params(const ParamSet& params) {
  for (const auto& e : params) {
    Tensor t = e.tensor;
    round_to_f32(t.mutable_data());
  }
}

}  // namespace

Model Model::create(const Dataset& ds, const SplitPlan& split, const TrainConfig& config) {
  config.validate();
  if (split.dataset_hash != ds.hash()) throw InvalidArgumentError("split does not belong to this dataset");
  Model m;
  m.config = config;
  m.dataset_hash = split.dataset_hash;
  m.split_hash = split.hash();

  GraphOptions go;
  go.separate_domains = config.ablation.separate_graph;
  if (config.overlap_ratio < 1.0) go.severed_users = severed_overlap_users(ds, config.overlap_ratio, config.seed);
  const TrainingSet train(ds, split);
  m.graph = std::make_shared<const CrossDomainGraph>(build_graph(ds, train, go));
  m.two_hop = build_two_hop_index(*m.graph, config.max_neighbors);
  m.overlap_position.assign(ds.user_count(), kNoNode);
  for (std::size_t i = 0; i < m.graph->overlap_users.size(); ++i) m.overlap_position[m.graph->overlap_users[i]] = i;

  std::mt19937_64 rng(config.seed);
  const GcnConfig gcfg = config.gcn();
  m.embed = EmbeddingParams::init(*m.graph, config.dim, config.ablation.no_features, rng);
  m.gcn = GcnParams::init(gcfg, rng);
  m.towers = TowerParams::init(propagated_dim(gcfg), rng);
  m.align = AlignParams::init(propagated_dim(gcfg), config.align(), rng);
  m.embed.register_into(m.params);
  m.gcn.register_into(m.params);
  m.towers.register_into(m.params);
  m.align.register_into(m.params);
  if (config.f32_params) round_params(m.params);
  return m;
}

Tensor Model::propagate() const { return coast::propagate(initial_embeddings(*graph, embed), *graph, gcn, config.gcn()); }

StepLosses Model::losses(const Tensor& propagated, std::span<const Example> batch) const {
  StepLosses out;
  out.supervised = supervised_loss(propagated, *graph, batch, towers, config.lambda1).total;
  out.user_user = Tensor::scalar(0.0);
  out.user_item = Tensor::scalar(0.0);
  const bool want_uu = !config.ablation.no_user_user;
  const bool want_ui = !config.ablation.no_user_item;
  if (config.lambda2 == 0.0 || (!want_uu && !want_ui)) {
    out.total = out.supervised;
    return out;
  }

  if (want_uu) {
    std::vector<std::size_t> users;
    for (const auto& e : batch)
      if (graph->is_overlap[e.user]) users.push_back(e.user);
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    if (users.size() >= 2) {
      std::array<Tensor, 2> views;
      for (Domain d : kDomains) {
        std::vector<std::size_t> centers;
        std::vector<std::vector<std::size_t>> neighbors;
        for (std::size_t u : users) {
          centers.push_back(graph->user_node[index_of(d)][u]);
          neighbors.push_back(two_hop.neighbors[index_of(d)][overlap_position[u]]);
        }
        views[index_of(d)] = build_views(propagated, centers, neighbors);
      }
      out.user_user = user_user_loss(views[0], views[1], align, config.align());
    }
  }

  if (want_ui) {
    std::array<Tensor, 2> grads;
    bool ok = true;
    for (Domain d : kDomains) {
      const DomainBatch b = gather_domain_batch(propagated, *graph, batch, d, &graph->is_overlap);
      if (b.example_index.empty()) {
        ok = false;
        break;
      }
      const Tensor loss = score_domain(b, towers).bce_loss;
      const Mlp& tower = towers.user[index_of(d)];
      const auto wrt = config.grad_align_params == "last_layer" ? tower.last_layer_tensors() : tower.tensors();
      grads[index_of(d)] = grad_vector(loss, wrt);
    }
    if (ok) out.user_item = user_item_loss(grads[0], grads[1]);
  }

  out.total = add(out.supervised, scale(add(out.user_user, out.user_item), config.lambda2));
  return out;
}

Adam::Adam(const ParamSet& params, double lr, double beta1, double beta2, double eps)
    : params_(params.tensors()), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(std::span<const Tensor> grads) {
  if (grads.size() != params_.size()) throw ContractError("Adam::step: gradient count does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i];
    auto w = p.mutable_data();
    const auto g = grads[i].data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

TrainResult train(const Dataset& ds, const SplitPlan& split, const TrainConfig& config, const EpochCallback& on_epoch) {
  const auto start = std::chrono::steady_clock::now();
  TrainResult result{Model::create(ds, split, config), {}, 0.0};
  Model& model = result.model;
  const TrainingSet train_set(ds, split);
  Adam adam(model.params, config.lr, config.beta1, config.beta2, config.adam_eps);
  std::mt19937_64 rng(config.seed ^ 0x62617463686573ULL);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochStats stats;
    for (const auto& batch : epoch_batches(ds, train_set, config.batch_size, config.neg_ratio, rng)) {
      const Tensor propagated = model.propagate();
      const StepLosses l = model.losses(propagated, batch);
      const double total = l.total.item();
      if (!std::isfinite(total)) {
        throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(stats.batches + 1) + " (supervised " +
                              std::to_string(l.supervised.item()) + ", user-user " +
                              std::to_string(l.user_user.item()) + ", user-item " +
                              std::to_string(l.user_item.item()) + ")");
      }
      const auto grads = backward(l.total, model.params);
      adam.step(grads);
      model.align.normalize_prototypes();
      if (config.f32_params) round_params(model.params);
      stats.total += total;
      stats.supervised += l.supervised.item();
      stats.user_user += l.user_user.item();
      stats.user_item += l.user_item.item();
      ++stats.batches;
    }
    if (stats.batches > 0) {
      const double n = static_cast<double>(stats.batches);
      stats.total /= n;
      stats.supervised /= n;
      stats.user_user /= n;
      stats.user_item /= n;
    }
    log(LogLevel::kInfo, "epoch " + std::to_string(epoch) + " loss " + std::to_string(stats.total));
    result.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch, stats);
  }
  result.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// --- evaluation -----------------------------------------------------------------

std::size_t rank_of_positive(std::span<const double> scores, std::span<const std::size_t> items) {
  if (scores.empty() || scores.size() != items.size()) throw DimensionError("rank_of_positive: size mismatch");
  std::size_t rank = 1;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[0] || (scores[k] == scores[0] && items[k] < items[0])) ++rank;
  }
  return rank;
}

DomainMetrics metrics_from_ranks(std::span<const std::size_t> ranks) {
  DomainMetrics m;
  m.test_cases = ranks.size();
  if (ranks.empty()) return m;
  for (std::size_t n = 1; n <= kMaxCutoff; ++n) {
    double hits = 0.0, gain = 0.0;
    for (std::size_t r : ranks) {
      if (r > n) continue;
      hits += 1.0;
      gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    }
    m.hit[n - 1] = hits / static_cast<double>(ranks.size());
    m.ndcg[n - 1] = gain / static_cast<double>(ranks.size());
  }
  return m;
}

json EvalReport::metrics_json() const {
  json doms = json::object();
  for (Domain d : kDomains) {
    const auto& m = domains[index_of(d)];
    doms[std::string(domain_tag(d))] = {{"test_cases", m.test_cases},
                                        {"hit@10", m.hit[kMaxCutoff - 1]},
                                        {"ndcg@10", m.ndcg[kMaxCutoff - 1]},
                                        {"hit", m.hit},
                                        {"ndcg", m.ndcg}};
  }
  return {{"format", "coast-metrics-v1"},
          {"seed", seed},
          {"config_hash", hex64(config_hash)},
          {"dataset_hash", hex64(dataset_hash)},
          {"split_hash", hex64(split_hash)},
          {"domains", doms}};
}

json EvalReport::to_json() const {
  json j = metrics_json();
  j["wall_time_s"] = wall_time_s;
  return j;
}

std::uint64_t EvalReport::metrics_hash() const { return fnv1a(metrics_json().dump()); }

namespace {

std::size_t eval_threads(std::size_t work) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COAST_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, work / 64 + 1));
}

}  // namespace

EvalReport evaluate_with(const SplitPlan& split, const CaseScorer& scorer) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = split.cases.size();
  std::vector<std::size_t> ranks(n, 0);
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&](std::size_t begin, std::size_t end) {
    try {
      std::vector<std::size_t> items;
      for (std::size_t i = begin; i < end; ++i) {
        const TestCase& c = split.cases[i];
        items.assign(1, c.positive);
        items.insert(items.end(), c.negatives.begin(), c.negatives.end());
        const auto scores = scorer(c);
        ranks[i] = rank_of_positive(scores, items);
      }
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  const std::size_t threads = eval_threads(n);
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk, end = std::min(n, begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport report;
  for (Domain d : kDomains) {
    std::vector<std::size_t> dr;
    for (std::size_t i = 0; i < n; ++i)
      if (split.cases[i].domain == d) dr.push_back(ranks[i]);
    report.domains[index_of(d)] = metrics_from_ranks(dr);
  }
  report.seed = split.seed;
  report.dataset_hash = split.dataset_hash;
  report.split_hash = split.hash();
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

EvalReport evaluate(const Model& model, const Dataset& ds, const SplitPlan& split) {
  if (split.dataset_hash != ds.hash() || model.dataset_hash != ds.hash()) {
    throw InvalidArgumentError("evaluate: model, dataset and split do not match");
  }
  const auto start = std::chrono::steady_clock::now();
  const CrossDomainGraph& g = *model.graph;
  std::array<std::vector<double>, 2> user_out, item_out;
  std::array<std::vector<std::size_t>, 2> user_row;
  std::size_t width = 0;
  {
    NoGradGuard no_grad;
    const Tensor propagated = model.propagate();
    for (Domain d : kDomains) {
      const std::size_t di = index_of(d);
      user_row[di].assign(ds.user_count(), kNoNode);
      std::vector<std::size_t> pick_a, pick_b;
      for (const auto& c : split.cases) {
        if (c.domain != d || user_row[di][c.user] != kNoNode) continue;
        user_row[di][c.user] = pick_a.size();
        const auto [a, b] = g.prediction_nodes(d, c.user);
        pick_a.push_back(a);
        pick_b.push_back(b);
      }
      if (pick_a.empty()) continue;
      const Tensor users = maximum(gather_rows(propagated, pick_a), gather_rows(propagated, pick_b));
      user_out[di] = tower_forward(model.towers.user[di], users).to_vector();
      std::vector<std::size_t> items(g.item_count[di]);
      for (std::size_t i = 0; i < items.size(); ++i) items[i] = g.item_node(d, i);
      const Tensor item_emb = gather_rows(propagated, items);
      item_out[di] = tower_forward(model.towers.item[di], item_emb).to_vector();
      width = model.towers.user[di].weights.back().cols();
    }
  }
  const CaseScorer scorer = [&](const TestCase& c) {
    const std::size_t di = index_of(c.domain);
    const double* u = user_out[di].data() + user_row[di][c.user] * width;
    std::vector<double> scores;
    scores.reserve(c.negatives.size() + 1);
    auto score = [&](std::size_t item) {
      const double* v = item_out[di].data() + item * width;
      double dot = 0.0;
      for (std::size_t k = 0; k < width; ++k) dot += u[k] * v[k];
      return std::clamp((dot + 1.0) * 0.5, kProbEps, 1.0 - kProbEps);
    };
    scores.push_back(score(c.positive));
    for (std::size_t n : c.negatives) scores.push_back(score(n));
    return scores;
  };
  EvalReport report = evaluate_with(split, scorer);
  report.seed = model.config.seed;
  report.config_hash = model.config.hash();
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// --- persistence -------------------------------------------------------------------

void save_model(const Model& model, const fs::path& blob, const json& extra_metadata) {
  json meta = extra_metadata.is_object() ? extra_metadata : json::object();
  meta["config"] = model.config.to_json();
  meta["dataset_hash"] = hex64(model.dataset_hash);
  meta["split_hash"] = hex64(model.split_hash);
  save_checkpoint(blob, model.params, meta);
}

Model load_model(const Dataset& ds, const SplitPlan& split, const fs::path& blob) {
  const Checkpoint ckpt = load_checkpoint(blob);
  const auto& meta = ckpt.metadata;
  if (!meta.contains("config")) throw IoError("checkpoint has no model config");
  if (meta.value("dataset_hash", "") != hex64(ds.hash())) {
    throw InvalidArgumentError("checkpoint was trained on a different dataset");
  }
  if (meta.value("split_hash", "") != hex64(split.hash())) {
    throw InvalidArgumentError("checkpoint was trained with a different split");
  }
  Model m = Model::create(ds, split, TrainConfig::from_json(meta.at("config")));
  restore_params(ckpt, m.params);
  return m;
}

// --- experiments -------------------------------------------------------------------

json epochs_to_json(std::span<const EpochStats> epochs) {
  json out = json::array();
  for (const auto& e : epochs) {
    out.push_back({{"total", e.total},
                   {"supervised", e.supervised},
                   {"user_user", e.user_user},
                   {"user_item", e.user_item},
                   {"batches", e.batches}});
  }
  return out;
}

json RunResult::to_json() const { return {{"report", report.to_json()}, {"epochs", epochs_to_json(epochs)}}; }

RunResult run_config(const Dataset& ds, const SplitPlan& split, const TrainConfig& config) {
  TrainResult tr = train(ds, split, config);
  RunResult r;
  r.report = evaluate(tr.model, ds, split);
  r.report.wall_time_s += tr.wall_time_s;
  r.epochs = std::move(tr.epochs);
  return r;
}

RunResult run_ablation(const Dataset& ds, const SplitPlan& split, const TrainConfig& config, std::string_view variant) {
  TrainConfig c = config;
  c.ablation = parse_ablation(variant);
  return run_config(ds, split, c);
}

json run_overlap(const Dataset& ds, const SplitPlan& split, const TrainConfig& config, std::span<const double> ratios) {
  if (ds.overlap_users().empty()) throw ConfigError("dataset has no overlapping users");
  json runs = json::array();
  for (double ratio : ratios) {
    TrainConfig c = config;
    c.overlap_ratio = ratio;
    c.validate();
    json j = run_config(ds, split, c).to_json();
    j["overlap_ratio"] = ratio;
    j["severed_users"] = severed_overlap_users(ds, ratio, c.seed).size();
    runs.push_back(std::move(j));
  }
  return {{"runs", runs}};
}

json run_sweep(const Dataset& ds, const SplitPlan& split, const TrainConfig& config, const SweepAxes& axes) {
  auto point = [&](const TrainConfig& c, json value) {
    const RunResult r = run_config(ds, split, c);
    return json{{"value", std::move(value)},
                {"hit@10", {{"S", r.report.domains[0].hit[kMaxCutoff - 1]}, {"T", r.report.domains[1].hit[kMaxCutoff - 1]}}},
                {"ndcg@10",
                 {{"S", r.report.domains[0].ndcg[kMaxCutoff - 1]}, {"T", r.report.domains[1].ndcg[kMaxCutoff - 1]}}},
                {"run", r.to_json()}};
  };
  json out = {{"base_config", config.to_json()}, {"dim", json::array()}, {"prototypes", json::array()},
              {"lambda2", json::array()}};
  for (std::size_t d : axes.dims) {
    TrainConfig c = config;
    c.dim = d;
    out["dim"].push_back(point(c, d));
  }
  for (std::size_t k : axes.prototypes) {
    TrainConfig c = config;
    c.prototypes = k;
    out["prototypes"].push_back(point(c, k));
  }
  for (double l : axes.lambda2) {
    TrainConfig c = config;
    c.lambda2 = l;
    out["lambda2"].push_back(point(c, l));
  }
  return out;
}

}  // namespace coast
