// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria outside --known-red. Pass criterion numbers as arguments
// to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "coast/align.hpp"
#include "coast/coast.h"
#include "coast/engine.hpp"
#include "coast/gcn.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace coast {
namespace {

using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// The acceptance training config: small enough that fifteen runs fit the
// CPU budget on one core.
TrainConfig acceptance_config(std::uint64_t seed) {
  TrainConfig c;
  c.dim = 4;
  c.layers = 2;
  c.prototypes = 64;
  c.proj_dim = 16;
  c.batch_size = 2048;
  c.neg_ratio = 1;
  c.lr = 3e-3;
  c.lambda2 = 1e-2;
  c.epochs = 10;
  c.seed = seed;
  return c;
}

Outcome autodiff() {
  double first = 0.0, second = 0.0;
  std::size_t checks = 0;
  std::mt19937_64 rng(2024);
  for (const auto& c : oracle::registered_op_cases()) {
    for (int trial = 0; trial < 3; ++trial) {
      first = std::max(first, oracle::gradcheck(c.fn, oracle::random_inputs(c.inputs, rng)).max_rel_error);
      ++checks;
    }
  }
  bool components_ok = true;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = oracle::second_order_check(seed);
    second = std::max(second, r.max_rel_error);
    components_ok = components_ok && r.components > 0;
  }
  return {first < 1e-5 && second < 1e-4 && components_ok,
          std::to_string(checks) + " op checks, max rel err " + fmt("%.2e", first) + "; second order " +
              fmt("%.2e", second)};
}

Outcome gcn_equivalence() {
  double worst = 0.0;
  std::size_t max_nodes = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const Dataset ds = fixture::dataset(
        fixture::random_links(2 + seed % 4, 1 + seed % 3, 1 + seed % 3, 5, 4, 1 + seed % 4, seed));
    const CrossDomainGraph g = build_graph(ds, TrainingSet(ds, fixture::no_holdout(ds)));
    max_nodes = std::max(max_nodes, g.node_count);
    const std::size_t dim = 3 + seed % 4;
    const GcnLayer layer{oracle::random_matrix(dim, dim, rng), oracle::random_matrix(dim, dim, rng),
                         oracle::random_matrix(dim, dim, rng)};
    const Tensor e = oracle::random_matrix(g.node_count, dim, rng);
    GcnConfig cfg;
    cfg.dim = dim;
    const auto got = propagate_layer(e, g, layer, cfg).to_vector();
    const auto want = oracle::gcn_layer(g, e, layer, cfg.leaky_alpha, true);
    if (got.size() != want.size()) return {false, "shape mismatch at graph " + std::to_string(seed)};
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  return {worst <= 1e-10 && max_nodes <= 20,
          "50 graphs up to " + std::to_string(max_nodes) + " nodes, max abs diff " + fmt("%.2e", worst)};
}

Outcome sinkhorn() {
  double plan_dev = 0.0, codes_dev = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor s = matmul(oracle::unit_rows(64, 64, rng), transpose(oracle::unit_rows(256, 64, rng)));
    const auto plan = sinkhorn_plan(s.data(), 64, 256, 0.05, 3);
    const Tensor q = sinkhorn_codes(s, 0.05, 3);
    for (std::size_t k = 0; k < 256; ++k) {
      double col = 0.0, qcol = 0.0;
      for (std::size_t b = 0; b < 64; ++b) {
        col += plan[b * 256 + k];
        qcol += q.at(b, k);
      }
      plan_dev = std::max(plan_dev, std::abs(col - 1.0 / 256));
      codes_dev = std::max(codes_dev, std::abs(qcol - 64.0 / 256));
    }
  }
  bool uniform = true;
  const Tensor flat = sinkhorn_codes(Tensor::full({64, 256}, 0.37), 0.05, 3);
  for (double x : flat.data()) uniform = uniform && x == 1.0 / 256;
  return {plan_dev < 1e-3 && uniform, "max column deviation " + fmt("%.2e", plan_dev) + " of 1/K (" +
                                          fmt("%.2e", codes_dev) + " of B/K in row-normalized codes); constant " +
                                          (uniform ? "exactly uniform" : "NOT uniform")};
}

Outcome alignment_losses() {
  double same = 0.0, opposite = 0.0, scale_dev = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Tensor g = oracle::random_matrix(1, 200, rng), h = oracle::random_matrix(1, 200, rng);
    same = std::max(same, std::abs(user_item_loss(g, g).item()));
    opposite = std::max(opposite, std::abs(user_item_loss(g, scale(g, -1.0)).item() - 2.0));
    const double base = user_item_loss(g, h).item();
    for (double s : {1e-6, 1e-3, 0.5, 3.0, 1e4, 1e6}) {
      scale_dev = std::max(scale_dev, std::abs(user_item_loss(scale(g, s), h).item() - base));
      scale_dev = std::max(scale_dev, std::abs(user_item_loss(g, scale(h, s)).item() - base));
    }
  }
  std::mt19937_64 rng(4);
  AlignConfig cfg;
  cfg.prototypes = 256;
  cfg.proj_dim = 8;
  AlignParams p = AlignParams::init(6, cfg, rng);
  // Identical prototypes make every prediction and code uniform.
  const std::vector<double> c0(p.prototypes.data().begin(), p.prototypes.data().begin() + 8);
  auto d = p.prototypes.mutable_data();
  for (std::size_t k = 0; k < 256; ++k)
    for (std::size_t j = 0; j < 8; ++j) d[k * 8 + j] = c0[j];
  const double uu = user_user_loss(oracle::random_matrix(16, 6, rng), oracle::random_matrix(16, 6, rng), p, cfg).item();
  const double uu_dev = std::abs(uu - std::log(256.0));
  return {same <= 1e-12 && opposite <= 1e-12 && scale_dev <= 1e-9 && uu_dev <= 1e-6,
          "|L_UI(g,g)| " + fmt("%.1e", same) + ", |L_UI(g,-g)-2| " + fmt("%.1e", opposite) + ", scale drift " +
              fmt("%.1e", scale_dev) + ", |L_UU-ln 256| " + fmt("%.1e", uu_dev)};
}

Outcome evaluator() {
  const auto planted = oracle::planted_cases(1000, 1);
  const auto report = evaluate_with(planted.plan, [&](const TestCase& tc) { return planted.tables[tc.user]; });
  const std::size_t cases = report.domains[0].test_cases + report.domains[1].test_cases;
  const std::size_t bad = oracle::planted_mismatches(planted, report);
  const double hit10 = oracle::random_score_report(10000).domains[0].hit[9];
  return {cases == 1000 && bad == 0 && std::abs(hit10 - 0.10) <= 0.01,
          std::to_string(cases) + " planted cases, " + std::to_string(bad) + " mismatching entries; random Hit@10 " +
              fmt("%.4f", hit10)};
}

// Per-user interaction density of each domain; the sparser one is reported.
Domain sparser_domain(const Dataset& ds) {
  auto density = [&](Domain d) {
    return static_cast<double>(ds.domain(d).edges.size()) / static_cast<double>(ds.users_in(d));
  };
  return density(Domain::kTarget) <= density(Domain::kSource) ? Domain::kTarget : Domain::kSource;
}

Outcome synthetic(const std::function<void(const std::string&)>& progress) {
  const std::clock_t cpu0 = std::clock();
  double full = 0.0, no_align = 0.0, low_overlap = 0.0;
  bool loss_drops = true;
  std::string sparse_tag;
  const std::size_t seeds = 5;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    SynthConfig sc;
    sc.seed = seed;
    const Dataset ds = synth_generate(sc).dataset;
    const SplitPlan split = split_leave_one_out(ds, seed);
    const std::size_t t = index_of(sparser_domain(ds));
    sparse_tag = std::string(domain_tag(sparser_domain(ds)));

    TrainConfig cfg = acceptance_config(seed);
    const RunResult a = run_config(ds, split, cfg);
    cfg.lambda2 = 0.0;
    const RunResult b = run_config(ds, split, cfg);
    cfg = acceptance_config(seed);
    cfg.overlap_ratio = 0.25;
    const RunResult c = run_config(ds, split, cfg);

    for (const RunResult* r : {&a, &b, &c}) loss_drops = loss_drops && r->epochs.back().total < r->epochs.front().total;
    full += a.report.domains[t].hit[9] / seeds;
    no_align += b.report.domains[t].hit[9] / seeds;
    low_overlap += c.report.domains[t].hit[9] / seeds;
    if (progress) {
      char line[200];
      std::snprintf(line, sizeof line, "      seed %llu Hit@10(%s): full %.4f  lambda2=0 %.4f  M=0.25 %.4f  loss e1->e10 %.4f->%.4f",
                    static_cast<unsigned long long>(seed), sparse_tag.c_str(), a.report.domains[t].hit[9],
                    b.report.domains[t].hit[9], c.report.domains[t].hit[9], a.epochs.front().total,
                    a.epochs.back().total);
      progress(line);
    }
  }
  const double cpu = static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC;
  const bool ok_a = full > no_align, ok_b = full >= low_overlap;
  const bool ok_c = full > 0.10 && no_align > 0.10 && low_overlap > 0.10;
  const bool ok_t = cpu <= 600.0;
  std::string detail = "mean Hit@10(" + sparse_tag + ") full/M=1.0 " + fmt("%.4f", full) + ", lambda2=0 " +
                       fmt("%.4f", no_align) + ", M=0.25 " + fmt("%.4f", low_overlap) + "; (a) " +
                       (ok_a ? "ok" : "FAIL") + " (b) " + (ok_b ? "ok" : "FAIL") + " (c) " + (ok_c ? "ok" : "FAIL") +
                       " (d) " + (loss_drops ? "ok" : "FAIL") + "; CPU " + fmt("%.0f s", cpu);
  return {ok_a && ok_b && ok_c && loss_drops && ok_t, detail};
}

// Criteria 7 and 8 go through the public C interface, as the CLI does.
struct CapiData {
  std::filesystem::path dir;
  coast_dataset* ds = nullptr;
  coast_split* split = nullptr;
  std::string config;

  CapiData() {
    dir = std::filesystem::temp_directory_path() / ("coast_acceptance_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    const json synth = {{"source_only_users", 500}, {"target_only_users", 500}, {"overlap_users", 200},
                        {"source_items", 400},      {"target_items", 400},      {"seed", 7}};
    check(coast_synth_write(synth.dump().c_str(), dir.c_str()));
    check(coast_dataset_load(dir.c_str(), nullptr, &ds));
    check(coast_split_create(ds, 7, &split));
    TrainConfig cfg = acceptance_config(7);
    cfg.epochs = 3;
    config = cfg.to_json().dump();
  }
  ~CapiData() {
    coast_split_free(split);
    coast_dataset_free(ds);
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
  }
  static void check(coast_status s) {
    if (s != COAST_OK) throw std::runtime_error(std::string(coast_status_name(s)) + ": " + coast_last_error());
  }
  coast_model* train() const {
    coast_model* m = nullptr;
    check(coast_train(split, config.c_str(), nullptr, nullptr, &m));
    return m;
  }
  static json report(const coast_model* m) {
    char* s = nullptr;
    check(coast_model_evaluate(m, &s));
    json j = json::parse(s);
    coast_string_free(s);
    return j;
  }
  static std::uint64_t hash(const coast_model* m) {
    std::uint64_t h = 0;
    check(coast_model_evaluate_hash(m, &h));
    return h;
  }
};

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Outcome determinism(const CapiData& data) {
  coast_model* a = data.train();
  coast_model* b = data.train();
  const std::uint64_t ha = CapiData::hash(a), hb = CapiData::hash(b);
  coast_model_free(a);
  coast_model_free(b);
  return {ha == hb, "metrics hashes " + hex(ha) + " and " + hex(hb)};
}

Outcome round_trip(const CapiData& data) {
  coast_model* a = data.train();
  const auto blob = data.dir / "model.bin";
  CapiData::check(coast_model_save(a, blob.c_str(), nullptr));
  coast_model* b = nullptr;
  CapiData::check(coast_model_load(data.split, blob.c_str(), &b));
  json ra = CapiData::report(a), rb = CapiData::report(b);
  const std::uint64_t ha = CapiData::hash(a), hb = CapiData::hash(b);
  coast_model_free(a);
  coast_model_free(b);
  ra.erase("wall_time_s");
  rb.erase("wall_time_s");
  return {ra == rb && ha == hb, std::string(ra == rb ? "reports identical" : "reports DIFFER") + ", hash " + hex(hb)};
}

}  // namespace
}  // namespace coast

int main(int argc, char** argv) {
  using namespace coast;
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only, known_red;
  bool verbose = false;
  app.add_option("criteria", only, "Criterion numbers to run (default all)")->check(CLI::Range(1, 8));
  app.add_flag("-v,--verbose", verbose, "Per-seed lines for the synthetic run");
  std::string log_path;
  app.add_option("--log", log_path, "Also write the result lines to this file");
  app.add_option("--known-red", known_red, "Failing criteria that still print FAIL but do not set the exit status")
      ->check(CLI::Range(1, 8))
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> tolerated(known_red.begin(), known_red.end());

  std::FILE* log = log_path.empty() ? nullptr : std::fopen(log_path.c_str(), "w");
  auto say = [&](const std::string& line) {
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (log) {
      std::fprintf(log, "%s\n", line.c_str());
      std::fflush(log);
    }
  };

  std::unique_ptr<CapiData> data;
  auto capi = [&]() -> const CapiData& {
    if (!data) data = std::make_unique<CapiData>();
    return *data;
  };

  struct Criterion {
    int id;
    const char* name;
    double time_limit_s;  // 0 when the criterion sets none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "autodiff gradients", 30, autodiff},
      {2, "GCN matrix form vs node-wise", 10, gcn_equivalence},
      {3, "Sinkhorn marginals", 5, sinkhorn},
      {4, "alignment loss identities", 0, alignment_losses},
      {5, "evaluator oracle", 0, evaluator},
      {6, "synthetic experiment", 0, [&] { return synthetic(verbose ? std::function<void(const std::string&)>(say) : nullptr); }},
      {7, "deterministic training", 0, [&] { return determinism(capi()); }},
      {8, "checkpoint round trip", 0, [&] { return round_trip(capi()); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0 && secs > c.time_limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f s", c.time_limit_s) + " limit";
    }
    if (!o.pass && !tolerated.count(c.id)) ++failed;
    say(std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(c.id) + " " + c.name + ": " + o.detail +
        " (" + fmt("%.1f s", secs) + ")");
    if (!o.pass && tolerated.count(c.id)) say("     criterion " + std::to_string(c.id) + " is a known red result; not counted");
    if (o.pass && tolerated.count(c.id)) say("     criterion " + std::to_string(c.id) + " was listed as known red but passed");
  }
  if (log) std::fclose(log);
  return failed;
}
