// Command-line front end. Talks to the engine only through the C API.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "coast/coast.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure : std::runtime_error {
  Failure(coast_status s, const std::string& what) : std::runtime_error(what), status(s) {}
  coast_status status;
};

void check(coast_status s, const char* call) {
  if (s != COAST_OK) {
    throw Failure(s, std::string(call) + " failed (" + coast_status_name(s) + "): " + coast_last_error());
  }
}

struct DatasetPtr {
  coast_dataset* p = nullptr;
  ~DatasetPtr() { coast_dataset_free(p); }
};
struct SplitPtr {
  coast_split* p = nullptr;
  ~SplitPtr() { coast_split_free(p); }
};
struct ModelPtr {
  coast_model* p = nullptr;
  ~ModelPtr() { coast_model_free(p); }
};

json take_json(char* s) {
  json j = json::parse(s);
  coast_string_free(s);
  return j;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure(COAST_E_IO, "cannot open " + path);
  return json::parse(in);
}

void write_output(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw Failure(COAST_E_IO, "cannot write " + path);
}

std::string hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Flags shared by every subcommand that loads a prepared dataset.
struct DataArgs {
  std::string data_dir;
  std::string split_path;
  std::uint64_t split_seed = 1;
  std::size_t min_interactions = 5;

  void add(CLI::App* app, bool data_required = true) {
    auto* d = app->add_option("--data", data_dir, "dataset directory (interactions.tsv + feature files)");
    if (data_required) d->required();
    app->add_option("--split", split_path, "split JSON; created from --split-seed when absent");
    app->add_option("--split-seed", split_seed, "seed for a fresh leave-one-out split")->capture_default_str();
    app->add_option("--min-interactions", min_interactions, "iterative filter threshold")->capture_default_str();
  }

  std::string load_options() const { return json{{"min_interactions", min_interactions}}.dump(); }

  void open(DatasetPtr& ds, SplitPtr& split) const {
    check(coast_dataset_load(data_dir.c_str(), load_options().c_str(), &ds.p), "load dataset");
    if (!split_path.empty()) {
      check(coast_split_read(ds.p, split_path.c_str(), &split.p), "read split");
    } else {
      check(coast_split_create(ds.p, split_seed, &split.p), "create split");
    }
  }
};

// Training config: a JSON file plus individual overrides.
struct ConfigArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, dim, layers, prototypes, proj_dim, batch, neg_ratio;
  std::optional<double> lr, lambda1, lambda2, overlap_ratio;
  std::optional<std::string> grad_align;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "training config JSON");
    app->add_option("--seed", seed, "model seed");
    app->add_option("--epochs", epochs);
    app->add_option("--dim", dim, "embedding size D");
    app->add_option("--layers", layers, "GCN layers");
    app->add_option("--prototypes", prototypes, "interest prototypes K");
    app->add_option("--proj-dim", proj_dim, "alignment projection width");
    app->add_option("--batch", batch);
    app->add_option("--neg-ratio", neg_ratio);
    app->add_option("--lr", lr);
    app->add_option("--lambda1", lambda1);
    app->add_option("--lambda2", lambda2);
    app->add_option("--overlap-ratio", overlap_ratio);
    app->add_option("--grad-align", grad_align, "all | last_layer");
  }

  json build() const {
    json c = config_path.empty() ? json::object() : read_json_file(config_path);
    auto put = [&](const char* key, const auto& v) {
      if (v) c[key] = *v;
    };
    put("seed", seed);
    put("epochs", epochs);
    put("dim", dim);
    put("layers", layers);
    put("prototypes", prototypes);
    put("proj_dim", proj_dim);
    put("batch_size", batch);
    put("neg_ratio", neg_ratio);
    put("lr", lr);
    put("lambda1", lambda1);
    put("lambda2", lambda2);
    put("overlap_ratio", overlap_ratio);
    put("grad_align_params", grad_align);
    return c;
  }
};

void log_epoch(size_t epoch, double total, double supervised, double uu, double ui, void*) {
  std::fprintf(stderr, "epoch %zu loss %.6f supervised %.6f user_user %.6f user_item %.6f\n", epoch, total,
               supervised, uu, ui);
}

std::string absolute(const std::string& p) { return p.empty() ? p : fs::absolute(p).lexically_normal().string(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"COAST cross-domain recommender"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no per-epoch log on stderr");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dual-domain dataset");
  std::string synth_out;
  std::size_t users = 2000, overlap = 600, items = 1000, interests = 8;
  std::uint64_t synth_seed = 1;
  std::optional<double> temperature;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--users", users, "users per domain")->capture_default_str();
  synth->add_option("--overlap", overlap, "users present in both domains")->capture_default_str();
  synth->add_option("--items", items, "items per domain")->capture_default_str();
  synth->add_option("--interests", interests, "true interest clusters")->capture_default_str();
  synth->add_option("--temperature", temperature, "affinity temperature");
  synth->add_option("--seed", synth_seed)->capture_default_str();

  // prepare
  auto* prepare = app.add_subcommand("prepare", "filter raw logs, attach features, write dataset and split");
  std::string raw_interactions, raw_user_features, raw_items_s, raw_items_t, prepare_out;
  std::size_t prepare_min = 5;
  std::uint64_t prepare_seed = 1;
  prepare->add_option("--interactions", raw_interactions, "user<TAB>item<TAB>domain<TAB>rating[<TAB>ts]")
      ->required();
  prepare->add_option("--user-features", raw_user_features);
  prepare->add_option("--item-features-s", raw_items_s);
  prepare->add_option("--item-features-t", raw_items_t);
  prepare->add_option("--min-interactions", prepare_min)->capture_default_str();
  prepare->add_option("--split-seed", prepare_seed)->capture_default_str();
  prepare->add_option("--out", prepare_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train one model, evaluate it, optionally save a checkpoint");
  DataArgs train_data;
  ConfigArgs train_cfg;
  std::string train_ckpt, train_report;
  train_data.add(train);
  train_cfg.add(train);
  train->add_option("--checkpoint", train_ckpt, "checkpoint blob path to write");
  train->add_option("--report", train_report, "report JSON path (stdout when absent)");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
  DataArgs eval_data;
  std::string eval_ckpt, eval_report;
  eval_data.add(eval, false);
  eval->add_option("--checkpoint", eval_ckpt)->required();
  eval->add_option("--report", eval_report, "report JSON path (stdout when absent)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train the full model and ablation variants");
  DataArgs ablate_data;
  ConfigArgs ablate_cfg;
  std::vector<std::string> variants{"full", "NF", "NS", "NM", "NU", "NI"};
  std::string ablate_out;
  ablate_data.add(ablate);
  ablate_cfg.add(ablate);
  ablate->add_option("--variants", variants, "subset of full NF NS NM NU NI")->delimiter(',')->capture_default_str();
  ablate->add_option("--report", ablate_out);

  // overlap
  auto* overlap_cmd = app.add_subcommand("overlap", "vary the share of linked overlapping users");
  DataArgs overlap_data;
  ConfigArgs overlap_cfg;
  std::vector<double> ratios{0.25, 0.5, 0.75, 1.0};
  std::string overlap_out;
  overlap_data.add(overlap_cmd);
  overlap_cfg.add(overlap_cmd);
  overlap_cmd->add_option("--ratios", ratios)->delimiter(',')->capture_default_str();
  overlap_cmd->add_option("--report", overlap_out);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "one-at-a-time sweep over D, K and lambda2");
  DataArgs sweep_data;
  ConfigArgs sweep_cfg;
  std::vector<std::size_t> sweep_dims{8, 16, 32, 64, 128, 256}, sweep_k{32, 64, 128, 256, 512, 1024};
  std::vector<double> sweep_l2{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::string sweep_out;
  sweep_data.add(sweep);
  sweep_cfg.add(sweep);
  sweep->add_option("--dims", sweep_dims)->delimiter(',')->capture_default_str();
  sweep->add_option("--ks", sweep_k)->delimiter(',')->capture_default_str();
  sweep->add_option("--lambda2s", sweep_l2)->delimiter(',')->capture_default_str();
  sweep->add_option("--report", sweep_out);

  CLI11_PARSE(app, argc, argv);
  const coast_epoch_fn on_epoch = quiet ? nullptr : log_epoch;

  try {
    if (*synth) {
      if (overlap > users) throw Failure(COAST_E_CONFIG, "--overlap exceeds --users");
      json cfg = {{"source_only_users", users - overlap},
                  {"target_only_users", users - overlap},
                  {"overlap_users", overlap},
                  {"source_items", items},
                  {"target_items", items},
                  {"interests", interests},
                  {"seed", synth_seed}};
      if (temperature) cfg["affinity_temperature"] = *temperature;
      check(coast_synth_write(cfg.dump().c_str(), synth_out.c_str()), "synth");
      DatasetPtr ds;
      check(coast_dataset_load(synth_out.c_str(), nullptr, &ds.p), "load dataset");
      char* summary = nullptr;
      check(coast_dataset_summary(ds.p, &summary), "summary");
      std::cout << take_json(summary).dump(2) << '\n';
    } else if (*prepare) {
      DatasetPtr ds;
      auto opt = [](const std::string& s) { return s.empty() ? nullptr : s.c_str(); };
      const std::string load_opts = json{{"min_interactions", prepare_min}}.dump();
      check(coast_dataset_load_files(raw_interactions.c_str(), opt(raw_user_features), opt(raw_items_s),
                                     opt(raw_items_t), load_opts.c_str(), &ds.p),
            "load dataset");
      check(coast_dataset_write(ds.p, prepare_out.c_str()), "write dataset");
      // The split is keyed to the dataset hash, so it is built from the files
      // that later commands will read.
      DatasetPtr written;
      check(coast_dataset_load(prepare_out.c_str(), load_opts.c_str(), &written.p), "reload dataset");
      SplitPtr split;
      check(coast_split_create(written.p, prepare_seed, &split.p), "create split");
      const std::string split_path = (fs::path(prepare_out) / "split.json").string();
      check(coast_split_write(split.p, split_path.c_str()), "write split");
      char* summary = nullptr;
      check(coast_dataset_summary(written.p, &summary), "summary");
      std::cout << take_json(summary).dump(2) << '\n';
    } else if (*train) {
      DatasetPtr ds;
      SplitPtr split;
      train_data.open(ds, split);
      const std::string cfg = train_cfg.build().dump();
      ModelPtr model;
      check(coast_train(split.p, cfg.c_str(), on_epoch, nullptr, &model.p), "train");
      char* report = nullptr;
      check(coast_model_evaluate(model.p, &report), "evaluate");
      char* history = nullptr;
      check(coast_model_history(model.p, &history), "history");
      uint64_t digest = 0;
      check(coast_model_evaluate_hash(model.p, &digest), "evaluate");
      json out = {{"report", take_json(report)}, {"metrics_hash", hex(digest)}, {"training", take_json(history)}};
      if (!train_ckpt.empty()) {
        const json meta = {{"data_dir", absolute(train_data.data_dir)},
                           {"split_path", absolute(train_data.split_path)},
                           {"split_seed", train_data.split_seed},
                           {"min_interactions", train_data.min_interactions}};
        if (fs::path(train_ckpt).has_parent_path()) fs::create_directories(fs::path(train_ckpt).parent_path());
        check(coast_model_save(model.p, train_ckpt.c_str(), meta.dump().c_str()), "save");
        out["checkpoint"] = train_ckpt;
      }
      write_output(out, train_report);
    } else if (*eval) {
      char* meta_text = nullptr;
      check(coast_checkpoint_metadata(eval_ckpt.c_str(), &meta_text), "read checkpoint");
      const json meta = take_json(meta_text);
      DataArgs args = eval_data;
      if (args.data_dir.empty()) args.data_dir = meta.value("data_dir", "");
      if (args.data_dir.empty()) throw Failure(COAST_E_INVALID_ARGUMENT, "no --data and none recorded in checkpoint");
      if (args.split_path.empty()) {
        args.split_path = meta.value("split_path", "");
        args.split_seed = meta.value("split_seed", args.split_seed);
      }
      args.min_interactions = meta.value("min_interactions", args.min_interactions);
      DatasetPtr ds;
      SplitPtr split;
      args.open(ds, split);
      ModelPtr model;
      check(coast_model_load(split.p, eval_ckpt.c_str(), &model.p), "load checkpoint");
      char* report = nullptr;
      check(coast_model_evaluate(model.p, &report), "evaluate");
      uint64_t digest = 0;
      check(coast_model_evaluate_hash(model.p, &digest), "evaluate");
      write_output({{"report", take_json(report)}, {"metrics_hash", hex(digest)}}, eval_report);
    } else if (*ablate) {
      DatasetPtr ds;
      SplitPtr split;
      ablate_data.open(ds, split);
      const std::string cfg = ablate_cfg.build().dump();
      json runs = json::array();
      for (const auto& v : variants) {
        if (!quiet) std::fprintf(stderr, "variant %s\n", v.c_str());
        char* r = nullptr;
        check(coast_run_ablation(split.p, cfg.c_str(), v.c_str(), &r), "ablation");
        runs.push_back(take_json(r));
      }
      write_output({{"config", json::parse(cfg)}, {"runs", runs}}, ablate_out);
    } else if (*overlap_cmd) {
      DatasetPtr ds;
      SplitPtr split;
      overlap_data.open(ds, split);
      const std::string cfg = overlap_cfg.build().dump();
      char* r = nullptr;
      check(coast_run_overlap(split.p, cfg.c_str(), ratios.data(), ratios.size(), &r), "overlap");
      write_output(take_json(r), overlap_out);
    } else if (*sweep) {
      DatasetPtr ds;
      SplitPtr split;
      sweep_data.open(ds, split);
      const std::string cfg = sweep_cfg.build().dump();
      const std::string axes = json{{"dim", sweep_dims}, {"prototypes", sweep_k}, {"lambda2", sweep_l2}}.dump();
      char* r = nullptr;
      check(coast_run_sweep(split.p, cfg.c_str(), axes.c_str(), &r), "sweep");
      write_output(take_json(r), sweep_out);
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
