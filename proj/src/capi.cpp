#include "coast/coast.h"

#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include <json.hpp>

#include "coast/checkpoint.hpp"
#include "coast/engine.hpp"
#include "coast/errors.hpp"
#include "coast/util.hpp"

using nlohmann::json;

struct coast_dataset {
  coast::Dataset ds;
};

struct coast_split {
  const coast_dataset* owner;
  coast::SplitPlan plan;
};

struct coast_model {
  const coast_split* split;
  coast::Model model;
  std::vector<coast::EpochStats> epochs;
  double wall_time_s = 0.0;
};

namespace {

thread_local std::string g_last_error;

coast_status status_of(coast::ErrorCode code) {
  switch (code) {
    case coast::ErrorCode::kInvalidArgument: return COAST_E_INVALID_ARGUMENT;
    case coast::ErrorCode::kIo: return COAST_E_IO;
    case coast::ErrorCode::kParse: return COAST_E_PARSE;
    case coast::ErrorCode::kDimension: return COAST_E_DIMENSION;
    case coast::ErrorCode::kNumericDomain: return COAST_E_NUMERIC_DOMAIN;
    case coast::ErrorCode::kContract: return COAST_E_CONTRACT;
    case coast::ErrorCode::kConfig: return COAST_E_CONFIG;
    case coast::ErrorCode::kDegenerateOutput: return COAST_E_DEGENERATE_OUTPUT;
    case coast::ErrorCode::kDivergence: return COAST_E_DIVERGENCE;
  }
  return COAST_E_INTERNAL;
}

// Runs f, translating exceptions into status codes.
template <class F>
coast_status guard(F&& f) {
  g_last_error.clear();
  try {
    f();
    return COAST_OK;
  } catch (const coast::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("json: ") + e.what();
    return COAST_E_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return COAST_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return COAST_E_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw coast::InvalidArgumentError(what);
}

json parse_or_empty(const char* text) {
  if (text == nullptr || *text == '\0') return json::object();
  json j = json::parse(text);
  if (!j.is_object()) throw coast::ConfigError("expected a JSON object");
  return j;
}

coast::TrainConfig config_of(const char* text) { return coast::TrainConfig::from_json(parse_or_empty(text)); }

coast::LoadOptions load_options_of(const char* text) {
  const json j = parse_or_empty(text);
  coast::LoadOptions o;
  for (const auto& [key, value] : j.items()) {
    if (key == "min_interactions") {
      o.min_interactions = value.get<std::size_t>();
    } else if (key == "fallback_features") {
      o.fallback_features = value.get<bool>();
    } else if (key == "fallback_dim") {
      o.fallback_dim = value.get<std::size_t>();
    } else {
      throw coast::ConfigError("unknown load option '" + key + "'");
    }
  }
  return o;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(const json& j, char** out) { *out = dup_string(j.dump(2)); }

const coast::Dataset& dataset_of(const coast_split* s) { return s->owner->ds; }

}  // namespace

extern "C" {

const char* coast_version(void) { return "1.0.0"; }

const char* coast_last_error(void) { return g_last_error.c_str(); }

const char* coast_status_name(coast_status status) {
  switch (status) {
    case COAST_OK: return "ok";
    case COAST_E_INVALID_ARGUMENT: return "invalid_argument";
    case COAST_E_IO: return "io";
    case COAST_E_PARSE: return "parse";
    case COAST_E_DIMENSION: return "dimension";
    case COAST_E_NUMERIC_DOMAIN: return "numeric_domain";
    case COAST_E_CONTRACT: return "contract";
    case COAST_E_CONFIG: return "config";
    case COAST_E_DEGENERATE_OUTPUT: return "degenerate_output";
    case COAST_E_DIVERGENCE: return "divergence";
    case COAST_E_INTERNAL: return "internal";
  }
  return "unknown";
}

void coast_string_free(char* s) { std::free(s); }

coast_status coast_synth_write(const char* config_json, const char* out_dir) {
  return guard([&] {
    require(out_dir != nullptr, "out_dir is null");
    const auto cfg = coast::SynthConfig::from_json(parse_or_empty(config_json));
    coast::write_synth(coast::synth_generate(cfg), out_dir);
  });
}

coast_status coast_dataset_load(const char* dir, const char* options_json, coast_dataset** out) {
  return guard([&] {
    require(dir != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    auto h = std::make_unique<coast_dataset>(coast_dataset{coast::load_dataset_dir(dir, load_options_of(options_json))});
    *out = h.release();
  });
}

coast_status coast_dataset_load_files(const char* interactions, const char* user_features,
                                      const char* item_features_s, const char* item_features_t,
                                      const char* options_json, coast_dataset** out) {
  return guard([&] {
    require(interactions != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    coast::FeatureSources src;
    if (user_features != nullptr) src.users = user_features;
    if (item_features_s != nullptr) src.items[0] = item_features_s;
    if (item_features_t != nullptr) src.items[1] = item_features_t;
    auto h = std::make_unique<coast_dataset>(
        coast_dataset{coast::load_dataset(interactions, src, load_options_of(options_json))});
    *out = h.release();
  });
}

coast_status coast_dataset_hash(const coast_dataset* ds, uint64_t* out) {
  return guard([&] {
    require(ds != nullptr && out != nullptr, "null argument");
    *out = ds->ds.hash();
  });
}

coast_status coast_dataset_summary(const coast_dataset* ds, char** out_json) {
  return guard([&] {
    require(ds != nullptr && out_json != nullptr, "null argument");
    const auto& d = ds->ds;
    json j = {{"users", d.user_count()},
              {"overlap_users", d.overlap_users().size()},
              {"feature_dim", d.feature_dim},
              {"dataset_hash", coast::hex64(d.hash())}};
    for (coast::Domain dom : coast::kDomains) {
      j["domains"][std::string(coast::domain_tag(dom))] = {{"users", d.users_in(dom)},
                                                           {"items", d.domain(dom).item_count()},
                                                           {"interactions", d.domain(dom).edges.size()}};
    }
    emit(j, out_json);
  });
}

coast_status coast_dataset_write(const coast_dataset* ds, const char* out_dir) {
  return guard([&] {
    require(ds != nullptr && out_dir != nullptr, "null argument");
    const auto& d = ds->ds;
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    std::vector<coast::Interaction> rows;
    for (coast::Domain dom : coast::kDomains) {
      const auto& dd = d.domain(dom);
      for (const auto& e : dd.edges) {
        rows.push_back({d.user_ids[e.user], dd.item_ids[e.item], dom, e.rating, e.timestamp});
      }
    }
    coast::write_interactions(dir / "interactions.tsv", rows);
    for (coast::Domain dom : coast::kDomains) {
      const auto& dd = d.domain(dom);
      const std::string tag(coast::domain_tag(dom));
      coast::FeatureRows users, items;
      for (std::size_t u = 0; u < d.user_count(); ++u) {
        if (!d.in_domain(u, dom)) continue;
        const auto r = dd.user_features.row(u);
        users.rows.emplace_back(d.user_ids[u], std::vector<double>(r.begin(), r.end()));
      }
      for (std::size_t i = 0; i < dd.item_count(); ++i) {
        const auto r = dd.item_features.row(i);
        items.rows.emplace_back(dd.item_ids[i], std::vector<double>(r.begin(), r.end()));
      }
      coast::write_features(dir / ("user_features_" + tag + ".tsv"), users);
      coast::write_features(dir / ("item_features_" + tag + ".tsv"), items);
    }
  });
}

void coast_dataset_free(coast_dataset* ds) { delete ds; }

coast_status coast_split_create(const coast_dataset* ds, uint64_t seed, coast_split** out) {
  return guard([&] {
    require(ds != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    auto h = std::make_unique<coast_split>(coast_split{ds, coast::split_leave_one_out(ds->ds, seed)});
    *out = h.release();
  });
}

coast_status coast_split_read(const coast_dataset* ds, const char* path, coast_split** out) {
  return guard([&] {
    require(ds != nullptr && path != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    std::ifstream in(path);
    if (!in) throw coast::IoError(std::string("cannot open split file ") + path);
    const json j = json::parse(in);
    auto h = std::make_unique<coast_split>(coast_split{ds, coast::SplitPlan::from_json(j, ds->ds)});
    *out = h.release();
  });
}

coast_status coast_split_write(const coast_split* split, const char* path) {
  return guard([&] {
    require(split != nullptr && path != nullptr, "null argument");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw coast::IoError(std::string("cannot write split file ") + path);
    out << split->plan.to_json(dataset_of(split)).dump() << '\n';
    if (!out) throw coast::IoError(std::string("failed writing ") + path);
  });
}

coast_status coast_split_hash(const coast_split* split, uint64_t* out) {
  return guard([&] {
    require(split != nullptr && out != nullptr, "null argument");
    *out = split->plan.hash();
  });
}

void coast_split_free(coast_split* split) { delete split; }

coast_status coast_train(const coast_split* split, const char* config_json, coast_epoch_fn on_epoch, void* user_data,
                         coast_model** out) {
  return guard([&] {
    require(split != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    const auto cfg = config_of(config_json);
    coast::EpochCallback cb;
    if (on_epoch != nullptr) {
      cb = [&](std::size_t epoch, const coast::EpochStats& s) {
        on_epoch(epoch, s.total, s.supervised, s.user_user, s.user_item, user_data);
      };
    }
    coast::TrainResult tr = coast::train(dataset_of(split), split->plan, cfg, cb);
    auto h = std::make_unique<coast_model>(coast_model{split, std::move(tr.model), std::move(tr.epochs), tr.wall_time_s});
    *out = h.release();
  });
}

coast_status coast_model_history(const coast_model* model, char** out_json) {
  return guard([&] {
    require(model != nullptr && out_json != nullptr, "null argument");
    emit({{"epochs", coast::epochs_to_json(model->epochs)}, {"wall_time_s", model->wall_time_s}}, out_json);
  });
}

coast_status coast_model_config(const coast_model* model, char** out_json) {
  return guard([&] {
    require(model != nullptr && out_json != nullptr, "null argument");
    emit(model->model.config.to_json(), out_json);
  });
}

coast_status coast_model_evaluate(const coast_model* model, char** out_json) {
  return guard([&] {
    require(model != nullptr && out_json != nullptr, "null argument");
    const auto report = coast::evaluate(model->model, dataset_of(model->split), model->split->plan);
    emit(report.to_json(), out_json);
  });
}

coast_status coast_model_evaluate_hash(const coast_model* model, uint64_t* out) {
  return guard([&] {
    require(model != nullptr && out != nullptr, "null argument");
    *out = coast::evaluate(model->model, dataset_of(model->split), model->split->plan).metrics_hash();
  });
}

coast_status coast_model_save(const coast_model* model, const char* path, const char* metadata_json) {
  return guard([&] {
    require(model != nullptr && path != nullptr, "null argument");
    coast::save_model(model->model, path, parse_or_empty(metadata_json));
  });
}

coast_status coast_model_load(const coast_split* split, const char* path, coast_model** out) {
  return guard([&] {
    require(split != nullptr && path != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    auto h = std::make_unique<coast_model>(coast_model{split, coast::load_model(dataset_of(split), split->plan, path), {}, 0.0});
    *out = h.release();
  });
}

void coast_model_free(coast_model* model) { delete model; }

coast_status coast_checkpoint_metadata(const char* path, char** out_json) {
  return guard([&] {
    require(path != nullptr && out_json != nullptr, "null argument");
    const auto manifest = coast::manifest_path(path);
    std::ifstream in(manifest);
    if (!in) throw coast::IoError("cannot open checkpoint manifest " + manifest.string());
    const json j = json::parse(in);
    emit(j.value("metadata", json::object()), out_json);
  });
}

coast_status coast_run_ablation(const coast_split* split, const char* config_json, const char* variant,
                                char** out_json) {
  return guard([&] {
    require(split != nullptr && variant != nullptr && out_json != nullptr, "null argument");
    json j = coast::run_ablation(dataset_of(split), split->plan, config_of(config_json), variant).to_json();
    j["variant"] = variant;
    emit(j, out_json);
  });
}

coast_status coast_run_overlap(const coast_split* split, const char* config_json, const double* ratios,
                               size_t n_ratios, char** out_json) {
  return guard([&] {
    require(split != nullptr && out_json != nullptr, "null argument");
    require(ratios != nullptr && n_ratios > 0, "no overlap ratios given");
    emit(coast::run_overlap(dataset_of(split), split->plan, config_of(config_json),
                            std::span<const double>(ratios, n_ratios)),
         out_json);
  });
}

coast_status coast_run_sweep(const coast_split* split, const char* config_json, const char* axes_json,
                             char** out_json) {
  return guard([&] {
    require(split != nullptr && out_json != nullptr, "null argument");
    coast::SweepAxes axes;
    for (const auto& [key, value] : parse_or_empty(axes_json).items()) {
      if (key == "dim") {
        axes.dims = value.get<std::vector<std::size_t>>();
      } else if (key == "prototypes") {
        axes.prototypes = value.get<std::vector<std::size_t>>();
      } else if (key == "lambda2") {
        axes.lambda2 = value.get<std::vector<double>>();
      } else {
        throw coast::ConfigError("unknown sweep axis '" + key + "'");
      }
    }
    emit(coast::run_sweep(dataset_of(split), split->plan, config_of(config_json), axes), out_json);
  });
}

}  // extern "C"
