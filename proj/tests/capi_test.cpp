#include "coast/coast.h"

#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

json take(char* s) {
  json j = json::parse(s);
  coast_string_free(s);
  return j;
}

const char* kConfig = R"({"dim": 4, "layers": 1, "prototypes": 16, "proj_dim": 8, "batch_size": 1024,
                          "epochs": 2, "lr": 0.003, "seed": 5})";

class CApi : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("coast_capi_" + std::to_string(::getpid()));
    const json synth = {{"source_only_users", 150}, {"target_only_users", 150}, {"overlap_users", 60},
                        {"source_items", 120},      {"target_items", 120},      {"seed", 3}};
    ASSERT_EQ(coast_synth_write(synth.dump().c_str(), dir_.c_str()), COAST_OK) << coast_last_error();
    ASSERT_EQ(coast_dataset_load(dir_.c_str(), nullptr, &ds_), COAST_OK) << coast_last_error();
    ASSERT_EQ(coast_split_create(ds_, 3, &split_), COAST_OK) << coast_last_error();
  }
  static void TearDownTestSuite() {
    coast_split_free(split_);
    coast_dataset_free(ds_);
    fs::remove_all(dir_);
  }

  static inline fs::path dir_;
  static inline coast_dataset* ds_ = nullptr;
  static inline coast_split* split_ = nullptr;
};

TEST(CApiErrors, NullArgumentsAndMessages) {
  coast_dataset* ds = nullptr;
  EXPECT_EQ(coast_dataset_load(nullptr, nullptr, &ds), COAST_E_INVALID_ARGUMENT);
  EXPECT_STRNE(coast_last_error(), "");
  EXPECT_EQ(coast_dataset_load("/nonexistent/coast", nullptr, &ds), COAST_E_IO);
  EXPECT_EQ(ds, nullptr);
  EXPECT_STREQ(coast_status_name(COAST_E_CONFIG), "config");
  EXPECT_STREQ(coast_status_name(COAST_OK), "ok");
  EXPECT_EQ(coast_synth_write("{\"seed\": 1}", nullptr), COAST_E_INVALID_ARGUMENT);
  coast_dataset_free(nullptr);
  coast_split_free(nullptr);
  coast_model_free(nullptr);
}

TEST_F(CApi, ConfigErrorsAreTyped) {
  coast_model* m = nullptr;
  EXPECT_EQ(coast_train(split_, "{not json", nullptr, nullptr, &m), COAST_E_PARSE);
  EXPECT_EQ(coast_train(split_, R"({"no_such_key": 1})", nullptr, nullptr, &m), COAST_E_CONFIG);
  EXPECT_EQ(coast_train(split_, R"({"dim": 0})", nullptr, nullptr, &m), COAST_E_CONFIG);
  EXPECT_EQ(m, nullptr);
  coast_dataset* ds = nullptr;
  EXPECT_EQ(coast_dataset_load(dir_.c_str(), R"({"bogus": true})", &ds), COAST_E_CONFIG);
  // A successful call clears the previous message.
  std::uint64_t h = 0;
  EXPECT_EQ(coast_dataset_hash(ds_, &h), COAST_OK);
  EXPECT_STREQ(coast_last_error(), "");
}

TEST_F(CApi, SummaryCountsBothDomains) {
  char* s = nullptr;
  ASSERT_EQ(coast_dataset_summary(ds_, &s), COAST_OK);
  const json j = take(s);
  EXPECT_GT(j["domains"]["S"]["interactions"].get<int>(), j["domains"]["T"]["interactions"].get<int>());
  EXPECT_GT(j["overlap_users"].get<int>(), 0);
}

TEST_F(CApi, DatasetAndSplitRoundTrip) {
  const fs::path out = dir_ / "rewritten";
  ASSERT_EQ(coast_dataset_write(ds_, out.c_str()), COAST_OK) << coast_last_error();
  coast_dataset* again = nullptr;
  ASSERT_EQ(coast_dataset_load(out.c_str(), nullptr, &again), COAST_OK) << coast_last_error();
  std::uint64_t a = 0, b = 0;
  coast_dataset_hash(ds_, &a);
  coast_dataset_hash(again, &b);
  EXPECT_EQ(a, b);
  coast_dataset_free(again);

  const fs::path path = dir_ / "split.json";
  ASSERT_EQ(coast_split_write(split_, path.c_str()), COAST_OK);
  coast_split* read = nullptr;
  ASSERT_EQ(coast_split_read(ds_, path.c_str(), &read), COAST_OK) << coast_last_error();
  coast_split_hash(split_, &a);
  coast_split_hash(read, &b);
  EXPECT_EQ(a, b);
  coast_split_free(read);
}

void count_epochs(size_t, double total, double, double, double, void* user_data) {
  EXPECT_TRUE(std::isfinite(total));
  ++*static_cast<int*>(user_data);
}

TEST_F(CApi, TrainSaveLoadEvaluate) {
  int calls = 0;
  coast_model* m = nullptr;
  ASSERT_EQ(coast_train(split_, kConfig, count_epochs, &calls, &m), COAST_OK) << coast_last_error();
  EXPECT_EQ(calls, 2);

  char* s = nullptr;
  ASSERT_EQ(coast_model_history(m, &s), COAST_OK);
  EXPECT_EQ(take(s)["epochs"].size(), 2u);
  ASSERT_EQ(coast_model_config(m, &s), COAST_OK);
  EXPECT_EQ(take(s)["dim"], 4);
  ASSERT_EQ(coast_model_evaluate(m, &s), COAST_OK);
  json report = take(s);
  EXPECT_EQ(report["format"], "coast-metrics-v1");

  const fs::path blob = dir_ / "model.bin";
  ASSERT_EQ(coast_model_save(m, blob.c_str(), R"({"note": "capi"})"), COAST_OK) << coast_last_error();
  ASSERT_EQ(coast_checkpoint_metadata(blob.c_str(), &s), COAST_OK);
  EXPECT_EQ(take(s)["note"], "capi");

  coast_model* loaded = nullptr;
  ASSERT_EQ(coast_model_load(split_, blob.c_str(), &loaded), COAST_OK) << coast_last_error();
  ASSERT_EQ(coast_model_evaluate(loaded, &s), COAST_OK);
  json again = take(s);
  report.erase("wall_time_s");
  again.erase("wall_time_s");
  EXPECT_EQ(report, again);
  std::uint64_t a = 0, b = 0;
  coast_model_evaluate_hash(m, &a);
  coast_model_evaluate_hash(loaded, &b);
  EXPECT_EQ(a, b);

  // A checkpoint is tied to its split.
  coast_split* other = nullptr;
  ASSERT_EQ(coast_split_create(ds_, 4, &other), COAST_OK);
  coast_model* wrong = nullptr;
  EXPECT_NE(coast_model_load(other, blob.c_str(), &wrong), COAST_OK);
  EXPECT_EQ(wrong, nullptr);
  coast_split_free(other);

  coast_model_free(loaded);
  coast_model_free(m);
}

TEST_F(CApi, RunnersReturnOneEntryPerSetting) {
  const double ratios[] = {0.5, 1.0};
  char* s = nullptr;
  ASSERT_EQ(coast_run_overlap(split_, kConfig, ratios, 2, &s), COAST_OK) << coast_last_error();
  EXPECT_EQ(take(s)["runs"].size(), 2u);
  ASSERT_EQ(coast_run_ablation(split_, kConfig, "NS", &s), COAST_OK) << coast_last_error();
  EXPECT_TRUE(take(s).contains("report"));
  EXPECT_EQ(coast_run_ablation(split_, kConfig, "XX", &s), COAST_E_CONFIG);
  EXPECT_EQ(coast_run_overlap(split_, kConfig, ratios, 0, &s), COAST_E_INVALID_ARGUMENT);
}

}  // namespace
