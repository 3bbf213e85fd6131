// Copyright 2026 The Brane Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "brane/brane.hpp"
#include "brane/error.hpp"
#include "brane/tracegen.hpp"

namespace brane {

struct ExperimentConfig {
  std::vector<Algo> tasks;
  DatasetConfig data;
  int layers = 3;
  int hidden = 32;
  SearchConfig search;
  TrainConfig train;     // baselines and the final fine-tune
  int meta_epochs = -1;  // -1 means half of train.epochs
  std::vector<std::uint64_t> seeds = {0};
  std::filesystem::path out_dir;
};

// Throws InvalidArgument naming the first offending key.
void validate(const ExperimentConfig& cfg);
// Flat key=value lines, one per field, stable order.
std::string serialize_config(const ExperimentConfig& cfg);
// Unknown keys and malformed values are Parse errors; the result is validated.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Writes <dir>/config.txt.
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& dir);

// Output root: `explicit_dir` if set, else $BRANE_OUT, else ./runs.
std::filesystem::path output_root(const std::filesystem::path& explicit_dir = {});

std::vector<TaskDataset> make_suite(const ExperimentConfig& cfg, std::uint64_t seed);
TaskData task_data(const std::vector<TaskDataset>& sets);
ModelConfig model_config(const ExperimentConfig& cfg, std::uint64_t seed);
TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed);
BraneConfig brane_config(const ExperimentConfig& cfg, std::uint64_t seed);

struct RunScore {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<std::string> tasks;
  std::vector<double> accuracy;
  std::vector<double> loss;
  int training_calls = 0;
  std::size_t module_count = 0;
  int layers = 0;

  double mean_accuracy() const;
  double memory_ratio() const;
};

RunScore score_model(const std::string& method, std::uint64_t seed, const BranchingModel& model,
                     const TaskData& data, Split split, int training_calls);

// CSV with one row per (method, seed, task).
std::string scores_csv(std::span<const RunScore> scores);
std::vector<RunScore> parse_scores_csv(std::string_view text);
// Per method: mean accuracy over seeds, training calls, modules and memory ratio.
std::string report_table(std::span<const RunScore> scores);

struct BaselineRun {
  RunScore stn;
  RunScore mtn;
  std::vector<BranchingModel> stn_models;  // one single-task chain per task
  BranchingModel mtn_model;
};
BaselineRun run_baselines(const ExperimentConfig& cfg, const TaskData& data, std::uint64_t seed);

struct BraneRun {
  RunScore score;
  BraneResult result;
};
BraneRun run_brane(const ExperimentConfig& cfg, const TaskData& data, std::uint64_t seed);

struct SweepPoint {
  int size = 0;
  double val_error = 0;
};

struct SweepResult {
  Algo task = Algo::kBfs;
  double target = 0;
  std::vector<SweepPoint> curve;
  int minimal_size = -1;
  SweepPoint best;
};

class TargetUnreached : public Error {
 public:
  explicit TargetUnreached(SweepResult result);
  const SweepResult& result() const { return result_; }

 private:
  SweepResult result_;
};

// Trains a single-task chain at each size and returns the first whose
// validation error falls below `target_err`.
SweepResult sample_complexity_sweep(Algo task, double target_err, std::span<const int> sizes,
                                    const ExperimentConfig& base, std::uint64_t seed);
std::string sweep_csv(const SweepResult& result);

struct MtStRow {
  Algo task = Algo::kBfs;
  double st_error = 0;
  double mt_error = 0;
};
// Validation error of each task trained alone vs. in one shared chain.
std::vector<MtStRow> compare_mt_st(const ExperimentConfig& cfg, int size, std::uint64_t seed);

struct RssExperiment {
  std::vector<RssResult> points;
  std::vector<RssBucket> buckets;
  int subsets = 0;
};
// Trains W0 on every task, fine-tunes from it on random task subsets and
// measures the Taylor residual after each fine-tune epoch.
RssExperiment run_rss(const ExperimentConfig& cfg, const TaskData& data, std::uint64_t seed,
                      int subsets, int epochs, double lr, std::span<const double> uppers);
std::string rss_csv(const RssExperiment& exp);

}  // namespace brane
