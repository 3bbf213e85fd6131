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
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "brane/branchnet.hpp"
#include "brane/clusterer.hpp"
#include "brane/linearizer.hpp"
#include "brane/trainer.hpp"

namespace brane {

struct SearchConfig {
  int m = 40;
  int alpha_min = 2;
  int alpha_max = 3;
  int dim = 400;
  double lambda2 = 1e-4;
  std::vector<double> lambda_grid = default_lambda_grid();
  double max_growth = 5.0;
  std::size_t feature_samples = 32;  // train graphs per task for features, 0 = all
  std::size_t val_samples = 0;       // validation graphs per task, 0 = all
  std::uint64_t seed = 0;
};

struct BraneConfig {
  ModelConfig model;
  SearchConfig search;
  TrainConfig meta_train;   // per meta-init
  TrainConfig final_train;  // joint fine-tune of the assembled tree
  std::optional<std::filesystem::path> out_dir;  // affinity CSVs land here
};

// Ordered key=value event lines.
class AuditLog {
 public:
  void add(const std::string& event, const std::vector<std::pair<std::string, std::string>>& fields);
  const std::vector<std::string>& lines() const { return lines_; }
  std::string text() const;

 private:
  std::vector<std::string> lines_;
};

struct QueueEntry {
  std::vector<int> tasks;  // sorted
  int layer = 1;
};

struct SearchState {
  std::deque<QueueEntry> queue;
  AuditLog audit;
  int training_calls = 0;
  int splits = 0;
};

struct PartitionResult {
  std::vector<std::vector<int>> groups;  // task ids
  BranchingModel meta_init;  // chain along the route of the partitioned tasks
  bool trained = false;
  std::optional<AffinityMatrix> affinity;
  std::optional<Selection> selection;
};

// Fast approximate partition of the node holding `tasks` at `layer` of `model`.
PartitionResult fast_approx_partition(const BranchingModel& model, const TaskData& data,
                                      const std::vector<int>& tasks, int layer,
                                      const BraneConfig& cfg, SearchState& state);

struct BraneResult {
  BranchingModel model;
  SearchState state;
};

// Top-down construction of the tree, then a joint fine-tune.
BraneResult autobrane(const TaskData& data, const BraneConfig& cfg);

// Every layer's node task sets partition {0..n-1}; throws otherwise.
void check_layer_partition(const BranchingModel& model);

}  // namespace brane
