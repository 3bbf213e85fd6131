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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "brane/branchnet.hpp"
#include "brane/tracegen.hpp"

namespace brane {

struct TrainConfig {
  double lr = 1e-2;
  int epochs = 30;
  int batch_size = 16;     // graphs per task per optimizer step
  int frozen_layers = 0;   // layers 1..frozen_layers are not updated
  std::uint64_t seed = 0;
  int patience = 10;       // epochs without val improvement; 0 disables
  std::vector<double> task_weights;  // per model task; empty means 1 / |S|
  std::function<void(int epoch, const BranchingModel&)> on_epoch;  // after each epoch
};

struct CurvePoint {
  int epoch = 0;
  int task = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  int epochs_run = 0;
  int best_epoch = 0;  // 0 means the starting weights were kept
  double initial_val_loss = 0;
  double best_val_loss = 0;
};

struct TaskMetrics {
  double accuracy = 0;
  double loss = 0;
  std::size_t predictions = 0;
};

// Samples indexed by model task; an empty slot means no data for that task.
using TaskData = std::vector<const TaskDataset*>;

// All teacher-forced steps of the chosen samples. Each node row carries
// weight scale / (num_samples * steps(sample) * nodes(sample)).
struct StepSet {
  std::vector<StepInstance> instances;
};
StepSet collect_steps(const std::vector<Sample>& samples, std::span<const std::size_t> which,
                      double scale);

// Minimizes the weighted mean over `tasks` of the per-graph, per-step mean
// node cross-entropy. Restores the best validation weights when early
// stopping is active.
TrainResult train(BranchingModel& model, const TaskData& data, std::span<const int> tasks,
                  const TrainConfig& cfg);

TaskMetrics evaluate_task(const BranchingModel& model, const TaskDataset& data, int task,
                          Split split);
std::vector<TaskMetrics> evaluate(const BranchingModel& model, const TaskData& data,
                                  std::span<const int> tasks, Split split);

// Joint training on `tasks` with layers 1..layer-1 frozen.
BranchingModel train_meta_init(const BranchingModel& model, const TaskData& data,
                               std::span<const int> tasks, int layer, TrainConfig cfg,
                               TrainResult* result = nullptr);

std::string loss_curve_csv(const TrainResult& result, const ModelConfig& config);

}  // namespace brane
