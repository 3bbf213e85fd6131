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

#include "brane/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "brane/error.hpp"
#include "brane/util.hpp"

namespace brane {
namespace {

constexpr std::size_t kEvalChunk = 32;

const TaskDataset& data_for(const TaskData& data, int task) {
  require(task >= 0 && static_cast<std::size_t>(task) < data.size() && data[static_cast<std::size_t>(task)],
          Errc::kInvalidArgument, "no dataset for task " + std::to_string(task));
  return *data[static_cast<std::size_t>(task)];
}

double task_weight(const TrainConfig& cfg, int task, std::size_t num_tasks) {
  if (cfg.task_weights.empty()) return 1.0 / static_cast<double>(num_tasks);
  require(static_cast<std::size_t>(task) < cfg.task_weights.size(), Errc::kInvalidArgument,
          "missing task weight");
  return cfg.task_weights[static_cast<std::size_t>(task)];
}

}  // namespace

StepSet collect_steps(const std::vector<Sample>& samples, std::span<const std::size_t> which,
                      double scale) {
  StepSet set;
  const double per_sample = scale / static_cast<double>(std::max<std::size_t>(which.size(), 1));
  for (std::size_t idx : which) {
    const Sample& s = samples.at(idx);
    const int steps = s.trace.num_steps();
    const int n = s.graph.num_nodes;
    if (steps <= 0 || n <= 0) continue;
    const double w = per_sample / (static_cast<double>(steps) * n);
    for (int j = 0; j < steps; ++j) {
      set.instances.push_back({&s.graph, &s.trace.steps[static_cast<std::size_t>(j)],
                               &s.trace.steps[static_cast<std::size_t>(j + 1)], s.trace.source, w,
                               nullptr});
    }
  }
  return set;
}

TaskMetrics evaluate_task(const BranchingModel& model, const TaskDataset& data, int task,
                          Split split) {
  const auto& samples = split_samples(data, split);
  require(!samples.empty(), Errc::kInvalidArgument, "evaluation split is empty");
  TaskMetrics m;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + kEvalChunk); ++i) idx.push_back(i);
    const double scale = static_cast<double>(idx.size()) / static_cast<double>(samples.size());
    StepSet set = collect_steps(samples, idx, scale);
    if (set.instances.empty()) continue;
    StepBatch batch = make_batch(set.instances);
    Tape tape(model.params());
    Var logits = model.forward(tape, batch, task);
    m.loss += tape.scalar(tape.cross_entropy(logits, batch.width, batch.target, batch.weight));
    const Matrix& z = tape.value(logits);
    for (int r = 0; r < batch.total_nodes; ++r) {
      Eigen::Index best = 0;
      z.row(r).head(batch.width[static_cast<std::size_t>(r)]).maxCoeff(&best);
      if (best == batch.target[static_cast<std::size_t>(r)]) ++correct;
      ++m.predictions;
    }
  }
  m.accuracy = m.predictions ? static_cast<double>(correct) / static_cast<double>(m.predictions) : 0.0;
  return m;
}

std::vector<TaskMetrics> evaluate(const BranchingModel& model, const TaskData& data,
                                  std::span<const int> tasks, Split split) {
  std::vector<TaskMetrics> out;
  for (int t : tasks) out.push_back(evaluate_task(model, data_for(data, t), t, split));
  return out;
}

TrainResult train(BranchingModel& model, const TaskData& data, std::span<const int> tasks,
                  const TrainConfig& cfg) {
  require(!tasks.empty(), Errc::kEmptyTaskSet, "training needs at least one task");
  require(cfg.epochs >= 0, Errc::kInvalidArgument, "epochs must be non-negative");
  require(cfg.batch_size >= 1, Errc::kInvalidArgument, "batch size must be positive");
  require(cfg.frozen_layers >= 0 && cfg.frozen_layers < model.layers(), Errc::kBadLayerIndex,
          "frozen prefix must be shorter than the network");
  for (int t : tasks) {
    const auto& d = data_for(data, t);
    require(!d.train.empty(), Errc::kInvalidArgument, "task has no training samples");
    model.route(t);
  }

  const auto mask = model.trainable_mask(tasks, cfg.frozen_layers);
  AdamHyper hyper;
  hyper.lr = cfg.lr;
  AdamState state;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7a1));

  auto val_loss = [&](std::vector<TaskMetrics>* per_task) {
    double total = 0;
    for (int t : tasks) {
      const auto& d = data_for(data, t);
      if (d.val.empty()) continue;
      TaskMetrics m = evaluate_task(model, d, t, Split::kVal);
      total += task_weight(cfg, t, tasks.size()) * m.loss;
      if (per_task) per_task->push_back(m);
    }
    return total;
  };

  TrainResult result;
  const bool early = cfg.patience > 0 && std::all_of(tasks.begin(), tasks.end(), [&](int t) {
                       return !data_for(data, t).val.empty();
                     });
  result.initial_val_loss = early ? val_loss(nullptr) : 0.0;
  result.best_val_loss = result.initial_val_loss;
  std::vector<double> best_params(model.params().values().begin(), model.params().values().end());
  int since_best = 0;

  std::vector<std::vector<std::size_t>> order(tasks.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::size_t steps = 0;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      const auto& d = data_for(data, tasks[k]);
      order[k].resize(d.train.size());
      std::iota(order[k].begin(), order[k].end(), std::size_t{0});
      std::shuffle(order[k].begin(), order[k].end(), rng);
      steps = std::max(steps, (d.train.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                  static_cast<std::size_t>(cfg.batch_size));
    }
    std::vector<double> train_loss(tasks.size(), 0.0);
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t s = 0; s < steps; ++s) {
      Vector grad = Vector::Zero(static_cast<Eigen::Index>(model.params().dim()));
      for (std::size_t k = 0; k < tasks.size(); ++k) {
        const int t = tasks[k];
        const auto& d = data_for(data, t);
        std::vector<std::size_t> pick;
        for (std::size_t i = 0; i < bs && i < d.train.size(); ++i)
          pick.push_back(order[k][(s * bs + i) % d.train.size()]);
        StepSet set = collect_steps(d.train, pick, task_weight(cfg, t, tasks.size()));
        if (set.instances.empty()) continue;
        StepBatch batch = make_batch(set.instances);
        Tape tape(model.params());
        Var loss = tape.cross_entropy(model.forward(tape, batch, t), batch.width, batch.target,
                                      batch.weight);
        train_loss[k] += tape.scalar(loss) / static_cast<double>(steps);
        grad += tape.backward(loss);
      }
      adam_step(model.params().values(), std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size())),
                state, hyper, mask);
    }
    result.epochs_run = epoch;

    std::vector<TaskMetrics> per_task;
    const double v = val_loss(&per_task);
    for (std::size_t k = 0, m = 0; k < tasks.size(); ++k) {
      CurvePoint p;
      p.epoch = epoch;
      p.task = tasks[k];
      p.train_loss = train_loss[k] / task_weight(cfg, tasks[k], tasks.size());
      if (!data_for(data, tasks[k]).val.empty()) {
        p.val_loss = per_task[m].loss;
        p.val_acc = per_task[m].accuracy;
        ++m;
      }
      result.curve.push_back(p);
    }
    if (cfg.on_epoch) cfg.on_epoch(epoch, model);
    if (!early) continue;
    if (v < result.best_val_loss) {
      result.best_val_loss = v;
      result.best_epoch = epoch;
      std::copy(model.params().values().begin(), model.params().values().end(), best_params.begin());
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (early) {
    std::copy(best_params.begin(), best_params.end(), model.params().values().begin());
  } else {
    result.best_epoch = result.epochs_run;
  }
  return result;
}

BranchingModel train_meta_init(const BranchingModel& model, const TaskData& data,
                               std::span<const int> tasks, int layer, TrainConfig cfg,
                               TrainResult* result) {
  require(layer >= 1 && layer <= model.layers(), Errc::kBadLayerIndex,
          "meta-init layer out of range");
  BranchingModel out = model;
  cfg.frozen_layers = layer - 1;
  TrainResult r = train(out, data, tasks, cfg);
  if (result) *result = std::move(r);
  return out;
}

std::string loss_curve_csv(const TrainResult& result, const ModelConfig& config) {
  std::ostringstream out;
  out << "epoch,task,train_loss,val_loss,val_acc\n";
  for (const auto& p : result.curve) {
    out << p.epoch << ',' << config.task_names.at(static_cast<std::size_t>(p.task)) << ','
        << format_double(p.train_loss) << ',' << format_double(p.val_loss) << ','
        << format_double(p.val_acc) << '\n';
  }
  return out.str();
}

}  // namespace brane
