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

#include <cmath>

#include "brane/error.hpp"
#include "brane/trainer.hpp"
#include "doctest.h"

using namespace brane;

namespace {

ModelConfig config(std::vector<std::string> names, int layers = 2, int hidden = 8) {
  ModelConfig c;
  c.task_names = std::move(names);
  c.layers = layers;
  c.hidden = hidden;
  c.seed = 5;
  return c;
}

TaskDataset small_dataset(Algo algo, int n_train, std::uint64_t seed, int nodes = 6) {
  DatasetConfig dc;
  dc.n_train = n_train;
  dc.n_val = 4;
  dc.n_test = 4;
  dc.nodes_train = nodes;
  dc.nodes_test = nodes;
  dc.seed = seed;
  return make_dataset(algo, dc);
}

double row_ce(const Matrix& logits, int row, int target) {
  const double mx = logits.row(row).maxCoeff();
  const double lse = mx + std::log((logits.row(row).array() - mx).exp().sum());
  return lse - logits(row, target);
}

}  // namespace

TEST_CASE("loss nests nodes within steps within graphs") {
  auto model = BranchingModel::new_chain(config({"bfs"}));
  TaskDataset d;
  d.task = Algo::kBfs;
  Graph two;
  two.num_nodes = 2;
  two.edges = {{0, 1, 1.0}};
  Graph three;
  three.num_nodes = 3;
  three.edges = {{0, 1, 1.0}, {1, 2, 1.0}};
  d.val.push_back({two, execute(Algo::kBfs, two, 0)});
  d.val.push_back({three, execute(Algo::kBfs, three, 0)});
  REQUIRE(d.val[0].trace.steps == std::vector<LabelRow>{{0, 1}, {0, 0}});
  REQUIRE(d.val[1].trace.num_steps() == 2);

  double expected = 0;
  for (const auto& s : d.val) {
    double graph_loss = 0;
    for (int j = 0; j < s.trace.num_steps(); ++j) {
      Matrix z = model.forward_step(s.graph, 0, s.trace.steps[j], s.trace.source);
      double step_loss = 0;
      for (int u = 0; u < s.graph.num_nodes; ++u) step_loss += row_ce(z, u, s.trace.steps[j + 1][u]);
      graph_loss += step_loss / s.graph.num_nodes;
    }
    expected += graph_loss / s.trace.num_steps();
  }
  expected /= 2;
  TaskMetrics m = evaluate_task(model, d, 0, Split::kVal);
  CHECK(m.loss == doctest::Approx(expected).epsilon(1e-12));
  CHECK(m.predictions == 1 * 2 + 2 * 3);
}

TEST_CASE("accuracy counts argmax hits") {
  auto model = BranchingModel::new_chain(config({"dfs"}));
  for (double& x : model.params().values()) x = 0;
  TaskDataset d = small_dataset(Algo::kDfs, 2, 3);
  // Constant logits pick candidate 0 everywhere.
  std::size_t zeros = 0, total = 0;
  for (const auto& s : d.test)
    for (int j = 1; j <= s.trace.num_steps(); ++j)
      for (int label : s.trace.steps[j]) {
        zeros += label == 0;
        ++total;
      }
  TaskMetrics m = evaluate_task(model, d, 0, Split::kTest);
  CHECK(m.predictions == total);
  CHECK(m.accuracy == doctest::Approx(static_cast<double>(zeros) / total));
}

TEST_CASE("zero epochs leaves the model unchanged") {
  auto model = BranchingModel::new_chain(config({"bfs"}));
  auto before = model.params();
  TaskDataset d = small_dataset(Algo::kBfs, 4, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  auto r = train(model, {&d}, std::vector<int>{0}, cfg);
  CHECK(model.params() == before);
  CHECK(r.epochs_run == 0);
  CHECK(r.curve.empty());
}

TEST_CASE("memorizes a single graph") {
  auto model = BranchingModel::new_chain(config({"bfs"}, 3, 16));
  TaskDataset d = small_dataset(Algo::kBfs, 1, 9, 8);
  d.val.clear();
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.lr = 1e-2;
  train(model, {&d}, std::vector<int>{0}, cfg);
  d.val = d.train;
  CHECK(evaluate_task(model, d, 0, Split::kVal).accuracy >= 0.99);
}

TEST_CASE("frozen layers keep their bytes") {
  auto model = BranchingModel::new_chain(config({"bfs", "dfs"}, 3));
  model.split_node(1, {{0}, {1}});
  TaskDataset bfs = small_dataset(Algo::kBfs, 6, 2);
  TaskDataset dfs = small_dataset(Algo::kDfs, 6, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  const std::vector<int> tasks = {0};
  auto out = train_meta_init(model, {&bfs, &dfs}, tasks, 3, cfg);
  auto changed = [&](int block) {
    auto a = model.params().view(block);
    auto b = out.params().view(block);
    return a != b;
  };
  for (int b : model.encoder_blocks()) CHECK_FALSE(changed(b));
  for (const auto& node : model.nodes()) {
    const bool trainable = node.layer == 3 && node.tasks == std::vector<int>{0};
    for (int b : model.module_blocks(node.id)) {
      if (!trainable) CHECK_FALSE(changed(b));
    }
  }
  bool any = false;
  for (int b : model.module_blocks(model.node_at(0, 3))) any = any || changed(b);
  for (int b : model.decoder_blocks(0)) any = any || changed(b);
  CHECK(any);
  for (int b : model.decoder_blocks(1)) CHECK_FALSE(changed(b));
}

TEST_CASE("training is deterministic and lowers the objective") {
  TaskDataset bfs = small_dataset(Algo::kBfs, 16, 4);
  TaskDataset bf = small_dataset(Algo::kBellmanFord, 16, 4);
  TaskData data = {&bfs, &bf};
  auto model = BranchingModel::new_chain(config({"bfs", "bellman_ford"}));
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 4;
  cfg.seed = 11;
  const std::vector<int> tasks = {0, 1};
  TrainResult r1, r2;
  auto a = train_meta_init(model, data, tasks, 1, cfg, &r1);
  auto b = train_meta_init(model, data, tasks, 1, cfg, &r2);
  CHECK(a.params() == b.params());
  CHECK(r1.curve.size() == 16);
  CHECK(r1.best_val_loss < r1.initial_val_loss);
  // Smoothed train loss trends down.
  auto window = [&](int lo, int hi) {
    double s = 0;
    for (const auto& p : r1.curve)
      if (p.epoch >= lo && p.epoch <= hi) s += p.train_loss;
    return s;
  };
  CHECK(window(6, 8) < window(1, 3));
  auto identity = train_meta_init(model, data, tasks, 2, TrainConfig{.epochs = 0});
  CHECK(identity.params() == model.params());

  const std::string csv = loss_curve_csv(r1, model.config());
  CHECK(csv.rfind("epoch,task,train_loss,val_loss,val_acc\n1,bfs,", 0) == 0);
}

TEST_CASE("early stopping restores the best weights") {
  TaskDataset bfs = small_dataset(Algo::kBfs, 8, 6);
  auto model = BranchingModel::new_chain(config({"bfs"}));
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 0.3;  // unstable on purpose
  cfg.patience = 2;
  auto r = train(model, {&bfs}, std::vector<int>{0}, cfg);
  CHECK(r.epochs_run <= 40);
  const double final_val = evaluate_task(model, bfs, 0, Split::kVal).loss;
  CHECK(final_val == doctest::Approx(r.best_val_loss).epsilon(1e-12));
  CHECK(r.best_val_loss <= r.initial_val_loss);
}

TEST_CASE("training errors") {
  auto model = BranchingModel::new_chain(config({"bfs"}));
  TaskDataset d = small_dataset(Algo::kBfs, 2, 1);
  try {
    train(model, {&d}, std::vector<int>{}, TrainConfig{});
    FAIL("expected EmptyTaskSet");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kEmptyTaskSet);
  }
  TrainConfig frozen;
  frozen.frozen_layers = 2;
  CHECK_THROWS_AS(train(model, {&d}, std::vector<int>{0}, frozen), Error);
  CHECK_THROWS_AS(train(model, {nullptr}, std::vector<int>{0}, TrainConfig{}), Error);
  CHECK_THROWS_AS(train_meta_init(model, {&d}, std::vector<int>{0}, 0, TrainConfig{}), Error);
}
