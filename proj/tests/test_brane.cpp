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
#include <algorithm>
#include <string>

#include "brane/brane.hpp"
#include "brane/error.hpp"
#include "doctest.h"

using namespace brane;

namespace {

TaskDataset small_dataset(Algo algo, int n_train, std::uint64_t seed) {
  DatasetConfig dc;
  dc.n_train = n_train;
  dc.n_val = 6;
  dc.n_test = 6;
  dc.nodes_train = 6;
  dc.nodes_test = 6;
  dc.seed = seed;
  return make_dataset(algo, dc);
}

struct Suite {
  std::vector<TaskDataset> sets;
  TaskData data;
  BraneConfig cfg;
};

Suite suite(const std::vector<Algo>& algos, int layers, std::uint64_t seed = 3) {
  Suite s;
  for (auto a : algos) s.sets.push_back(small_dataset(a, 12, seed));
  for (auto& d : s.sets) s.data.push_back(&d);
  for (auto a : algos) s.cfg.model.task_names.emplace_back(algo_name(a));
  s.cfg.model.layers = layers;
  s.cfg.model.hidden = 8;
  s.cfg.model.seed = seed;
  s.cfg.search.m = 12;
  s.cfg.search.dim = 64;
  s.cfg.search.feature_samples = 6;
  s.cfg.search.seed = seed;
  s.cfg.meta_train.epochs = 2;
  s.cfg.meta_train.batch_size = 4;
  s.cfg.meta_train.seed = seed;
  s.cfg.final_train = s.cfg.meta_train;
  s.cfg.final_train.epochs = 3;
  return s;
}

int count_events(const AuditLog& log, const std::string& event) {
  const std::string key = "event=" + event;
  return static_cast<int>(std::count_if(log.lines().begin(), log.lines().end(), [&](const std::string& l) {
    return l == key || l.rfind(key + " ", 0) == 0;
  }));
}

}  // namespace

TEST_CASE("singleton task set short-circuits without training") {
  auto s = suite({Algo::kBfs, Algo::kDfs}, 3);
  const auto model = BranchingModel::new_chain(s.cfg.model);
  SearchState st;
  const auto r = fast_approx_partition(model, s.data, {1}, 1, s.cfg, st);
  CHECK_FALSE(r.trained);
  CHECK(st.training_calls == 0);
  CHECK(st.audit.lines().empty());
  REQUIRE(r.groups.size() == 1);
  CHECK(r.groups[0] == std::vector<int>{1});
  CHECK(r.meta_init.params() == model.path_model(1).params());
}

TEST_CASE("partition rejects the last layer and empty sets") {
  auto s = suite({Algo::kBfs, Algo::kDfs}, 2);
  const auto model = BranchingModel::new_chain(s.cfg.model);
  SearchState st;
  CHECK_THROWS_AS(fast_approx_partition(model, s.data, {0, 1}, 2, s.cfg, st), Error);
  CHECK_THROWS_AS(fast_approx_partition(model, s.data, {}, 1, s.cfg, st), Error);
}

TEST_CASE("partition covers the task set and logs each stage") {
  auto s = suite({Algo::kBfs, Algo::kBellmanFord, Algo::kDfs}, 3);
  const auto model = BranchingModel::new_chain(s.cfg.model);
  SearchState st;
  const auto r = fast_approx_partition(model, s.data, {0, 1, 2}, 1, s.cfg, st);
  CHECK(r.trained);
  CHECK(st.training_calls == 1);
  std::vector<int> seen;
  for (const auto& g : r.groups) seen.insert(seen.end(), g.begin(), g.end());
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<int>{0, 1, 2});
  REQUIRE(r.affinity);
  CHECK(r.affinity->scores.rows() == 3);
  CHECK(r.meta_init.module_count() == 3);
  CHECK(count_events(st.audit, "meta_init") == 1);
  CHECK(count_events(st.audit, "affinity") == 1);
  CHECK(count_events(st.audit, "partition") == 1);
}

TEST_CASE("single task yields a chain and one training call") {
  auto s = suite({Algo::kBfs}, 3);
  const auto r = autobrane(s.data, s.cfg);
  CHECK(r.model.module_count() == 3);
  CHECK(r.state.splits == 0);
  CHECK(r.state.training_calls == 1);
  CHECK(count_events(r.state.audit, "meta_init") == 0);
}

TEST_CASE("one layer never partitions") {
  auto s = suite({Algo::kBfs, Algo::kDfs, Algo::kBellmanFord}, 1);
  const auto r = autobrane(s.data, s.cfg);
  CHECK(r.model.module_count() == 1);
  CHECK(r.state.training_calls == 1);
  CHECK(count_events(r.state.audit, "partition") == 0);
  CHECK(count_events(r.state.audit, "dequeue") == 1);
}

TEST_CASE("forced single groups leave the multitask chain") {
  auto s = suite({Algo::kBfs, Algo::kBellmanFord, Algo::kDfs}, 3);
  s.cfg.search.lambda_grid = {1e6};
  const auto r = autobrane(s.data, s.cfg);
  const auto chain = BranchingModel::new_chain(s.cfg.model);
  CHECK(r.model.serialize_tree() == chain.serialize_tree());
  CHECK(r.model.params().layout_equal(chain.params()));
  CHECK(r.state.splits == 0);
  CHECK(count_events(r.state.audit, "split_elided") == 2);
  CHECK(r.state.training_calls == 3);
}

TEST_CASE("search respects the budget and keeps layers partitioned") {
  auto s = suite({Algo::kBfs, Algo::kBellmanFord, Algo::kDfs, Algo::kDijkstra}, 3);
  s.cfg.search.lambda_grid = {0};
  const auto r = autobrane(s.data, s.cfg);
  const int n = 4;
  CHECK(r.state.training_calls <= n * 3);
  CHECK(r.state.training_calls <= static_cast<int>(r.model.module_count()));
  CHECK_NOTHROW(check_layer_partition(r.model));
  CHECK(count_events(r.state.audit, "budget") == 1);
  CHECK(r.state.audit.lines().back().find("ok=1") != std::string::npos);
  CHECK(r.state.audit.lines().front().rfind("event=start", 0) == 0);
  CHECK(count_events(r.state.audit, "meta_init") + 1 == r.state.training_calls);
}

TEST_CASE("search is deterministic") {
  auto s = suite({Algo::kBfs, Algo::kBellmanFord, Algo::kDfs}, 2);
  const auto a = autobrane(s.data, s.cfg);
  const auto b = autobrane(s.data, s.cfg);
  CHECK(a.state.audit.lines() == b.state.audit.lines());
  CHECK(a.model.params() == b.model.params());
  CHECK(a.model.serialize_tree() == b.model.serialize_tree());
}

TEST_CASE("affinity files land in the output directory") {
  auto s = suite({Algo::kBfs, Algo::kDfs}, 2);
  const auto dir = std::filesystem::temp_directory_path() / "brane_test_affinity";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  s.cfg.out_dir = dir;
  autobrane(s.data, s.cfg);
  CHECK(std::filesystem::exists(dir / "affinity_l1_bfs.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("layer partition check accepts a chain") {
  ModelConfig c;
  c.task_names = {"a", "b"};
  c.layers = 2;
  const auto chain = BranchingModel::new_chain(c);
  CHECK_NOTHROW(check_layer_partition(chain));
}
