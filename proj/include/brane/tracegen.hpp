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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace brane {

enum class Algo {
  kBfs,
  kDfs,
  kBellmanFord,
  kDijkstra,
  kPrim,
  kTopoSort,
  kDagShortestPaths,
};

std::string_view algo_name(Algo algo);
Algo parse_algo(std::string_view name);
const std::vector<Algo>& all_algos();

bool needs_source(Algo algo);
bool needs_dag(Algo algo);

struct Edge {
  int u = 0;
  int v = 0;
  double w = 1.0;

  bool operator==(const Edge&) const = default;
};

// Undirected graphs store each edge once with u < v.
struct Graph {
  int num_nodes = 0;
  std::vector<Edge> edges;
  bool directed = false;
  std::uint64_t seed = 0;

  bool operator==(const Graph&) const = default;

  // Out-neighbours (both directions when undirected), ascending by node id.
  struct Arc {
    int to;
    double w;
  };
  std::vector<std::vector<Arc>> adjacency() const;
  std::vector<int> degrees() const;
  std::uint64_t fingerprint() const;
  void validate() const;
};

using LabelRow = std::vector<int>;

// Row j holds every node's predecessor after step j; row 0 is the identity.
struct Trace {
  Algo task = Algo::kBfs;
  std::optional<int> source;
  std::vector<LabelRow> steps;
  std::uint64_t graph_fingerprint = 0;

  int num_steps() const { return static_cast<int>(steps.size()) - 1; }
  int num_nodes() const { return steps.empty() ? 0 : static_cast<int>(steps.front().size()); }

  bool operator==(const Trace&) const = default;
};

enum class WeightMode { kAuto, kUnit, kRandom };
std::string_view weight_mode_name(WeightMode mode);
WeightMode parse_weight_mode(std::string_view name);
bool uses_random_weights(Algo algo, WeightMode mode);

Graph gen_er_graph(int n, double p, bool weighted, std::uint64_t seed);

// ER draw oriented along a random node ranking; always acyclic.
Graph gen_er_dag(int n, double p, bool weighted, std::uint64_t seed);

Trace execute(Algo algo, const Graph& graph, std::optional<int> source);

double trace_overlap(const Trace& a, const Trace& b);

struct Sample {
  Graph graph;
  Trace trace;
};

struct DatasetConfig {
  int n_train = 200;
  int n_val = 32;
  int n_test = 32;
  int nodes_train = 8;
  int nodes_test = 16;
  double p = 0.3;
  std::uint64_t seed = 0;
  WeightMode weights = WeightMode::kAuto;
};

struct TaskDataset {
  Algo task = Algo::kBfs;
  DatasetConfig config;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

enum class Split { kTrain, kVal, kTest };
std::string_view split_name(Split split);
Split parse_split(std::string_view name);
const std::vector<Sample>& split_samples(const TaskDataset& data, Split split);

// Graphs depend on (seed, split, index) only, so every task built from the
// same config sees the same inputs.
TaskDataset make_dataset(Algo algo, const DatasetConfig& config);

std::string serialize_dataset(const TaskDataset& data);
// Checks the header checksum and re-executes every trace.
TaskDataset parse_dataset(std::string_view text);

void save_dataset(const TaskDataset& data, const std::filesystem::path& path);
TaskDataset load_dataset(const std::filesystem::path& path);

}  // namespace brane
