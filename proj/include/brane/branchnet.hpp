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

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brane/diffcore.hpp"
#include "brane/tracegen.hpp"

namespace brane {

struct ModelConfig {
  std::vector<std::string> task_names;
  int layers = 3;
  int hidden = 32;
  std::uint64_t seed = 0;

  int num_tasks() const { return static_cast<int>(task_names.size()); }
};

struct TreeNode {
  int id = 0;
  int layer = 1;
  int parent = -1;
  std::vector<int> tasks;  // sorted
  std::vector<int> children;
};

// One teacher-forced prediction: the labels after step j+1 from those after
// step j. `positions` overrides the default v / n position feature.
struct StepInstance {
  const Graph* graph = nullptr;
  const LabelRow* labels = nullptr;
  const LabelRow* target = nullptr;
  std::optional<int> source;
  double weight = 1.0;  // applied to each node row
  const std::vector<double>* positions = nullptr;
};

// Disjoint union of instances, laid out as consecutive node blocks.
struct StepBatch {
  static constexpr int kFeatures = 4;  // is_source, is_self_pointer, degree, position

  int total_nodes = 0;
  Matrix features;          // N x kFeatures
  Matrix pointer_features;  // features of each node's current pointer target
  std::vector<int> edge_src;
  std::vector<int> edge_dst;
  Matrix edge_weight;       // E x 1
  std::vector<int> offsets; // block boundaries, size = instances + 1
  Matrix pointer_pattern;   // [v == label(u)], N x w_max
  Matrix adjacency_pattern; // [v == u or arc v -> u], N x w_max
  std::vector<int> width;   // per row: its block size
  std::vector<int> target;  // per row: local index of the next label (-1 if none)
  std::vector<double> weight;

  int num_instances() const { return static_cast<int>(offsets.size()) - 1; }
};

StepBatch make_batch(std::span<const StepInstance> instances);

// Encode-process-decode message-passing network whose processor layers form
// a tree. Encoder is shared, decoders are per task, and each task runs the
// processor modules on its root-to-leaf path.
class BranchingModel {
 public:
  static BranchingModel new_chain(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  int num_tasks() const { return config_.num_tasks(); }
  int layers() const { return config_.layers; }
  int hidden() const { return config_.hidden; }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int id) const;
  // Node ids for layers 1..L.
  std::vector<int> route(int task) const;
  int node_at(int task, int layer) const { return route(task)[static_cast<std::size_t>(layer - 1)]; }

  // Replaces the subtree below `node_id` with one path per group; each new
  // path copies the weights the group's tasks were using, so outputs are
  // unchanged.
  void split_node(int node_id, const std::vector<std::vector<int>>& partition);

  std::size_t module_count() const { return nodes_.size(); }
  double memory_ratio() const {
    return static_cast<double>(module_count()) / static_cast<double>(layers());
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  std::vector<int> encoder_blocks() const;
  std::vector<int> module_blocks(int node_id) const;
  std::vector<int> decoder_blocks(int task) const;
  // 1 for coordinates a task-set update may touch: the task's route modules
  // at layers > frozen_layers, its decoder, and the encoder if nothing is
  // frozen.
  std::vector<char> trainable_mask(std::span<const int> tasks, int frozen_layers) const;

  // Logits (N x w_max) for every node of the batch under `task`'s route.
  Var forward(Tape& tape, const StepBatch& batch, int task) const;
  Matrix forward_step(const Graph& graph, int task, const LabelRow& labels,
                      std::optional<int> source,
                      const std::vector<double>* positions = nullptr) const;

  // Chain model holding the encoder, `task`'s route and every decoder. Its
  // layout is layer-sorted, so ParamStore::suffix_offset applies.
  BranchingModel path_model(int task) const;
  // Copies chain weights for layers >= from_layer into the route shared by
  // `tasks`, plus their decoders (and the encoder when from_layer == 1).
  void install_path(const BranchingModel& chain, std::span<const int> tasks, int from_layer);

  std::string serialize_tree() const;
  std::string to_dot() const;
  void save(const std::filesystem::path& dir) const;
  static BranchingModel load(const std::filesystem::path& dir);

 private:
  struct ModuleBlocks {
    int msg_src, msg_dst, msg_w, msg_b, upd_self, upd_agg, upd_b;
  };
  struct DecoderBlocks {
    int bilinear, pointer, adjacency;
  };
  struct EncoderBlocks {
    int self, pointer, bias;
  };

  int index_of(int node_id) const;
  void check_task(int task) const;
  // Rebuilds params_ for the current nodes_; new node weights are copied
  // from `copy_from[id]` in `old` when present.
  void rebuild(const ParamStore& old, const std::vector<std::pair<int, int>>& copy_from,
               const BranchingModel* old_model);
  void layout_blocks();
  static BranchingModel from_tree_text(std::string_view text);

  ModelConfig config_;
  ParamStore params_;
  std::vector<TreeNode> nodes_;  // sorted by (layer, id)
  int next_id_ = 0;
  EncoderBlocks enc_{};
  std::vector<ModuleBlocks> modules_;  // parallel to nodes_
  std::vector<DecoderBlocks> decoders_;
};

}  // namespace brane
