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

#include "brane/brane.hpp"

#include <algorithm>
#include <sstream>

#include "brane/error.hpp"
#include "brane/util.hpp"

namespace brane {
namespace {

std::string task_list(const ModelConfig& c, const std::vector<int>& tasks) {
  std::string out;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    out += (i ? "," : "") + c.task_names.at(static_cast<std::size_t>(tasks[i]));
  return out;
}

std::string group_list(const ModelConfig& c, const std::vector<std::vector<int>>& groups) {
  std::string out;
  for (std::size_t g = 0; g < groups.size(); ++g) out += (g ? "|" : "") + task_list(c, groups[g]);
  return out;
}

std::string params_hash(const ParamStore& p) {
  Fnv1a h;
  const auto v = p.values();
  h.update(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)));
  return h.hex();
}

}  // namespace

void AuditLog::add(const std::string& event,
                   const std::vector<std::pair<std::string, std::string>>& fields) {
  std::string line = "event=" + event;
  for (const auto& [k, v] : fields) line += " " + k + "=" + v;
  lines_.push_back(std::move(line));
}

std::string AuditLog::text() const {
  std::string out;
  for (const auto& l : lines_) out += l + "\n";
  return out;
}

PartitionResult fast_approx_partition(const BranchingModel& model, const TaskData& data,
                                      const std::vector<int>& tasks, int layer,
                                      const BraneConfig& cfg, SearchState& state) {
  require(!tasks.empty(), Errc::kEmptyTaskSet, "partition needs tasks");
  require(layer >= 1 && layer < model.layers(), Errc::kBadLayerIndex,
          "partitioning needs a layer below the last");
  PartitionResult out{{tasks}, model.path_model(tasks[0]), false, std::nullopt, std::nullopt};
  if (tasks.size() == 1) return out;

  const ModelConfig& mc = model.config();
  TrainResult tr;
  out.meta_init = train_meta_init(model, data, tasks, layer, cfg.meta_train, &tr).path_model(tasks[0]);
  out.trained = true;
  ++state.training_calls;
  state.audit.add("meta_init", {{"layer", std::to_string(layer)},
                                {"tasks", task_list(mc, tasks)},
                                {"epochs", std::to_string(tr.epochs_run)},
                                {"best_val", format_double(tr.best_val_loss)},
                                {"hash", params_hash(out.meta_init.params())}});

  const SearchConfig& sc = cfg.search;
  FeatureOptions fo;
  fo.layer = layer;
  fo.seed = mix_seed(sc.seed, static_cast<std::uint64_t>(layer) * 1000 + static_cast<std::uint64_t>(tasks[0]));
  const std::size_t p = out.meta_init.params().dim() - out.meta_init.params().suffix_offset(layer);
  fo.dim = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(sc.dim), p));
  fo.max_samples = sc.feature_samples;
  fo.split = Split::kTrain;
  const ProjectedFeatureSet train = extract_features(out.meta_init, data, tasks, fo);
  fo.max_samples = sc.val_samples;
  fo.split = Split::kVal;
  const ProjectedFeatureSet val = extract_features(out.meta_init, data, tasks, fo);

  const int alpha_max = std::min<int>(sc.alpha_max, static_cast<int>(tasks.size()));
  const int alpha_min = std::min(std::max(sc.alpha_min, 2), alpha_max);
  const SubsetPlan plan = make_subset_plan(tasks, sc.m, alpha_min, alpha_max, fo.seed);
  const SubsetLossTable table = estimate_subset_losses(train, plan, val, sc.lambda2);
  out.affinity = affinity_matrix(table, layer);

  std::string csv_path = "-";
  if (cfg.out_dir) {
    const auto path = *cfg.out_dir / ("affinity_l" + std::to_string(layer) + "_" +
                                      mc.task_names.at(static_cast<std::size_t>(tasks[0])) + ".csv");
    write_file_atomic(path, affinity_csv(*out.affinity, mc));
    csv_path = path.string();
  }
  state.audit.add("affinity", {{"layer", std::to_string(layer)},
                               {"tasks", task_list(mc, tasks)},
                               {"rows", std::to_string(train.rows())},
                               {"d", std::to_string(fo.dim)},
                               {"csv", csv_path}});

  const Matrix a = clustering_affinity(out.affinity->scores);
  out.selection = select_partition(a, sc.lambda_grid, model.layers(), layer, sc.max_growth, 1);
  out.groups.clear();
  for (const auto& g : out.selection->partition) {
    std::vector<int> ids;
    for (int idx : g) ids.push_back(out.affinity->tasks[static_cast<std::size_t>(idx)]);
    out.groups.push_back(std::move(ids));
  }
  std::vector<std::string> names;
  for (int t : out.affinity->tasks) names.push_back(mc.task_names.at(static_cast<std::size_t>(t)));
  std::istringstream detail(describe_selection(*out.selection, names));
  for (std::string line; std::getline(detail, line);) state.audit.add("cluster", {{"detail", "\"" + line + "\""}});
  state.audit.add("partition", {{"layer", std::to_string(layer)},
                                {"groups", group_list(mc, out.groups)},
                                {"density", format_double(out.selection->density)}});
  return out;
}

void check_layer_partition(const BranchingModel& model) {
  for (int l = 1; l <= model.layers(); ++l) {
    std::vector<int> seen;
    for (const auto& n : model.nodes())
      if (n.layer == l) seen.insert(seen.end(), n.tasks.begin(), n.tasks.end());
    std::sort(seen.begin(), seen.end());
    bool ok = static_cast<int>(seen.size()) == model.num_tasks();
    for (std::size_t i = 0; ok && i < seen.size(); ++i) ok = seen[i] == static_cast<int>(i);
    require(ok, Errc::kBadPartition, "layer " + std::to_string(l) + " does not partition the tasks");
  }
}

BraneResult autobrane(const TaskData& data, const BraneConfig& cfg) {
  const ModelConfig& mc = cfg.model;
  const int n = mc.num_tasks();
  require(n >= 1, Errc::kEmptyTaskSet, "autobrane needs tasks");
  BraneResult res{BranchingModel::new_chain(mc), {}};
  SearchState& st = res.state;
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) all[static_cast<std::size_t>(t)] = t;
  st.queue.push_back({all, 1});
  st.audit.add("start", {{"tasks", task_list(mc, all)},
                         {"layers", std::to_string(mc.layers)},
                         {"hidden", std::to_string(mc.hidden)},
                         {"seed", std::to_string(mc.seed)}});

  while (!st.queue.empty()) {
    QueueEntry e = st.queue.front();
    st.queue.pop_front();
    st.audit.add("dequeue", {{"layer", std::to_string(e.layer)}, {"tasks", task_list(mc, e.tasks)}});
    if (e.layer >= mc.layers || e.tasks.size() < 2) continue;

    PartitionResult pr = fast_approx_partition(res.model, data, e.tasks, e.layer, cfg, st);
    res.model.install_path(pr.meta_init, e.tasks, e.layer);
    const int node = res.model.node_at(e.tasks[0], e.layer);
    if (pr.groups.size() > 1) {
      res.model.split_node(node, pr.groups);
      ++st.splits;
      st.audit.add("split", {{"node", std::to_string(node)},
                             {"layer", std::to_string(e.layer)},
                             {"groups", group_list(mc, pr.groups)},
                             {"modules", std::to_string(res.model.module_count())}});
    } else {
      st.audit.add("split_elided", {{"node", std::to_string(node)}, {"layer", std::to_string(e.layer)}});
    }
    check_layer_partition(res.model);
    for (auto& g : pr.groups) st.queue.push_back({std::move(g), e.layer + 1});
  }

  TrainResult tr = train(res.model, data, all, cfg.final_train);
  ++st.training_calls;
  st.audit.add("final_train", {{"tasks", task_list(mc, all)},
                               {"epochs", std::to_string(tr.epochs_run)},
                               {"best_val", format_double(tr.best_val_loss)},
                               {"hash", params_hash(res.model.params())}});

  const int limit = n * mc.layers;
  st.audit.add("budget", {{"training_calls", std::to_string(st.training_calls)},
                          {"limit", std::to_string(limit)},
                          {"modules", std::to_string(res.model.module_count())},
                          {"ok", st.training_calls <= limit ? "1" : "0"}});
  require(st.training_calls <= limit, Errc::kInvalidArgument,
          "training-call budget exceeded: " + std::to_string(st.training_calls) + " > " +
              std::to_string(limit));
  return res;
}

}  // namespace brane
