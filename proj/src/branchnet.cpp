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

#include "brane/branchnet.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "brane/error.hpp"
#include "brane/util.hpp"

namespace brane {
namespace {

std::string module_name(int id, const char* part) {
  return "node" + std::to_string(id) + "." + part;
}

std::string decoder_name(int task, const char* part) {
  return "dec" + std::to_string(task) + "." + part;
}

void copy_block(ParamStore& dst, int dst_block, const ParamStore& src, int src_block) {
  require(src_block >= 0, Errc::kShapeMismatch, "missing source block");
  auto to = dst.view(dst_block);
  auto from = src.view(src_block);
  require(to.rows() == from.rows() && to.cols() == from.cols(), Errc::kShapeMismatch,
          "block shapes differ");
  to = from;
}

}  // namespace

StepBatch make_batch(std::span<const StepInstance> instances) {
  StepBatch b;
  b.offsets.push_back(0);
  int wmax = 0;
  for (const auto& inst : instances) {
    require(inst.graph && inst.labels, Errc::kInvalidArgument, "instance without graph/labels");
    const int n = inst.graph->num_nodes;
    require(static_cast<int>(inst.labels->size()) == n, Errc::kShapeMismatch,
            "label row length differs from node count");
    b.total_nodes += n;
    b.offsets.push_back(b.total_nodes);
    wmax = std::max(wmax, n);
  }
  const int total = b.total_nodes;
  b.features = Matrix::Zero(total, StepBatch::kFeatures);
  b.pointer_features = Matrix::Zero(total, StepBatch::kFeatures);
  b.pointer_pattern = Matrix::Zero(total, wmax);
  b.adjacency_pattern = Matrix::Zero(total, wmax);
  b.width.reserve(static_cast<std::size_t>(total));
  b.target.reserve(static_cast<std::size_t>(total));
  b.weight.reserve(static_cast<std::size_t>(total));
  std::vector<double> weights;
  for (std::size_t k = 0; k < instances.size(); ++k) {
    const auto& inst = instances[k];
    const Graph& g = *inst.graph;
    const LabelRow& labels = *inst.labels;
    const int n = g.num_nodes;
    const int o = b.offsets[k];
    const auto deg = g.degrees();
    const double deg_scale = n > 1 ? 1.0 / (n - 1) : 1.0;
    for (int v = 0; v < n; ++v) {
      require(labels[v] >= 0 && labels[v] < n, Errc::kInvalidArgument, "label out of range");
      b.features(o + v, 0) = inst.source && *inst.source == v ? 1.0 : 0.0;
      b.features(o + v, 1) = labels[v] == v ? 1.0 : 0.0;
      b.features(o + v, 2) = deg[v] * deg_scale;
      b.features(o + v, 3) = inst.positions ? (*inst.positions)[v] : static_cast<double>(v) / n;
    }
    for (int v = 0; v < n; ++v) {
      b.pointer_features.row(o + v) = b.features.row(o + labels[v]);
      b.pointer_pattern(o + v, labels[v]) = 1.0;
      b.adjacency_pattern(o + v, v) = 1.0;
      b.edge_src.push_back(o + v);
      b.edge_dst.push_back(o + v);
      weights.push_back(0.0);
    }
    for (const Edge& e : g.edges) {
      b.edge_src.push_back(o + e.u);
      b.edge_dst.push_back(o + e.v);
      weights.push_back(e.w);
      b.adjacency_pattern(o + e.v, e.u) = 1.0;
      if (!g.directed) {
        b.edge_src.push_back(o + e.v);
        b.edge_dst.push_back(o + e.u);
        weights.push_back(e.w);
        b.adjacency_pattern(o + e.u, e.v) = 1.0;
      }
    }
    for (int v = 0; v < n; ++v) {
      b.width.push_back(n);
      b.target.push_back(inst.target ? (*inst.target)[v] : -1);
      b.weight.push_back(inst.weight);
    }
  }
  b.edge_weight = Eigen::Map<Matrix>(weights.data(), static_cast<Eigen::Index>(weights.size()), 1);
  return b;
}

BranchingModel BranchingModel::new_chain(const ModelConfig& config) {
  require(config.layers >= 1, Errc::kInvalidArgument, "need at least one layer");
  require(config.hidden >= 1, Errc::kInvalidArgument, "hidden width must be positive");
  require(config.num_tasks() >= 1, Errc::kInvalidArgument, "need at least one task");
  BranchingModel m;
  m.config_ = config;
  std::vector<int> all(static_cast<std::size_t>(config.num_tasks()));
  for (int t = 0; t < config.num_tasks(); ++t) all[static_cast<std::size_t>(t)] = t;
  for (int l = 1; l <= config.layers; ++l) {
    TreeNode node;
    node.id = m.next_id_++;
    node.layer = l;
    node.parent = l == 1 ? -1 : node.id - 1;
    node.tasks = all;
    if (l < config.layers) node.children = {node.id + 1};
    m.nodes_.push_back(node);
  }
  m.layout_blocks();
  m.params_.seed = config.seed;
  const int h = config.hidden;
  const int f = StepBatch::kFeatures;
  auto init = [&](int block, int fan_in) {
    init_uniform(m.params_, block, fan_in, mix_seed(config.seed, static_cast<std::uint64_t>(block)));
  };
  init(m.enc_.self, f);
  init(m.enc_.pointer, f);
  for (const auto& mod : m.modules_) {
    init(mod.msg_src, 2 * h + 1);
    init(mod.msg_dst, 2 * h + 1);
    init(mod.msg_w, 2 * h + 1);
    init(mod.upd_self, 2 * h);
    init(mod.upd_agg, 2 * h);
  }
  for (const auto& dec : m.decoders_) init(dec.bilinear, h);
  return m;
}

void BranchingModel::layout_blocks() {
  std::sort(nodes_.begin(), nodes_.end(), [](const TreeNode& a, const TreeNode& b) {
    return std::tie(a.layer, a.id) < std::tie(b.layer, b.id);
  });
  const int h = config_.hidden;
  const int f = StepBatch::kFeatures;
  ParamStore p;
  p.seed = config_.seed;
  enc_.self = p.add_block(1, "enc.self", f, h);
  enc_.pointer = p.add_block(1, "enc.pointer", f, h);
  enc_.bias = p.add_block(1, "enc.bias", 1, h);
  modules_.clear();
  for (const auto& n : nodes_) {
    ModuleBlocks mb{};
    mb.msg_src = p.add_block(n.layer, module_name(n.id, "msg_src"), h, h);
    mb.msg_dst = p.add_block(n.layer, module_name(n.id, "msg_dst"), h, h);
    mb.msg_w = p.add_block(n.layer, module_name(n.id, "msg_w"), 1, h);
    mb.msg_b = p.add_block(n.layer, module_name(n.id, "msg_b"), 1, h);
    mb.upd_self = p.add_block(n.layer, module_name(n.id, "upd_self"), h, h);
    mb.upd_agg = p.add_block(n.layer, module_name(n.id, "upd_agg"), h, h);
    mb.upd_b = p.add_block(n.layer, module_name(n.id, "upd_b"), 1, h);
    modules_.push_back(mb);
  }
  decoders_.clear();
  for (int t = 0; t < num_tasks(); ++t) {
    DecoderBlocks db{};
    db.bilinear = p.add_block(config_.layers, decoder_name(t, "bilinear"), h, h);
    db.pointer = p.add_block(config_.layers, decoder_name(t, "pointer"), 1, 1);
    db.adjacency = p.add_block(config_.layers, decoder_name(t, "adjacency"), 1, 1);
    decoders_.push_back(db);
  }
  params_ = std::move(p);
}

int BranchingModel::index_of(int node_id) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].id == node_id) return static_cast<int>(i);
  fail(Errc::kInvalidArgument, "no tree node with id " + std::to_string(node_id));
}

const TreeNode& BranchingModel::node(int id) const {
  return nodes_[static_cast<std::size_t>(index_of(id))];
}

void BranchingModel::check_task(int task) const {
  require(task >= 0 && task < num_tasks(), Errc::kUnknownTask,
          "unknown task index " + std::to_string(task));
}

std::vector<int> BranchingModel::route(int task) const {
  check_task(task);
  std::vector<int> path;
  for (int l = 1; l <= layers(); ++l) {
    for (const auto& n : nodes_) {
      if (n.layer == l && std::binary_search(n.tasks.begin(), n.tasks.end(), task)) {
        path.push_back(n.id);
        break;
      }
    }
  }
  require(static_cast<int>(path.size()) == layers(), Errc::kInvalidArgument,
          "task route is not a full root-to-leaf path");
  return path;
}

void BranchingModel::split_node(int node_id, const std::vector<std::vector<int>>& partition) {
  const TreeNode target = node(node_id);
  require(target.layer < layers(), Errc::kLeafSplit, "cannot split a node at the last layer");
  std::set<int> seen;
  std::size_t covered = 0;
  for (const auto& group : partition) {
    require(!group.empty(), Errc::kBadPartition, "empty group in partition");
    for (int t : group) {
      require(std::binary_search(target.tasks.begin(), target.tasks.end(), t),
              Errc::kBadPartition, "partition names a task outside the node");
      require(seen.insert(t).second, Errc::kBadPartition, "partition groups overlap");
      ++covered;
    }
  }
  require(covered == target.tasks.size(), Errc::kBadPartition,
          "partition does not cover the node's tasks");

  // Old routes decide which weights each new path copies.
  std::map<int, std::vector<int>> old_routes;
  for (int t : target.tasks) old_routes[t] = route(t);

  std::set<int> doomed;
  std::vector<int> frontier = target.children;
  while (!frontier.empty()) {
    int id = frontier.back();
    frontier.pop_back();
    doomed.insert(id);
    for (int c : node(id).children) frontier.push_back(c);
  }
  const BranchingModel old = *this;
  std::erase_if(nodes_, [&](const TreeNode& n) { return doomed.count(n.id) > 0; });
  TreeNode& parent = nodes_[static_cast<std::size_t>(index_of(node_id))];
  parent.children.clear();

  std::vector<std::pair<int, int>> copy_from;
  std::vector<TreeNode> fresh;
  for (auto group : partition) {
    std::sort(group.begin(), group.end());
    const auto& src_route = old_routes[group.front()];
    int prev = node_id;
    for (int l = target.layer + 1; l <= layers(); ++l) {
      TreeNode n;
      n.id = next_id_++;
      n.layer = l;
      n.parent = prev;
      n.tasks = group;
      copy_from.emplace_back(n.id, src_route[static_cast<std::size_t>(l - 1)]);
      if (prev == node_id) {
        parent.children.push_back(n.id);
      } else {
        fresh.back().children.push_back(n.id);
      }
      fresh.push_back(n);
      prev = n.id;
    }
  }
  for (auto& n : fresh) nodes_.push_back(std::move(n));
  rebuild(old.params_, copy_from, &old);
}

void BranchingModel::rebuild(const ParamStore& old, const std::vector<std::pair<int, int>>& copy_from,
                             const BranchingModel* old_model) {
  layout_blocks();
  copy_block(params_, enc_.self, old, old_model->enc_.self);
  copy_block(params_, enc_.pointer, old, old_model->enc_.pointer);
  copy_block(params_, enc_.bias, old, old_model->enc_.bias);
  for (int t = 0; t < num_tasks(); ++t) {
    const auto& d = decoders_[static_cast<std::size_t>(t)];
    const auto& od = old_model->decoders_[static_cast<std::size_t>(t)];
    copy_block(params_, d.bilinear, old, od.bilinear);
    copy_block(params_, d.pointer, old, od.pointer);
    copy_block(params_, d.adjacency, old, od.adjacency);
  }
  std::map<int, int> source_of;
  for (auto [dst, src] : copy_from) source_of[dst] = src;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    int src = nodes_[i].id;
    if (auto it = source_of.find(src); it != source_of.end()) src = it->second;
    const auto& to = modules_[i];
    const auto& from = old_model->modules_[static_cast<std::size_t>(old_model->index_of(src))];
    copy_block(params_, to.msg_src, old, from.msg_src);
    copy_block(params_, to.msg_dst, old, from.msg_dst);
    copy_block(params_, to.msg_w, old, from.msg_w);
    copy_block(params_, to.msg_b, old, from.msg_b);
    copy_block(params_, to.upd_self, old, from.upd_self);
    copy_block(params_, to.upd_agg, old, from.upd_agg);
    copy_block(params_, to.upd_b, old, from.upd_b);
  }
}

std::vector<int> BranchingModel::encoder_blocks() const {
  return {enc_.self, enc_.pointer, enc_.bias};
}

std::vector<int> BranchingModel::module_blocks(int node_id) const {
  const auto& m = modules_[static_cast<std::size_t>(index_of(node_id))];
  return {m.msg_src, m.msg_dst, m.msg_w, m.msg_b, m.upd_self, m.upd_agg, m.upd_b};
}

std::vector<int> BranchingModel::decoder_blocks(int task) const {
  check_task(task);
  const auto& d = decoders_[static_cast<std::size_t>(task)];
  return {d.bilinear, d.pointer, d.adjacency};
}

std::vector<char> BranchingModel::trainable_mask(std::span<const int> tasks,
                                                 int frozen_layers) const {
  std::vector<char> mask(params_.dim(), 0);
  auto mark = [&](int block) {
    const auto& b = params_.block(block);
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size(), 1);
  };
  if (frozen_layers == 0)
    for (int b : encoder_blocks()) mark(b);
  for (int t : tasks) {
    auto path = route(t);
    for (int l = frozen_layers + 1; l <= layers(); ++l)
      for (int b : module_blocks(path[static_cast<std::size_t>(l - 1)])) mark(b);
    for (int b : decoder_blocks(t)) mark(b);
  }
  return mask;
}

Var BranchingModel::forward(Tape& tape, const StepBatch& batch, int task) const {
  const auto path = route(task);
  const int n = batch.total_nodes;
  Var x = tape.constant(batch.features);
  Var xp = tape.constant(batch.pointer_features);
  Var h = tape.add_row(tape.add(tape.matmul(x, tape.param(enc_.self)),
                                tape.matmul(xp, tape.param(enc_.pointer))),
                       tape.param(enc_.bias));
  Var ew = tape.constant(batch.edge_weight);
  for (int id : path) {
    const auto& m = modules_[static_cast<std::size_t>(index_of(id))];
    Var from_src = tape.gather_rows(tape.matmul(h, tape.param(m.msg_src)), batch.edge_src);
    Var from_dst = tape.gather_rows(tape.matmul(h, tape.param(m.msg_dst)), batch.edge_dst);
    Var msg = tape.add(tape.add(from_src, from_dst), tape.matmul(ew, tape.param(m.msg_w)));
    msg = tape.relu(tape.add_row(msg, tape.param(m.msg_b)));
    Var agg = tape.segment_max(msg, batch.edge_dst, n);
    Var upd = tape.add(tape.matmul(h, tape.param(m.upd_self)), tape.matmul(agg, tape.param(m.upd_agg)));
    h = tape.add(tape.relu(tape.add_row(upd, tape.param(m.upd_b))), h);
  }
  const auto& d = decoders_[static_cast<std::size_t>(task)];
  Var q = tape.matmul(h, tape.param(d.bilinear));
  Var scores = tape.block_pair_scores(q, h, batch.offsets);
  scores = tape.add_scaled(scores, batch.pointer_pattern, tape.param(d.pointer));
  return tape.add_scaled(scores, batch.adjacency_pattern, tape.param(d.adjacency));
}

Matrix BranchingModel::forward_step(const Graph& graph, int task, const LabelRow& labels,
                                    std::optional<int> source,
                                    const std::vector<double>* positions) const {
  check_task(task);
  StepInstance inst{&graph, &labels, nullptr, source, 1.0, positions};
  StepBatch batch = make_batch(std::span<const StepInstance>(&inst, 1));
  Tape tape(params_);
  return tape.value(forward(tape, batch, task));
}

BranchingModel BranchingModel::path_model(int task) const {
  const auto path = route(task);
  BranchingModel chain;
  chain.config_ = config_;
  for (int l = 1; l <= layers(); ++l) {
    TreeNode n;
    n.id = chain.next_id_++;
    n.layer = l;
    n.parent = l == 1 ? -1 : n.id - 1;
    for (int t = 0; t < num_tasks(); ++t) n.tasks.push_back(t);
    if (l < layers()) n.children = {n.id + 1};
    chain.nodes_.push_back(n);
  }
  std::vector<std::pair<int, int>> copy_from;
  for (int l = 1; l <= layers(); ++l) copy_from.emplace_back(l - 1, path[static_cast<std::size_t>(l - 1)]);
  chain.rebuild(params_, copy_from, this);
  return chain;
}

void BranchingModel::install_path(const BranchingModel& chain, std::span<const int> tasks,
                                  int from_layer) {
  require(!tasks.empty(), Errc::kEmptyTaskSet, "install_path needs tasks");
  require(from_layer >= 1 && from_layer <= layers(), Errc::kBadLayerIndex, "bad layer");
  require(chain.layers() == layers() && chain.hidden() == hidden() &&
              chain.num_tasks() == num_tasks() && chain.module_count() == static_cast<std::size_t>(layers()),
          Errc::kShapeMismatch, "install_path expects a chain of the same architecture");
  const auto path = route(tasks[0]);
  for (int t : tasks) {
    auto other = route(t);
    for (int l = from_layer; l <= layers(); ++l)
      require(other[static_cast<std::size_t>(l - 1)] == path[static_cast<std::size_t>(l - 1)],
              Errc::kInvalidArgument, "tasks do not share a route below from_layer");
  }
  if (from_layer == 1) {
    copy_block(params_, enc_.self, chain.params_, chain.enc_.self);
    copy_block(params_, enc_.pointer, chain.params_, chain.enc_.pointer);
    copy_block(params_, enc_.bias, chain.params_, chain.enc_.bias);
  }
  for (int l = from_layer; l <= layers(); ++l) {
    const auto& to = modules_[static_cast<std::size_t>(index_of(path[static_cast<std::size_t>(l - 1)]))];
    const auto& from = chain.modules_[static_cast<std::size_t>(l - 1)];
    copy_block(params_, to.msg_src, chain.params_, from.msg_src);
    copy_block(params_, to.msg_dst, chain.params_, from.msg_dst);
    copy_block(params_, to.msg_w, chain.params_, from.msg_w);
    copy_block(params_, to.msg_b, chain.params_, from.msg_b);
    copy_block(params_, to.upd_self, chain.params_, from.upd_self);
    copy_block(params_, to.upd_agg, chain.params_, from.upd_agg);
    copy_block(params_, to.upd_b, chain.params_, from.upd_b);
  }
  for (int t : tasks) {
    const auto& to = decoders_[static_cast<std::size_t>(t)];
    const auto& from = chain.decoders_[static_cast<std::size_t>(t)];
    copy_block(params_, to.bilinear, chain.params_, from.bilinear);
    copy_block(params_, to.pointer, chain.params_, from.pointer);
    copy_block(params_, to.adjacency, chain.params_, from.adjacency);
  }
}

std::string BranchingModel::serialize_tree() const {
  std::ostringstream out;
  out << "brane-tree 1\n";
  out << "layers " << layers() << " hidden " << hidden() << " seed " << config_.seed << '\n';
  out << "tasks";
  for (const auto& name : config_.task_names) out << ' ' << name;
  out << '\n';
  out << "next_id " << next_id_ << '\n';
  for (const auto& n : nodes_) {
    out << "node " << n.id << ' ' << n.layer << ' ' << n.parent << ' ';
    for (std::size_t i = 0; i < n.tasks.size(); ++i) out << (i ? "," : "") << n.tasks[i];
    out << '\n';
  }
  return out.str();
}

BranchingModel BranchingModel::from_tree_text(std::string_view text) {
  BranchingModel m;
  auto lines = split(text, '\n');
  require(!lines.empty() && lines[0] == "brane-tree 1", Errc::kParse, "not a tree file");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split(lines[i], ' ');
    if (f[0] == "layers") {
      require(f.size() == 6, Errc::kParse, "bad layers line");
      m.config_.layers = static_cast<int>(parse_int(f[1]));
      m.config_.hidden = static_cast<int>(parse_int(f[3]));
      m.config_.seed = std::stoull(std::string(f[5]));
    } else if (f[0] == "tasks") {
      for (std::size_t k = 1; k < f.size(); ++k) m.config_.task_names.emplace_back(f[k]);
    } else if (f[0] == "next_id") {
      m.next_id_ = static_cast<int>(parse_int(f[1]));
    } else if (f[0] == "node") {
      require(f.size() == 5, Errc::kParse, "bad node line");
      TreeNode n;
      n.id = static_cast<int>(parse_int(f[1]));
      n.layer = static_cast<int>(parse_int(f[2]));
      n.parent = static_cast<int>(parse_int(f[3]));
      for (auto t : split(f[4], ',')) n.tasks.push_back(static_cast<int>(parse_int(t)));
      m.nodes_.push_back(std::move(n));
    } else {
      fail(Errc::kParse, "unknown tree line '" + std::string(lines[i]) + "'");
    }
  }
  for (auto& n : m.nodes_)
    if (n.parent >= 0)
      m.nodes_[static_cast<std::size_t>(m.index_of(n.parent))].children.push_back(n.id);
  m.layout_blocks();
  for (int t = 0; t < m.num_tasks(); ++t) m.route(t);
  return m;
}

std::string BranchingModel::to_dot() const {
  std::ostringstream out;
  out << "digraph brane {\n  rankdir=TB;\n  node [shape=box];\n";
  for (const auto& n : nodes_) {
    out << "  n" << n.id << " [label=\"L" << n.layer << "\\n";
    for (std::size_t i = 0; i < n.tasks.size(); ++i)
      out << (i ? "," : "") << config_.task_names[static_cast<std::size_t>(n.tasks[i])];
    out << "\"];\n";
  }
  for (const auto& n : nodes_)
    for (int c : n.children) out << "  n" << n.id << " -> n" << c << ";\n";
  out << "}\n";
  return out.str();
}

void BranchingModel::save(const std::filesystem::path& dir) const {
  write_file_atomic(dir / "tree.txt", serialize_tree());
  save_checkpoint(params_, dir / "params.ckpt");
  write_file_atomic(dir / "tree.dot", to_dot());
}

BranchingModel BranchingModel::load(const std::filesystem::path& dir) {
  BranchingModel m = from_tree_text(read_file(dir / "tree.txt"));
  ParamStore p = load_checkpoint(dir / "params.ckpt");
  require(p.layout_equal(m.params_), Errc::kParse, "checkpoint layout differs from tree");
  m.params_ = std::move(p);
  return m;
}

}  // namespace brane
