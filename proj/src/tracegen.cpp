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

#include "brane/tracegen.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <sstream>
#include <unordered_set>

#include "brane/error.hpp"
#include "brane/util.hpp"

namespace brane {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct AlgoEntry {
  Algo algo;
  std::string_view name;
};

constexpr AlgoEntry kAlgos[] = {
    {Algo::kBfs, "bfs"},
    {Algo::kDfs, "dfs"},
    {Algo::kBellmanFord, "bellman_ford"},
    {Algo::kDijkstra, "dijkstra"},
    {Algo::kPrim, "prim"},
    {Algo::kTopoSort, "topo_sort"},
    {Algo::kDagShortestPaths, "dag_shortest_paths"},
};

class DisjointSets {
 public:
  explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n)) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }
  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[std::max(a, b)] = std::min(a, b);
    return true;
  }

 private:
  std::vector<int> parent_;
};

double draw_weight(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.2, 1.0)(rng);
}

// Joins components by walking a random permutation of the nodes and adding
// an edge wherever consecutive nodes are still apart.
void connect_along_chain(Graph& g, const std::vector<int>& rank, std::mt19937_64& rng,
                         bool weighted) {
  const int n = g.num_nodes;
  DisjointSets sets(n);
  for (const Edge& e : g.edges) sets.unite(e.u, e.v);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int i = 1; i < n; ++i) {
    int a = perm[i - 1];
    int b = perm[i];
    double w = draw_weight(rng);
    if (!sets.unite(a, b)) continue;
    if (g.directed) {
      if (rank[a] > rank[b]) std::swap(a, b);
    } else if (a > b) {
      std::swap(a, b);
    }
    g.edges.push_back({a, b, weighted ? w : 1.0});
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const Edge& x, const Edge& y) {
    return std::tie(x.u, x.v) < std::tie(y.u, y.v);
  });
}

Graph draw_er(int n, double p, bool weighted, std::uint64_t seed, bool as_dag) {
  require(n >= 1, Errc::kInvalidArgument, "graph needs at least one node");
  require(p >= 0.0 && p <= 1.0, Errc::kInvalidArgument, "edge probability outside [0,1]");
  std::mt19937_64 rng(seed);
  Graph g;
  g.num_nodes = n;
  g.directed = as_dag;
  g.seed = seed;
  std::vector<int> rank(static_cast<std::size_t>(n));
  std::iota(rank.begin(), rank.end(), 0);
  if (as_dag) std::shuffle(rank.begin(), rank.end(), rng);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      double r = coin(rng);
      double w = draw_weight(rng);
      if (r >= p) continue;
      if (as_dag && rank[u] > rank[v]) {
        g.edges.push_back({v, u, weighted ? w : 1.0});
      } else {
        g.edges.push_back({u, v, weighted ? w : 1.0});
      }
    }
  }
  connect_along_chain(g, rank, rng, weighted);
  return g;
}

bool is_acyclic(const Graph& g) {
  if (!g.directed) return g.edges.empty();
  std::vector<int> indeg(static_cast<std::size_t>(g.num_nodes), 0);
  for (const Edge& e : g.edges) ++indeg[e.v];
  auto adj = g.adjacency();
  std::vector<int> stack;
  for (int v = 0; v < g.num_nodes; ++v)
    if (indeg[v] == 0) stack.push_back(v);
  int seen = 0;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    ++seen;
    for (const auto& a : adj[u])
      if (--indeg[a.to] == 0) stack.push_back(a.to);
  }
  return seen == g.num_nodes;
}

LabelRow identity_row(int n) {
  LabelRow row(static_cast<std::size_t>(n));
  std::iota(row.begin(), row.end(), 0);
  return row;
}

void run_bfs(const Graph& g, int source, Trace& t) {
  auto adj = g.adjacency();
  LabelRow labels = identity_row(g.num_nodes);
  std::vector<char> seen(static_cast<std::size_t>(g.num_nodes), 0);
  std::queue<int> queue;
  seen[source] = 1;
  queue.push(source);
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop();
    for (const auto& a : adj[u]) {
      if (seen[a.to]) continue;
      seen[a.to] = 1;
      labels[a.to] = u;
      t.steps.push_back(labels);
      queue.push(a.to);
    }
  }
}

void run_dfs(const Graph& g, int source, Trace& t) {
  auto adj = g.adjacency();
  LabelRow labels = identity_row(g.num_nodes);
  std::vector<char> seen(static_cast<std::size_t>(g.num_nodes), 0);
  // Explicit stack of (node, next neighbour index) mirrors the recursion.
  std::vector<std::pair<int, std::size_t>> stack{{source, 0}};
  seen[source] = 1;
  while (!stack.empty()) {
    auto& [u, next] = stack.back();
    if (next == adj[u].size()) {
      stack.pop_back();
      continue;
    }
    int v = adj[u][next++].to;
    if (seen[v]) continue;
    seen[v] = 1;
    labels[v] = u;
    t.steps.push_back(labels);
    stack.push_back({v, 0});
  }
}

// Synchronous rounds: every relaxation in a round reads the previous
// round's distances; arcs are scanned in ascending (u, v) order.
void run_bellman_ford(const Graph& g, int source, Trace& t) {
  const int n = g.num_nodes;
  auto adj = g.adjacency();
  std::vector<double> dist(static_cast<std::size_t>(n), kInf);
  dist[source] = 0.0;
  LabelRow labels = identity_row(n);
  for (int round = 0; round < n - 1; ++round) {
    std::vector<double> next = dist;
    LabelRow next_labels = labels;
    bool changed = false;
    for (int u = 0; u < n; ++u) {
      if (dist[u] == kInf) continue;
      for (const auto& a : adj[u]) {
        double cand = dist[u] + a.w;
        if (cand < next[a.to]) {
          next[a.to] = cand;
          next_labels[a.to] = u;
          changed = true;
        }
      }
    }
    if (!changed) break;
    dist = std::move(next);
    if (next_labels != labels) {
      labels = std::move(next_labels);
      t.steps.push_back(labels);
    } else {
      labels = std::move(next_labels);
    }
  }
}

// Shared by Dijkstra and Prim: one step per extraction; labels show the
// tentative predecessor of every node touched so far.
void run_priority_scan(const Graph& g, int source, bool prim, Trace& t) {
  const int n = g.num_nodes;
  auto adj = g.adjacency();
  std::vector<double> key(static_cast<std::size_t>(n), kInf);
  std::vector<char> done(static_cast<std::size_t>(n), 0);
  LabelRow labels = identity_row(n);
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  key[source] = 0.0;
  heap.push({0.0, source});
  while (!heap.empty()) {
    auto [k, u] = heap.top();
    heap.pop();
    if (done[u] || k != key[u]) continue;
    done[u] = 1;
    for (const auto& a : adj[u]) {
      if (done[a.to]) continue;
      double cand = prim ? a.w : key[u] + a.w;
      if (cand < key[a.to]) {
        key[a.to] = cand;
        labels[a.to] = u;
        heap.push({cand, a.to});
      }
    }
    t.steps.push_back(labels);
  }
}

std::vector<int> topological_order(const Graph& g) {
  std::vector<int> indeg(static_cast<std::size_t>(g.num_nodes), 0);
  for (const Edge& e : g.edges) ++indeg[e.v];
  auto adj = g.adjacency();
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int v = 0; v < g.num_nodes; ++v)
    if (indeg[v] == 0) ready.push(v);
  std::vector<int> order;
  while (!ready.empty()) {
    int u = ready.top();
    ready.pop();
    order.push_back(u);
    for (const auto& a : adj[u])
      if (--indeg[a.to] == 0) ready.push(a.to);
  }
  return order;
}

void run_topo_sort(const Graph& g, Trace& t) {
  LabelRow labels = identity_row(g.num_nodes);
  int prev = -1;
  for (int u : topological_order(g)) {
    if (prev >= 0) labels[u] = prev;
    prev = u;
    t.steps.push_back(labels);
  }
}

void run_dag_shortest_paths(const Graph& g, int source, Trace& t) {
  auto adj = g.adjacency();
  std::vector<double> dist(static_cast<std::size_t>(g.num_nodes), kInf);
  dist[source] = 0.0;
  LabelRow labels = identity_row(g.num_nodes);
  for (int u : topological_order(g)) {
    if (dist[u] != kInf) {
      for (const auto& a : adj[u]) {
        double cand = dist[u] + a.w;
        if (cand < dist[a.to]) {
          dist[a.to] = cand;
          labels[a.to] = u;
        }
      }
    }
    t.steps.push_back(labels);
  }
}

}  // namespace

std::string_view algo_name(Algo algo) {
  for (const auto& e : kAlgos)
    if (e.algo == algo) return e.name;
  return "unknown";
}

Algo parse_algo(std::string_view name) {
  for (const auto& e : kAlgos)
    if (e.name == name) return e.algo;
  if (name == "bf" || name == "bellmanford") return Algo::kBellmanFord;
  if (name == "toposort" || name == "topo") return Algo::kTopoSort;
  if (name == "dag_sp" || name == "dagshortestpaths") return Algo::kDagShortestPaths;
  fail(Errc::kUnknownTask, "unknown algorithm '" + std::string(name) + "'");
}

const std::vector<Algo>& all_algos() {
  static const std::vector<Algo> kAll = [] {
    std::vector<Algo> v;
    for (const auto& e : kAlgos) v.push_back(e.algo);
    return v;
  }();
  return kAll;
}

bool needs_source(Algo algo) { return algo != Algo::kTopoSort; }

bool needs_dag(Algo algo) {
  return algo == Algo::kTopoSort || algo == Algo::kDagShortestPaths;
}

std::vector<std::vector<Graph::Arc>> Graph::adjacency() const {
  std::vector<std::vector<Arc>> adj(static_cast<std::size_t>(num_nodes));
  for (const Edge& e : edges) {
    adj[e.u].push_back({e.v, e.w});
    if (!directed) adj[e.v].push_back({e.u, e.w});
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end(), [](const Arc& a, const Arc& b) { return a.to < b.to; });
  }
  return adj;
}

std::vector<int> Graph::degrees() const {
  std::vector<int> deg(static_cast<std::size_t>(num_nodes), 0);
  for (const Edge& e : edges) {
    ++deg[e.u];
    ++deg[e.v];
  }
  return deg;
}

std::uint64_t Graph::fingerprint() const {
  Fnv1a h;
  h.update(&num_nodes, sizeof(num_nodes));
  char d = directed ? 1 : 0;
  h.update(&d, 1);
  for (const Edge& e : edges) {
    h.update(&e.u, sizeof(e.u));
    h.update(&e.v, sizeof(e.v));
    h.update(&e.w, sizeof(e.w));
  }
  return h.digest();
}

void Graph::validate() const {
  require(num_nodes >= 1, Errc::kInvalidArgument, "graph has no nodes");
  std::unordered_set<std::uint64_t> seen;
  for (const Edge& e : edges) {
    require(e.u >= 0 && e.u < num_nodes && e.v >= 0 && e.v < num_nodes,
            Errc::kInvalidArgument, "edge endpoint out of range");
    require(e.u != e.v, Errc::kInvalidArgument, "self-loop");
    require(directed || e.u < e.v, Errc::kInvalidArgument, "undirected edge must have u < v");
    require(e.w >= 0.0, Errc::kInvalidArgument, "negative edge weight");
    auto key = static_cast<std::uint64_t>(e.u) * static_cast<std::uint64_t>(num_nodes) +
               static_cast<std::uint64_t>(e.v);
    require(seen.insert(key).second, Errc::kInvalidArgument, "duplicate edge");
  }
}

std::string_view weight_mode_name(WeightMode mode) {
  switch (mode) {
    case WeightMode::kAuto: return "auto";
    case WeightMode::kUnit: return "unit";
    case WeightMode::kRandom: return "random";
  }
  return "auto";
}

WeightMode parse_weight_mode(std::string_view name) {
  if (name == "auto") return WeightMode::kAuto;
  if (name == "unit") return WeightMode::kUnit;
  if (name == "random") return WeightMode::kRandom;
  fail(Errc::kParse, "unknown weight mode '" + std::string(name) + "'");
}

bool uses_random_weights(Algo algo, WeightMode mode) {
  switch (mode) {
    case WeightMode::kUnit: return false;
    case WeightMode::kRandom: return true;
    case WeightMode::kAuto:
      return algo == Algo::kBellmanFord || algo == Algo::kDijkstra || algo == Algo::kPrim ||
             algo == Algo::kDagShortestPaths;
  }
  return false;
}

Graph gen_er_graph(int n, double p, bool weighted, std::uint64_t seed) {
  return draw_er(n, p, weighted, seed, false);
}

Graph gen_er_dag(int n, double p, bool weighted, std::uint64_t seed) {
  return draw_er(n, p, weighted, seed, true);
}

Trace execute(Algo algo, const Graph& graph, std::optional<int> source) {
  graph.validate();
  Trace t;
  t.task = algo;
  t.graph_fingerprint = graph.fingerprint();
  if (needs_source(algo)) {
    require(source.has_value(), Errc::kMissingSource,
            std::string(algo_name(algo)) + " requires a source node");
    require(*source >= 0 && *source < graph.num_nodes, Errc::kInvalidArgument,
            "source out of range");
    t.source = source;
  }
  if (needs_dag(algo)) {
    require(is_acyclic(graph), Errc::kNotADag,
            std::string(algo_name(algo)) + " requires a DAG input");
  }
  t.steps.push_back(identity_row(graph.num_nodes));
  switch (algo) {
    case Algo::kBfs: run_bfs(graph, *source, t); break;
    case Algo::kDfs: run_dfs(graph, *source, t); break;
    case Algo::kBellmanFord: run_bellman_ford(graph, *source, t); break;
    case Algo::kDijkstra: run_priority_scan(graph, *source, false, t); break;
    case Algo::kPrim: run_priority_scan(graph, *source, true, t); break;
    case Algo::kTopoSort: run_topo_sort(graph, t); break;
    case Algo::kDagShortestPaths: run_dag_shortest_paths(graph, *source, t); break;
  }
  return t;
}

double trace_overlap(const Trace& a, const Trace& b) {
  require(a.graph_fingerprint == b.graph_fingerprint && a.num_nodes() == b.num_nodes(),
          Errc::kGraphMismatch, "traces were produced on different graphs");
  const std::size_t rows = std::max(a.steps.size(), b.steps.size());
  const std::size_t n = static_cast<std::size_t>(a.num_nodes());
  if (rows == 0 || n == 0) return 1.0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const LabelRow& ra = a.steps[std::min(r, a.steps.size() - 1)];
    const LabelRow& rb = b.steps[std::min(r, b.steps.size() - 1)];
    std::size_t equal = 0;
    for (std::size_t v = 0; v < n; ++v) equal += ra[v] == rb[v] ? 1 : 0;
    total += static_cast<double>(equal) / static_cast<double>(n);
  }
  return total / static_cast<double>(rows);
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  fail(Errc::kParse, "unknown split '" + std::string(name) + "'");
}

const std::vector<Sample>& split_samples(const TaskDataset& data, Split split) {
  switch (split) {
    case Split::kTrain: return data.train;
    case Split::kVal: return data.val;
    case Split::kTest: return data.test;
  }
  return data.train;
}

TaskDataset make_dataset(Algo algo, const DatasetConfig& config) {
  require(config.n_train >= 0 && config.n_val >= 0 && config.n_test >= 0,
          Errc::kInvalidArgument, "split sizes must be non-negative");
  require(config.nodes_train >= 1 && config.nodes_test >= 1, Errc::kInvalidArgument,
          "graphs need at least one node");
  TaskDataset data;
  data.task = algo;
  data.config = config;
  const bool weighted = uses_random_weights(algo, config.weights);
  std::unordered_set<std::uint64_t> used;
  auto fill = [&](std::vector<Sample>& out, int count, int nodes, std::uint64_t split_salt) {
    const std::uint64_t split_seed = mix_seed(config.seed, split_salt);
    for (int k = 0; k < count; ++k) {
      std::uint64_t seed = mix_seed(split_seed, static_cast<std::uint64_t>(k));
      require(used.insert(seed).second, Errc::kInvalidArgument, "seed collision across splits");
      Graph g = needs_dag(algo) ? gen_er_dag(nodes, config.p, weighted, seed)
                                : gen_er_graph(nodes, config.p, weighted, seed);
      std::optional<int> source;
      if (needs_source(algo)) {
        source = static_cast<int>(mix_seed(seed, 0x5eed) % static_cast<std::uint64_t>(nodes));
      }
      Trace t = execute(algo, g, source);
      out.push_back({std::move(g), std::move(t)});
    }
  };
  fill(data.train, config.n_train, config.nodes_train, 1);
  fill(data.val, config.n_val, config.nodes_train, 2);
  fill(data.test, config.n_test, config.nodes_test, 3);
  return data;
}

namespace {

std::string record_line(const Sample& s) {
  std::ostringstream out;
  out << "1 " << algo_name(s.trace.task) << ' ' << s.graph.seed << ' ' << s.graph.num_nodes << ' '
      << (s.graph.directed ? 1 : 0) << ' ';
  if (s.graph.edges.empty()) {
    out << '-';
  } else {
    for (std::size_t i = 0; i < s.graph.edges.size(); ++i) {
      const Edge& e = s.graph.edges[i];
      if (i) out << ';';
      out << e.u << ',' << e.v << ',' << format_double(e.w);
    }
  }
  out << ' ';
  if (s.trace.source) {
    out << *s.trace.source;
  } else {
    out << '-';
  }
  out << ' ';
  for (std::size_t r = 0; r < s.trace.steps.size(); ++r) {
    if (r) out << ';';
    const LabelRow& row = s.trace.steps[r];
    for (std::size_t v = 0; v < row.size(); ++v) {
      if (v) out << ',';
      out << row[v];
    }
  }
  return out.str();
}

Sample parse_record(std::string_view line, Algo expected) {
  auto f = split(line, ' ');
  require(f.size() == 8, Errc::kParse, "dataset record needs 8 fields");
  require(f[0] == "1", Errc::kParse, "unsupported record version");
  Algo algo = parse_algo(f[1]);
  require(algo == expected, Errc::kParse, "record task differs from header");
  Sample s;
  s.graph.seed = static_cast<std::uint64_t>(std::stoull(std::string(f[2])));
  s.graph.num_nodes = static_cast<int>(parse_int(f[3]));
  s.graph.directed = parse_int(f[4]) != 0;
  if (f[5] != "-") {
    for (auto triple : split(f[5], ';')) {
      auto p = split(triple, ',');
      require(p.size() == 3, Errc::kParse, "edge needs u,v,w");
      s.graph.edges.push_back({static_cast<int>(parse_int(p[0])),
                               static_cast<int>(parse_int(p[1])), parse_double(p[2])});
    }
  }
  std::optional<int> source;
  if (f[6] != "-") source = static_cast<int>(parse_int(f[6]));
  s.trace.task = algo;
  s.trace.source = source;
  s.trace.graph_fingerprint = s.graph.fingerprint();
  for (auto row_text : split(f[7], ';')) {
    LabelRow row;
    for (auto v : split(row_text, ',')) row.push_back(static_cast<int>(parse_int(v)));
    s.trace.steps.push_back(std::move(row));
  }
  Trace oracle = execute(algo, s.graph, source);
  require(oracle == s.trace, Errc::kTraceMismatch,
          "stored trace differs from re-execution (seed " + std::string(f[2]) + ")");
  return s;
}

}  // namespace

std::string serialize_dataset(const TaskDataset& data) {
  std::string body;
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const Sample& s : *split) {
      body += record_line(s);
      body += '\n';
    }
  }
  Fnv1a h;
  h.update(body);
  const DatasetConfig& c = data.config;
  std::ostringstream head;
  head << "# brane-dataset version=1 task=" << algo_name(data.task) << " n_train=" << c.n_train
       << " n_val=" << c.n_val << " n_test=" << c.n_test << " nodes_train=" << c.nodes_train
       << " nodes_test=" << c.nodes_test << " p=" << format_double(c.p) << " seed=" << c.seed
       << " weights=" << weight_mode_name(c.weights) << " checksum=" << h.hex() << '\n';
  return head.str() + body;
}

TaskDataset parse_dataset(std::string_view text) {
  auto nl = text.find('\n');
  require(nl != std::string_view::npos, Errc::kParse, "dataset missing header");
  std::string_view header = text.substr(0, nl);
  std::string_view body = text.substr(nl + 1);
  auto fields = split(header, ' ');
  require(fields.size() >= 2 && fields[0] == "#" && fields[1] == "brane-dataset", Errc::kParse,
          "not a dataset file");
  TaskDataset data;
  std::string checksum;
  for (std::size_t i = 2; i < fields.size(); ++i) {
    auto eq = fields[i].find('=');
    require(eq != std::string_view::npos, Errc::kParse, "bad header field");
    auto key = fields[i].substr(0, eq);
    auto value = fields[i].substr(eq + 1);
    if (key == "version") require(value == "1", Errc::kParse, "unsupported dataset version");
    else if (key == "task") data.task = parse_algo(value);
    else if (key == "n_train") data.config.n_train = static_cast<int>(parse_int(value));
    else if (key == "n_val") data.config.n_val = static_cast<int>(parse_int(value));
    else if (key == "n_test") data.config.n_test = static_cast<int>(parse_int(value));
    else if (key == "nodes_train") data.config.nodes_train = static_cast<int>(parse_int(value));
    else if (key == "nodes_test") data.config.nodes_test = static_cast<int>(parse_int(value));
    else if (key == "p") data.config.p = parse_double(value);
    else if (key == "seed") data.config.seed = std::stoull(std::string(value));
    else if (key == "weights") data.config.weights = parse_weight_mode(value);
    else if (key == "checksum") checksum = std::string(value);
  }
  Fnv1a h;
  h.update(body);
  require(h.hex() == checksum, Errc::kChecksum, "dataset checksum mismatch");
  std::vector<Sample> all;
  std::size_t start = 0;
  while (start < body.size()) {
    auto end = body.find('\n', start);
    if (end == std::string_view::npos) end = body.size();
    if (end > start) all.push_back(parse_record(body.substr(start, end - start), data.task));
    start = end + 1;
  }
  const auto& c = data.config;
  require(all.size() == static_cast<std::size_t>(c.n_train + c.n_val + c.n_test), Errc::kParse,
          "record count differs from header");
  auto it = all.begin();
  data.train.assign(std::make_move_iterator(it), std::make_move_iterator(it + c.n_train));
  it += c.n_train;
  data.val.assign(std::make_move_iterator(it), std::make_move_iterator(it + c.n_val));
  it += c.n_val;
  data.test.assign(std::make_move_iterator(it), std::make_move_iterator(all.end()));
  return data;
}

void save_dataset(const TaskDataset& data, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_dataset(data));
}

TaskDataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file(path));
}

}  // namespace brane
