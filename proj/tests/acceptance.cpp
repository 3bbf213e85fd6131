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

// End-to-end acceptance run. Prints one line per criterion:
//   criterion N: PASS|FAIL <measurements> (<seconds>s)
// Exit status is the number of failed criteria that were not listed with
// --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "brane/brane.hpp"
#include "brane/clibench.hpp"
#include "brane/clusterer.hpp"
#include "brane/diffcore.hpp"
#include "brane/linearizer.hpp"
#include "brane/tracegen.hpp"
#include "brane/trainer.hpp"
#include "brane/util.hpp"

using namespace brane;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Training-call counts from every autobrane run, checked by criterion 10.
struct BudgetRecord {
  std::string run;
  int calls = 0;
  int bound = 0;
};
std::vector<BudgetRecord> g_budget;

void record_budget(const std::string& run, const BraneResult& r, int n, int layers) {
  g_budget.push_back({run, r.state.training_calls, n * layers});
}

// ---------------------------------------------------------------- gradients

double fd_worst(ParamStore& params, const std::function<Var(Tape&)>& program, int coords,
                std::uint64_t seed) {
  auto fwd = forward_scalar(program, params);
  const Vector g = fwd.tape.backward(fwd.output);
  std::vector<std::size_t> all(params.dim());
  std::iota(all.begin(), all.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(coords)));
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i : all) {
    const double saved = params.values()[i];
    params.values()[i] = saved + h;
    const double up = forward_scalar(program, params).value;
    params.values()[i] = saved - h;
    const double down = forward_scalar(program, params).value;
    params.values()[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double ad = g[static_cast<Eigen::Index>(i)];
    worst = std::max(worst, std::abs(fd - ad) / (std::max(std::abs(fd), std::abs(ad)) + 1e-8));
  }
  return worst;
}

// A random straight-line program over every tape primitive.
double random_tape_program(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int r = 6, c = 4;
  ParamStore p;
  const int a = p.add_block(1, "a", r, c);
  const int b = p.add_block(1, "b", r, c);
  const int m = p.add_block(2, "m", c, c);
  const int v = p.add_block(2, "v", 1, c);
  const int s = p.add_block(3, "s", 1, 1);
  for (double& x : p.values()) x = normal(rng);
  for (double& x : p.view(m).reshaped()) x *= 0.5;

  std::vector<int> ops(6 + rng() % 5);
  for (int& op : ops) op = static_cast<int>(rng() % 9);
  std::vector<std::vector<int>> index(ops.size());
  std::vector<Matrix> pattern(ops.size());
  for (std::size_t k = 0; k < ops.size(); ++k) {
    index[k].resize(r);
    for (int& i : index[k]) i = static_cast<int>(rng() % r);
    pattern[k] = Matrix::NullaryExpr(r, c, [&] { return normal(rng); });
  }
  std::vector<std::pair<std::size_t, std::size_t>> operands(ops.size());
  for (auto& [x, y] : operands) {
    x = rng();
    y = rng();
  }
  std::vector<int> width(r), target(r);
  std::vector<double> weight(r);
  for (int i = 0; i < r; ++i) {
    width[i] = 1 + static_cast<int>(rng() % c);
    target[i] = static_cast<int>(rng() % width[i]);
    weight[i] = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
  }
  const int split = 1 + static_cast<int>(rng() % (r - 1));

  auto program = [&](Tape& t) {
    std::vector<Var> pool = {t.param(a), t.param(b)};
    for (std::size_t k = 0; k < ops.size(); ++k) {
      Var x = pool[operands[k].first % pool.size()];
      Var y = pool[operands[k].second % pool.size()];
      Var out;
      switch (ops[k]) {
        case 0: out = t.add(x, y); break;
        case 1: out = t.relu(x); break;
        case 2: out = t.softmax_rows(x); break;
        case 3: out = t.log(t.softmax_rows(x)); break;
        case 4: out = t.matmul(x, t.param(m)); break;
        case 5: out = t.add_row(x, t.param(v)); break;
        case 6: out = t.gather_rows(x, index[k]); break;
        case 7: out = (k % 2 ? t.segment_sum(x, index[k], r) : t.segment_max(x, index[k], r)); break;
        default: out = t.add_scaled(x, pattern[k], t.param(s)); break;
      }
      pool.push_back(out);
    }
    Var z = pool.back();
    Var other = pool[pool.size() / 2];
    Var ce = t.cross_entropy(z, width, target, weight);
    Var margin = t.row_margin(z, 0, c, target[0]);
    Var pair = t.sum(t.block_pair_scores(z, other, {0, split, r}));
    return t.add(t.add(ce, margin), t.add(pair, t.dot(z, other)));
  };
  return fd_worst(p, program, 64, seed + 1);
}

// Step loss of a freshly initialised branching model on one random graph.
double random_model_program(std::uint64_t seed) {
  const Algo algo = all_algos()[seed % all_algos().size()];
  DatasetConfig dc;
  dc.n_train = 1;
  dc.n_val = 0;
  dc.n_test = 0;
  dc.nodes_train = 5 + static_cast<int>(seed % 4);
  dc.seed = seed;
  const TaskDataset d = make_dataset(algo, dc);
  ModelConfig mc;
  mc.task_names = {"a", "b"};
  mc.layers = 2;
  mc.hidden = 6;
  mc.seed = seed;
  BranchingModel model = BranchingModel::new_chain(mc);
  model.split_node(model.node_at(0, 1), {{0}, {1}});
  const std::size_t which[] = {0};
  const StepSet set = collect_steps(d.train, which, 1.0);
  const StepBatch batch = make_batch(set.instances);
  const int task = static_cast<int>(seed % 2);
  auto program = [&](Tape& t) {
    return t.cross_entropy(model.forward(t, batch, task), batch.width, batch.target, batch.weight);
  };
  return fd_worst(model.params(), program, 64, seed + 7);
}

Outcome gradient_check() {
  double worst = 0;
  for (std::uint64_t s = 0; s < 20; ++s)
    worst = std::max(worst, s % 4 == 3 ? random_model_program(500 + s) : random_tape_program(500 + s));
  return {worst <= 1e-4, "programs=20 coords=64 worst_rel=" + fmt("%.3g", worst) + " tol=1e-4"};
}

// ------------------------------------------------------------------ traces

std::vector<std::vector<std::pair<int, double>>> sorted_neighbours(const Graph& g) {
  std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(g.num_nodes));
  for (const Edge& e : g.edges) {
    adj[e.u].push_back({e.v, e.w});
    if (!g.directed) adj[e.v].push_back({e.u, e.w});
  }
  for (auto& row : adj) std::sort(row.begin(), row.end());
  return adj;
}

LabelRow queue_bfs_tree(const Graph& g, int s) {
  auto adj = sorted_neighbours(g);
  LabelRow pred(static_cast<std::size_t>(g.num_nodes));
  std::iota(pred.begin(), pred.end(), 0);
  std::vector<bool> seen(static_cast<std::size_t>(g.num_nodes), false);
  std::queue<int> q;
  q.push(s);
  seen[s] = true;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (auto [w, _] : adj[u])
      if (!seen[w]) {
        seen[w] = true;
        pred[w] = u;
        q.push(w);
      }
  }
  return pred;
}

LabelRow heap_dijkstra_tree(const Graph& g, int s) {
  auto adj = sorted_neighbours(g);
  std::vector<double> dist(static_cast<std::size_t>(g.num_nodes), kInf);
  LabelRow pred(static_cast<std::size_t>(g.num_nodes));
  std::iota(pred.begin(), pred.end(), 0);
  std::priority_queue<std::pair<double, int>, std::vector<std::pair<double, int>>, std::greater<>> heap;
  dist[s] = 0;
  heap.push({0, s});
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (auto [w, len] : adj[u])
      if (d + len < dist[w]) {
        dist[w] = d + len;
        pred[w] = u;
        heap.push({dist[w], w});
      }
  }
  return pred;
}

LabelRow round_bellman_ford_tree(const Graph& g, int s) {
  std::vector<double> dist(static_cast<std::size_t>(g.num_nodes), kInf);
  LabelRow pred(static_cast<std::size_t>(g.num_nodes));
  std::iota(pred.begin(), pred.end(), 0);
  dist[s] = 0;
  for (int round = 0; round < g.num_nodes - 1; ++round) {
    auto next = dist;
    for (const Edge& e : g.edges) {
      for (auto [x, y] : {std::pair{e.u, e.v}, std::pair{e.v, e.u}}) {
        if (g.directed && x != e.u) continue;
        if (dist[x] + e.w < next[y]) {
          next[y] = dist[x] + e.w;
          pred[y] = x;
        }
      }
    }
    dist = next;
  }
  return pred;
}

Outcome trace_oracles() {
  int agree = 0, total = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Graph unit = gen_er_graph(8, 0.3, false, 7000 + s);
    const Graph weighted = gen_er_graph(8, 0.3, true, 7000 + s);
    agree += execute(Algo::kBfs, unit, 0).steps.back() == queue_bfs_tree(unit, 0);
    agree += execute(Algo::kDijkstra, weighted, 0).steps.back() == heap_dijkstra_tree(weighted, 0);
    agree += execute(Algo::kBellmanFord, weighted, 0).steps.back() ==
             round_bellman_ford_tree(weighted, 0);
    total += 3;
  }
  return {agree == total, "agree=" + std::to_string(agree) + "/" + std::to_string(total)};
}

// The five-node worked example, rows written 1-indexed.
Outcome worked_example() {
  Graph g;
  g.num_nodes = 5;
  g.edges = {{0, 1, 1.0}, {0, 2, 1.0}, {1, 2, 1.0}, {1, 3, 1.0},
             {1, 4, 1.0}, {2, 3, 1.0}, {3, 4, 1.0}};
  auto shift = [](std::vector<LabelRow> rows) {
    for (auto& r : rows)
      for (int& x : r) --x;
    return rows;
  };
  auto expect = [&](std::vector<LabelRow> rows) {
    rows = shift(std::move(rows));
    rows.insert(rows.begin(), LabelRow{0, 1, 2, 3, 4});
    return rows;
  };
  const auto bfs = expect({{1, 1, 3, 4, 5}, {1, 1, 1, 4, 5}, {1, 1, 1, 2, 5}, {1, 1, 1, 2, 2}});
  const auto dfs = expect({{1, 1, 3, 4, 5}, {1, 1, 2, 4, 5}, {1, 1, 2, 3, 5}, {1, 1, 2, 3, 4}});
  const Trace tb = execute(Algo::kBfs, g, 0);
  const Trace td = execute(Algo::kDfs, g, 0);
  const Trace tf = execute(Algo::kBellmanFord, g, 0);
  const bool first_visits_2 = tb.steps.size() > 1 && tb.steps[1][1] == 0 && td.steps[1][1] == 0;
  const bool ok = tb.steps == bfs && td.steps == dfs && tf.steps.back() == bfs.back() &&
                  tf.steps.front() == bfs.front() && first_visits_2;
  return {ok, std::string("bfs=") + (tb.steps == bfs ? "exact" : "differs") +
                  " dfs=" + (td.steps == dfs ? "exact" : "differs") +
                  " bellman_ford_final=" + (tf.steps.back() == bfs.back() ? "exact" : "differs")};
}

// ---------------------------------------------------------------- learning

ExperimentConfig desk_config(std::vector<Algo> tasks) {
  ExperimentConfig cfg;
  cfg.tasks = std::move(tasks);
  cfg.data.n_train = 100;
  cfg.layers = 3;
  cfg.hidden = 32;
  cfg.search.feature_samples = 0;
  cfg.search.lambda2 = 1e-2;
  cfg.train.lr = 3e-3;
  cfg.train.epochs = 60;
  cfg.train.patience = 10;
  cfg.meta_epochs = 40;
  return cfg;
}

Outcome rss_fidelity() {
  ExperimentConfig cfg = desk_config({Algo::kBfs, Algo::kBellmanFord, Algo::kDfs, Algo::kDijkstra});
  cfg.train.epochs = 20;
  const auto sets = make_suite(cfg, 0);
  const double uppers[] = {0.05, 0.1, 0.2, 0.5, 1.0};
  const RssExperiment exp = run_rss(cfg, task_data(sets), 0, 20, 15, 1e-3, uppers);
  double sum = 0;
  std::size_t count = 0;
  for (const auto& p : exp.points)
    if (p.distance <= 0.1) {
      sum += p.rss;
      ++count;
    }
  const double mean = count ? sum / static_cast<double>(count) : kInf;
  return {count > 0 && mean <= 5e-2, "subsets=" + std::to_string(exp.subsets) +
                                         " points<=0.1=" + std::to_string(count) +
                                         " mean_rss=" + fmt("%.3g", mean) + " tol=5e-2"};
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const Eigen::Map<const Vector> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Vector> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Vector xc = x.array() - x.mean(), yc = y.array() - y.mean();
  return xc.dot(yc) / (xc.norm() * yc.norm());
}

// Estimated subset losses against fine-tuning each subset from the
// meta-initialisation and reading its validation loss.
Outcome affinity_oracle() {
  const std::uint64_t seed = 0;
  const std::vector<Algo> algos = {Algo::kBfs, Algo::kBellmanFord, Algo::kDfs, Algo::kDijkstra};
  DatasetConfig dc;
  dc.seed = seed;
  dc.n_train = 100;
  std::vector<TaskDataset> sets;
  for (Algo a : algos) sets.push_back(make_dataset(a, dc));
  const TaskData data = task_data(sets);
  ModelConfig mc;
  for (Algo a : algos) mc.task_names.emplace_back(algo_name(a));
  mc.seed = seed;
  TrainConfig meta;
  meta.epochs = 40;
  meta.lr = 3e-3;
  meta.seed = seed;
  const std::vector<int> all = {0, 1, 2, 3};
  const int layer = 1;
  const BranchingModel w0 =
      train_meta_init(BranchingModel::new_chain(mc), data, all, layer, meta).path_model(0);

  FeatureOptions fo;
  fo.layer = layer;
  fo.dim = 400;
  fo.seed = seed;
  const auto train_feats = extract_features(w0, data, all, fo);
  fo.split = Split::kVal;
  const auto val_feats = extract_features(w0, data, all, fo);
  const SubsetPlan plan = make_subset_plan(all, 40, 2, 3, seed);
  const SubsetLossTable table = estimate_subset_losses(train_feats, plan, val_feats, 1e-2);

  std::map<std::vector<int>, std::vector<TaskMetrics>> cache;
  std::vector<double> est, truth;
  for (std::size_t k = 0; k < plan.subsets.size(); ++k) {
    const auto& s = plan.subsets[k];
    if (!cache.count(s)) {
      BranchingModel w = w0;
      TrainConfig ft;
      ft.epochs = 20;
      ft.lr = 1e-3;
      ft.seed = seed;
      ft.frozen_layers = layer - 1;
      ft.patience = 5;
      train(w, data, s, ft);
      cache[s] = evaluate(w, data, s, Split::kVal);
    }
    for (std::size_t q = 0; q < s.size(); ++q) {
      est.push_back(table.loss[k].at(s[q]));
      truth.push_back(cache[s][q].loss);
    }
  }
  std::vector<double> rel(est.size());
  for (std::size_t i = 0; i < est.size(); ++i) rel[i] = std::abs(est[i] - truth[i]) / truth[i];
  std::vector<double> sorted = rel;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const double rho = spearman(est, truth);
  return {median <= 0.10 && rho >= 0.8,
          "pairs=" + std::to_string(n) + " distinct_subsets=" + std::to_string(cache.size()) +
              " median_rel=" + fmt("%.4f", median) + " spearman=" + fmt("%.4f", rho) +
              " tol=0.10/0.8"};
}

// Linearised desk MPNN: its exact-gradient feature model is linear in the
// parameters, so the linearisation error is zero and only the sketch enters
// the bound.
Outcome exact_gap() {
  const std::vector<Algo> algos = {Algo::kBfs, Algo::kDfs};
  DatasetConfig dc;
  dc.n_train = 12;
  dc.n_val = 0;
  dc.n_test = 0;
  dc.seed = 3;
  std::vector<TaskDataset> sets;
  for (Algo a : algos) sets.push_back(make_dataset(a, dc));
  const TaskData data = task_data(sets);
  ModelConfig mc;
  for (Algo a : algos) mc.task_names.emplace_back(algo_name(a));
  mc.seed = 3;
  BranchingModel w0 = BranchingModel::new_chain(mc);
  TrainConfig tc;
  tc.epochs = 5;
  tc.lr = 3e-3;
  tc.patience = 0;
  train(w0, data, std::vector<int>{0, 1}, tc);

  const int layer = 3;
  const std::size_t p = w0.params().dim() - w0.params().suffix_offset(layer);
  FeatureOptions fo;
  fo.layer = layer;
  fo.projection = ProjectionKind::kIdentity;
  fo.dim = static_cast<int>(p);
  const auto f = extract_features(w0, data, std::vector<int>{0, 1}, fo);
  const double lambda = 1e-3;
  const auto loss = linear_loss_fn(f.features, f.base);
  const RetrainResult oracle = retrain_oracle(p, loss, lambda);

  const int d = 400;
  const Matrix proj = make_projection(p, d, 11);
  const SurrogateFit fit = fit_surrogate(f.features * proj, f.base, lambda);
  const Vector lifted = proj * fit.w;
  const std::vector<double> lv(lifted.data(), lifted.data() + lifted.size());
  const double surrogate_loss = loss(lv, {});
  const double g = f.features.rowwise().norm().maxCoeff();
  const double diam = std::max(lifted.norm(), oracle.delta.norm());
  const Prop1Report r = verify_prop1(surrogate_loss, oracle.loss, g, diam, jl_epsilon(d, p), 0.0);
  return {r.holds, "p=" + std::to_string(p) + " rows=" + std::to_string(f.rows()) +
                       " gap=" + fmt("%.4g", r.gap) + " bound=" + fmt("%.4g", r.bound) +
                       " G=" + fmt("%.3g", r.g) + " D=" + fmt("%.3g", r.d) +
                       " eps=" + fmt("%.3g", r.epsilon) + " delta_hat=0"};
}

struct Planted {
  Matrix a;
  Partition truth;
};

Planted planted(int n, int blocks, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  while (true) {
    std::vector<int> label(static_cast<std::size_t>(n));
    for (int v = 0; v < n; ++v) label[v] = v < blocks ? v : static_cast<int>(rng() % blocks);
    std::shuffle(label.begin(), label.end(), rng);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    Matrix a = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) a(i, j) = a(j, i) = (label[i] == label[j] ? 1.0 : -1.0) + u(rng);
    const double mean = a.mean();
    a = (a.array() - mean) / std::sqrt((a.array() - mean).square().mean());
    double within = kInf, across = -kInf;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        if (label[i] == label[j]) {
          within = std::min(within, a(i, j));
        } else {
          across = std::max(across, a(i, j));
        }
      }
    if (within - across < 0.5) continue;
    Partition truth(static_cast<std::size_t>(blocks));
    for (int v = 0; v < n; ++v) truth[label[v]].push_back(v);
    std::sort(truth.begin(), truth.end());
    return {a, truth};
  }
}

Outcome planted_recovery() {
  bool ok = true;
  std::string detail;
  const std::vector<double> grid = default_lambda_grid();
  for (int blocks : {2, 3}) {
    int agree = 0, recovered = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      const int n = blocks + 1 + static_cast<int>(s % (8 - blocks));
      const Planted p = planted(n, blocks, 90000 + 1000 * blocks + s);
      const Partition found = select_partition(p.a, grid, 3, 1).partition;
      agree += found == brute_force_partition(p.a);
      recovered += found == p.truth;
    }
    ok = ok && agree >= 95 && recovered >= 95;
    detail += std::to_string(blocks) + "-block: exhaustive=" + std::to_string(agree) +
              "/100 planted=" + std::to_string(recovered) + "/100 ";
  }
  return {ok, detail + "need>=95"};
}

int shared_layers(const BranchingModel& m, int a, int b) {
  int n = 0;
  for (int l = 1; l <= m.layers(); ++l) n += m.node_at(a, l) == m.node_at(b, l);
  return n;
}

Outcome tree_structure() {
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig cfg = desk_config({Algo::kBfs, Algo::kBellmanFord, Algo::kDfs});
    cfg.data.weights = WeightMode::kUnit;
    cfg.train.epochs = 0;
    const auto sets = make_suite(cfg, seed);
    const BraneRun run = run_brane(cfg, task_data(sets), seed);
    record_budget("tree seed " + std::to_string(seed), run.result, 3, cfg.layers);
    const int with_bf = shared_layers(run.result.model, 0, 1);
    const int with_dfs = shared_layers(run.result.model, 0, 2);
    wins += with_bf > with_dfs;
    per_seed += " s" + std::to_string(seed) + "=" + std::to_string(with_bf) + "/" + std::to_string(with_dfs);
  }
  return {wins >= 3, "seeds_bf_over_dfs=" + std::to_string(wins) + "/5 need>=3 (bfs-bf/bfs-dfs layers)" + per_seed};
}

Outcome multitask_gain() {
  double brane_sum = 0, mtn_sum = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ExperimentConfig cfg =
        desk_config({Algo::kBfs, Algo::kBellmanFord, Algo::kDfs, Algo::kDijkstra});
    const auto sets = make_suite(cfg, seed);
    const TaskData data = task_data(sets);
    const BaselineRun base = run_baselines(cfg, data, seed);
    const BraneRun run = run_brane(cfg, data, seed);
    record_budget("gain seed " + std::to_string(seed), run.result, 4, cfg.layers);
    brane_sum += run.score.mean_accuracy();
    mtn_sum += base.mtn.mean_accuracy();
    per_seed += " s" + std::to_string(seed) + "=" + fmt("%.4f", run.score.mean_accuracy()) + "/" +
                fmt("%.4f", base.mtn.mean_accuracy()) + "/" + fmt("%.4f", base.stn.mean_accuracy());
  }
  const double b = brane_sum / 3, m = mtn_sum / 3;
  return {b >= m, "brane=" + fmt("%.4f", b) + " mtn=" + fmt("%.4f", m) + " (brane/mtn/stn)" + per_seed};
}

Outcome budget() {
  if (g_budget.empty()) return {false, "no end-to-end runs recorded; run criteria 8 and 9 first"};
  bool ok = true;
  std::string detail = "runs=" + std::to_string(g_budget.size());
  for (const auto& r : g_budget) {
    ok = ok && r.calls <= r.bound;
    detail += " " + std::to_string(r.calls) + "<=" + std::to_string(r.bound);
  }
  return {ok, detail};
}

Outcome sample_complexity() {
  const ExperimentConfig base = desk_config({Algo::kBfs});
  const std::vector<int> sizes = {25, 50, 100, 200, 400};
  const int unreached = sizes.back() * 2;
  auto minimal = [&](Algo a, std::uint64_t seed) {
    try {
      return sample_complexity_sweep(a, 0.05, sizes, base, seed).minimal_size;
    } catch (const TargetUnreached&) {
      return unreached;
    }
  };
  int ordered = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const int prim = minimal(Algo::kPrim, seed);
    const int bfs = minimal(Algo::kBfs, seed);
    // Both unreached says nothing about the ordering.
    ordered += prim >= bfs && bfs != unreached;
    auto show = [&](int v) { return v == unreached ? std::string(">400") : std::to_string(v); };
    per_seed += " s" + std::to_string(seed) + "=" + show(prim) + "/" + show(bfs);
  }
  // Joint training should cost accuracy on at least one task.
  const ExperimentConfig triple = desk_config({Algo::kBfs, Algo::kDijkstra, Algo::kPrim});
  int harder = 0;
  std::string mt;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    bool any = false;
    mt += " s" + std::to_string(seed) + ":";
    for (const auto& r : compare_mt_st(triple, 100, seed)) {
      any = any || r.mt_error >= r.st_error;
      mt += " " + std::string(algo_name(r.task)) + "=" + fmt("%.4f", r.mt_error) + "/" + fmt("%.4f", r.st_error);
    }
    harder += any;
  }
  return {ordered >= 2 && harder >= 2,
          "prim>=bfs seeds=" + std::to_string(ordered) + "/3 (prim/bfs minimal size)" + per_seed +
              " mt>=st seeds=" + std::to_string(harder) + "/3 (mt/st val error)" + mt};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::vector<int> only, expect_fail;
  std::string report;
  app.add_option("--only", only, "criteria to run (default all)")->check(CLI::Range(1, 11));
  app.add_option("--expect-fail", expect_fail, "criteria whose failure is documented")
      ->check(CLI::Range(1, 11));
  app.add_option("--report", report, "also write the criterion lines to this file");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> criteria = {
      gradient_check, trace_oracles,   worked_example, rss_fidelity,     affinity_oracle, exact_gap,
      planted_recovery, tree_structure, multitask_gain, budget,        sample_complexity,
  };
  const std::set<int> chosen(only.begin(), only.end());
  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  int unexpected = 0;
  std::string lines;
  for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) {
    if (!chosen.empty() && !chosen.count(i)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.pass ? "PASS" : (expected.count(i) ? "FAIL (expected)" : "FAIL");
    char head[64];
    std::snprintf(head, sizeof head, "criterion %d: %s ", i, tag);
    const std::string line = head + o.detail + fmt(" (%.1fs)", secs) + "\n";
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    lines += line;
    if (!report.empty()) write_file_atomic(report, lines);
    if (!o.pass && !expected.count(i)) ++unexpected;
  }
  return unexpected;
}
