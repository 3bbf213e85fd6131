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

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "brane/brane.hpp"
#include "brane/clibench.hpp"
#include "brane/error.hpp"
#include "brane/util.hpp"

using namespace brane;
namespace fs = std::filesystem;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

std::string quoted(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + '"';
}

int report_error(std::string_view code, std::string_view message, int status) {
  std::cerr << "error code=" << code << " message=" << quoted(message) << '\n';
  return status;
}

struct Common {
  std::string out;
  std::string config;
  std::uint64_t seed = 0;
};

ExperimentConfig need_config(const Common& c) { return load_config(c.config); }

fs::path run_dir(const Common& c, const std::string& name) {
  fs::path dir = output_root(c.out) / name;
  fs::create_directories(dir);
  return dir;
}

std::string seeded(const std::string& stem, std::uint64_t seed) {
  return stem + "_seed" + std::to_string(seed);
}

void announce(const fs::path& p) { std::cout << "wrote " << p.string() << '\n'; }

void write(const fs::path& p, std::string_view text) {
  write_file_atomic(p, text);
  announce(p);
}

// ---------------------------------------------------------------- commands

struct GenArgs {
  std::string task;
  DatasetConfig data;
  std::string weights = "auto";
};

void cmd_gen(const Common& c, GenArgs g) {
  g.data.seed = c.seed;
  g.data.weights = parse_weight_mode(g.weights);
  const TaskDataset d = make_dataset(parse_algo(g.task), g.data);
  const fs::path dir = run_dir(c, "data");
  const fs::path path = dir / (seeded(g.task, c.seed) + ".txt");
  const std::string text = serialize_dataset(d);
  write(path, text);
  Fnv1a h;
  h.update(text);
  std::cout << "checksum=" << h.hex() << '\n';
}

struct TrainArgs {
  std::string mode = "mtn";
  std::string model;
};

void cmd_train(const Common& c, const TrainArgs& t) {
  const ExperimentConfig cfg = need_config(c);
  const auto sets = make_suite(cfg, c.seed);
  const TaskData data = task_data(sets);
  const fs::path dir = run_dir(c, seeded("train_" + t.mode, c.seed));
  save_config(cfg, dir);
  std::vector<RunScore> scores;
  if (t.mode == "tree") {
    require(!t.model.empty(), Errc::kInvalidArgument, "--mode tree needs --model");
    BranchingModel m = BranchingModel::load(t.model);
    require(m.num_tasks() == static_cast<int>(cfg.tasks.size()), Errc::kInvalidArgument,
            "model and config disagree on the task count");
    std::vector<int> all(cfg.tasks.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    train(m, data, all, train_config(cfg, c.seed));
    m.save(dir / "model");
    scores.push_back(score_model("tree", c.seed, m, data, Split::kTest, 1));
  } else {
    require(t.mode == "stn" || t.mode == "mtn", Errc::kInvalidArgument,
            "--mode must be stn, mtn or tree");
    BaselineRun b = run_baselines(cfg, data, c.seed);
    if (t.mode == "mtn") {
      b.mtn_model.save(dir / "model");
      scores.push_back(b.mtn);
    } else {
      for (std::size_t i = 0; i < b.stn_models.size(); ++i)
        b.stn_models[i].save(dir / ("model_" + std::string(algo_name(cfg.tasks[i]))));
      scores.push_back(b.stn);
    }
  }
  write(dir / "scores.csv", scores_csv(scores));
}

struct AffinityArgs {
  int layer = 1;
};

void cmd_affinity(const Common& c, const AffinityArgs& a) {
  const ExperimentConfig cfg = need_config(c);
  const auto sets = make_suite(cfg, c.seed);
  const TaskData data = task_data(sets);
  const fs::path dir = run_dir(c, seeded("affinity_l" + std::to_string(a.layer), c.seed));
  save_config(cfg, dir);
  BraneConfig bc = brane_config(cfg, c.seed);
  bc.out_dir = dir;
  std::vector<int> all(cfg.tasks.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  SearchState state;
  const BranchingModel chain = BranchingModel::new_chain(bc.model);
  fast_approx_partition(chain, data, all, a.layer, bc, state);
  write(dir / "audit.log", state.audit.text());
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".csv") announce(e.path());
}

struct ClusterArgs {
  std::string affinity;
  int layers = 3;
  int layer = 1;
  double max_growth = 5.0;
  std::vector<double> grid;
  bool raw = false;
};

void cmd_cluster(const Common& c, ClusterArgs a) {
  const NamedScores t = parse_affinity_csv(read_file(a.affinity));
  if (a.grid.empty()) a.grid = default_lambda_grid();
  const Matrix aff = clustering_affinity(t.scores, !a.raw);
  const Selection sel = select_partition(aff, a.grid, a.layers, a.layer, a.max_growth);
  const std::string text = describe_selection(sel, t.names);
  std::cout << text;
  if (!c.out.empty()) write(run_dir(c, "cluster") / "selection.txt", text);
}

void cmd_brane(const Common& c) {
  ExperimentConfig cfg = need_config(c);
  const fs::path dir = run_dir(c, seeded("brane", c.seed));
  cfg.out_dir = dir;
  save_config(cfg, dir);
  const auto sets = make_suite(cfg, c.seed);
  const TaskData data = task_data(sets);
  const BraneRun run = run_brane(cfg, data, c.seed);
  run.result.model.save(dir / "model");
  write(dir / "tree.dot", run.result.model.to_dot());
  write(dir / "audit.log", run.result.state.audit.text());
  const RunScore scores[] = {run.score};
  write(dir / "scores.csv", scores_csv(scores));
}

struct EvalArgs {
  std::string model;
  std::string split = "test";
  std::string method = "model";
};

void cmd_eval(const Common& c, const EvalArgs& e) {
  const ExperimentConfig cfg = need_config(c);
  const auto sets = make_suite(cfg, c.seed);
  const BranchingModel m = BranchingModel::load(e.model);
  require(m.num_tasks() == static_cast<int>(cfg.tasks.size()), Errc::kInvalidArgument,
          "model and config disagree on the task count");
  const RunScore scores[] = {score_model(e.method, c.seed, m, task_data(sets), parse_split(e.split), 0)};
  const std::string csv = scores_csv(scores);
  std::cout << csv;
  if (!c.out.empty()) write(run_dir(c, seeded("eval_" + e.split, c.seed)) / "scores.csv", csv);
}

struct RssArgs {
  int subsets = 20;
  int epochs = 15;
  double lr = 1e-3;
  std::vector<double> uppers = {0.05, 0.1, 0.2, 0.5, 1.0};
};

void cmd_rss(const Common& c, const RssArgs& r) {
  const ExperimentConfig cfg = need_config(c);
  const fs::path dir = run_dir(c, seeded("rss", c.seed));
  save_config(cfg, dir);
  const auto sets = make_suite(cfg, c.seed);
  const RssExperiment exp = run_rss(cfg, task_data(sets), c.seed, r.subsets, r.epochs, r.lr, r.uppers);
  const std::string csv = rss_csv(exp);
  std::cout << csv;
  write(dir / "rss.csv", csv);
}

struct Prop1Args {
  int layer = -1;  // last layer
  int dim = 400;
  double lambda = 1e-3;
  int samples = 12;
};

// Gap report on the linearised model, whose feature loss is exactly linear
// in the parameters.
void cmd_prop1(const Common& c, const Prop1Args& a) {
  ExperimentConfig cfg = need_config(c);
  const fs::path dir = run_dir(c, seeded("prop1", c.seed));
  save_config(cfg, dir);
  const auto sets = make_suite(cfg, c.seed);
  const TaskData data = task_data(sets);
  std::vector<int> all(cfg.tasks.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  BranchingModel w0 = BranchingModel::new_chain(model_config(cfg, c.seed));
  train(w0, data, all, train_config(cfg, c.seed));
  const int layer = a.layer < 0 ? cfg.layers : a.layer;
  const std::size_t p = w0.params().dim() - w0.params().suffix_offset(layer);
  FeatureOptions fo;
  fo.layer = layer;
  fo.projection = ProjectionKind::kIdentity;
  fo.dim = static_cast<int>(p);
  fo.max_samples = static_cast<std::size_t>(a.samples);
  const auto f = extract_features(w0, data, all, fo);
  const auto loss = linear_loss_fn(f.features, f.base);
  const RetrainResult oracle = retrain_oracle(p, loss, a.lambda);
  const int d = std::min<int>(a.dim, static_cast<int>(p));
  const Matrix proj = make_projection(p, d, c.seed);
  const SurrogateFit fit = fit_surrogate(f.features * proj, f.base, a.lambda);
  const Vector lifted = proj * fit.w;
  const std::vector<double> lv(lifted.data(), lifted.data() + lifted.size());
  const Prop1Report r = verify_prop1(loss(lv, {}), oracle.loss, f.features.rowwise().norm().maxCoeff(),
                                     std::max(lifted.norm(), oracle.delta.norm()), jl_epsilon(d, p), 0.0);
  std::ostringstream o;
  o << "layer=" << layer << "\np=" << p << "\nd=" << d << "\nrows=" << f.rows()
    << "\nsurrogate_loss=" << format_double(r.surrogate_loss)
    << "\noracle_loss=" << format_double(r.oracle_loss) << "\ngap=" << format_double(r.gap)
    << "\nG=" << format_double(r.g) << "\nD=" << format_double(r.d)
    << "\nepsilon=" << format_double(r.epsilon) << "\ndelta_hat=" << format_double(r.delta_hat)
    << "\nbound=" << format_double(r.bound) << "\nholds=" << (r.holds ? "true" : "false") << '\n';
  std::cout << o.str();
  write(dir / "prop1.txt", o.str());
}

struct SweepArgs {
  std::string task;
  double target = 0.05;
  std::vector<int> sizes = {25, 50, 100, 200, 400};
};

void cmd_sweep(const Common& c, const SweepArgs& s) {
  const ExperimentConfig cfg = need_config(c);
  const fs::path dir = run_dir(c, seeded("sweep_" + s.task, c.seed));
  save_config(cfg, dir);
  try {
    const SweepResult r = sample_complexity_sweep(parse_algo(s.task), s.target, s.sizes, cfg, c.seed);
    write(dir / "sweep.csv", sweep_csv(r));
    std::cout << "minimal_size=" << r.minimal_size << '\n';
  } catch (const TargetUnreached& e) {
    write(dir / "sweep.csv", sweep_csv(e.result()));
    throw;
  }
}

struct ReportArgs {
  std::vector<std::string> inputs;
};

void cmd_report(const Common& c, const ReportArgs& r) {
  std::vector<RunScore> all;
  for (const auto& path : r.inputs) {
    auto part = parse_scores_csv(read_file(path));
    all.insert(all.end(), part.begin(), part.end());
  }
  const std::string table = report_table(all);
  std::cout << table;
  if (!c.out.empty()) write(run_dir(c, "report") / "report.csv", table);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Branching multitask networks for algorithmic reasoning"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool config) {
    sub->add_option("--out", common.out, "output root (default $BRANE_OUT or ./runs)");
    sub->add_option("--seed", common.seed, "seed");
    if (config) sub->add_option("--config", common.config, "experiment config file")->required()->check(CLI::ExistingFile);
  };

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "write a trace dataset");
  add_common(g, false);
  g->add_option("--task", gen.task, "algorithm name")->required();
  g->add_option("--n-train", gen.data.n_train);
  g->add_option("--n-val", gen.data.n_val);
  g->add_option("--n-test", gen.data.n_test);
  g->add_option("--nodes-train", gen.data.nodes_train);
  g->add_option("--nodes-test", gen.data.nodes_test);
  g->add_option("--p", gen.data.p, "edge probability");
  g->add_option("--weights", gen.weights, "auto, unit or random");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train STN, MTN or a saved tree");
  add_common(t, true);
  t->add_option("--mode", tr.mode, "stn, mtn or tree");
  t->add_option("--model", tr.model, "model directory for --mode tree");

  AffinityArgs af;
  auto* a = app.add_subcommand("affinity", "estimate the task affinity at one layer");
  add_common(a, true);
  a->add_option("--layer", af.layer);

  ClusterArgs cl;
  auto* k = app.add_subcommand("cluster", "partition tasks from an affinity CSV");
  add_common(k, false);
  k->add_option("--affinity", cl.affinity, "affinity CSV")->required()->check(CLI::ExistingFile);
  k->add_option("--layers", cl.layers);
  k->add_option("--layer", cl.layer);
  k->add_option("--max-growth", cl.max_growth);
  k->add_option("--lambda", cl.grid, "trace penalty grid");
  k->add_flag("--raw", cl.raw, "skip per-row normalisation");

  auto* b = app.add_subcommand("brane", "search and train a branching network");
  add_common(b, true);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a saved model per task");
  add_common(e, true);
  e->add_option("--model", ev.model, "model directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--split", ev.split, "train, val or test");
  e->add_option("--method", ev.method, "label for the scores");

  RssArgs rs;
  auto* r = app.add_subcommand("rss", "bucketed linearisation residuals");
  add_common(r, true);
  r->add_option("--subsets", rs.subsets);
  r->add_option("--epochs", rs.epochs);
  r->add_option("--lr", rs.lr);
  r->add_option("--uppers", rs.uppers, "bucket upper bounds on relative distance");

  Prop1Args pa;
  auto* p = app.add_subcommand("prop1", "estimation gap against the retraining oracle");
  add_common(p, true);
  p->add_option("--layer", pa.layer, "default: last layer");
  p->add_option("--dim", pa.dim);
  p->add_option("--lambda", pa.lambda);
  p->add_option("--samples", pa.samples, "train graphs per task");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "sample-complexity sweep for one task");
  add_common(s, true);
  s->add_option("--task", sw.task)->required();
  s->add_option("--target", sw.target, "validation error target");
  s->add_option("--sizes", sw.sizes, "ascending train sizes");

  ReportArgs rp;
  auto* o = app.add_subcommand("report", "aggregate score CSVs");
  add_common(o, false);
  o->add_option("inputs", rp.inputs, "scores.csv files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::CallForAllHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    return report_error("usage", err.what(), kUsage);
  }

  try {
    if (*g) cmd_gen(common, gen);
    if (*t) cmd_train(common, tr);
    if (*a) cmd_affinity(common, af);
    if (*k) cmd_cluster(common, cl);
    if (*b) cmd_brane(common);
    if (*e) cmd_eval(common, ev);
    if (*r) cmd_rss(common, rs);
    if (*p) cmd_prop1(common, pa);
    if (*s) cmd_sweep(common, sw);
    if (*o) cmd_report(common, rp);
  } catch (const Error& err) {
    const int status = err.code() == Errc::kInvalidArgument || err.code() == Errc::kUnknownTask ? kUsage : kRuntime;
    return report_error(errc_name(err.code()), err.what(), status);
  } catch (const std::exception& err) {
    return report_error("internal", err.what(), kRuntime);
  }
  return 0;
}
