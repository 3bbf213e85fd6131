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

#include "brane/clibench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "brane/util.hpp"

namespace brane {
namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

template <typename T>
std::string join_ints(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int as_int(const std::string& key, const std::string& v) {
  try {
    return static_cast<int>(parse_int(v));
  } catch (const Error&) {
    fail(Errc::kParse, "config key " + key + ": expected an integer, got '" + v + "'");
  }
}

double as_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    fail(Errc::kParse, "config key " + key + ": expected a number, got '" + v + "'");
  }
}

std::vector<std::string> as_list(const std::string& v) {
  std::vector<std::string> out;
  if (v.empty()) return out;
  for (auto part : split(v, ',')) out.push_back(trim(part));
  return out;
}

void check(bool cond, const std::string& key, const std::string& what) {
  require(cond, Errc::kInvalidArgument, "config key " + key + ": " + what);
}

std::vector<int> iota_tasks(std::size_t n) {
  std::vector<int> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<int>(i);
  return all;
}

double val_error(const BranchingModel& model, const TaskData& data, int task) {
  return 1.0 - evaluate_task(model, *data[static_cast<std::size_t>(task)], task, Split::kVal).accuracy;
}

}  // namespace

void validate(const ExperimentConfig& c) {
  check(!c.tasks.empty(), "tasks", "at least one task is required");
  std::set<Algo> uniq(c.tasks.begin(), c.tasks.end());
  check(uniq.size() == c.tasks.size(), "tasks", "duplicate task");
  check(c.data.n_train >= 1, "n_train", "must be positive");
  check(c.data.n_val >= 1, "n_val", "must be positive");
  check(c.data.n_test >= 1, "n_test", "must be positive");
  check(c.data.nodes_train >= 2, "nodes_train", "must be at least 2");
  check(c.data.nodes_test >= 2, "nodes_test", "must be at least 2");
  check(c.data.p > 0 && c.data.p <= 1, "p", "must lie in (0, 1]");
  check(c.layers >= 1, "layers", "must be positive");
  check(c.hidden >= 1, "hidden", "must be positive");
  check(c.search.m >= 1, "m", "must be positive");
  check(c.search.alpha_min >= 1, "alpha_min", "must be positive");
  check(c.search.alpha_max >= c.search.alpha_min, "alpha_max", "must be at least alpha_min");
  check(c.search.dim >= 1, "dim", "must be positive");
  check(c.search.lambda2 >= 0, "lambda2", "must be nonnegative");
  check(!c.search.lambda_grid.empty(), "lambda_grid", "must not be empty");
  for (double l : c.search.lambda_grid) check(l >= 0 && std::isfinite(l), "lambda_grid", "entries must be finite and nonnegative");
  check(c.search.max_growth >= 1, "max_growth", "must be at least 1");
  check(c.train.lr > 0, "lr", "must be positive");
  check(c.train.epochs >= 0, "epochs", "must be nonnegative");
  check(c.train.batch_size >= 1, "batch_size", "must be positive");
  check(c.train.patience >= 0, "patience", "must be nonnegative");
  check(c.meta_epochs >= -1, "meta_epochs", "must be -1 or nonnegative");
  check(!c.seeds.empty(), "seeds", "must not be empty");
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream o;
  std::vector<std::string> names;
  for (Algo a : c.tasks) names.emplace_back(algo_name(a));
  std::string tasks;
  for (std::size_t i = 0; i < names.size(); ++i) tasks += (i ? "," : "") + names[i];
  o << "tasks=" << tasks << '\n'
    << "n_train=" << c.data.n_train << '\n'
    << "n_val=" << c.data.n_val << '\n'
    << "n_test=" << c.data.n_test << '\n'
    << "nodes_train=" << c.data.nodes_train << '\n'
    << "nodes_test=" << c.data.nodes_test << '\n'
    << "p=" << format_double(c.data.p) << '\n'
    << "weights=" << weight_mode_name(c.data.weights) << '\n'
    << "layers=" << c.layers << '\n'
    << "hidden=" << c.hidden << '\n'
    << "m=" << c.search.m << '\n'
    << "alpha_min=" << c.search.alpha_min << '\n'
    << "alpha_max=" << c.search.alpha_max << '\n'
    << "dim=" << c.search.dim << '\n'
    << "lambda2=" << format_double(c.search.lambda2) << '\n'
    << "lambda_grid=" << join_doubles(c.search.lambda_grid) << '\n'
    << "max_growth=" << format_double(c.search.max_growth) << '\n'
    << "feature_samples=" << c.search.feature_samples << '\n'
    << "val_samples=" << c.search.val_samples << '\n'
    << "lr=" << format_double(c.train.lr) << '\n'
    << "epochs=" << c.train.epochs << '\n'
    << "batch_size=" << c.train.batch_size << '\n'
    << "patience=" << c.train.patience << '\n'
    << "meta_epochs=" << c.meta_epochs << '\n'
    << "seeds=" << join_ints(c.seeds) << '\n'
    << "out_dir=" << c.out_dir.string() << '\n';
  return o.str();
}

ExperimentConfig parse_config(std::string_view text) {
  using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"tasks", [](auto& c, auto&, auto& v) {
         c.tasks.clear();
         for (const auto& n : as_list(v)) c.tasks.push_back(parse_algo(n));
       }},
      {"n_train", [](auto& c, auto& k, auto& v) { c.data.n_train = as_int(k, v); }},
      {"n_val", [](auto& c, auto& k, auto& v) { c.data.n_val = as_int(k, v); }},
      {"n_test", [](auto& c, auto& k, auto& v) { c.data.n_test = as_int(k, v); }},
      {"nodes_train", [](auto& c, auto& k, auto& v) { c.data.nodes_train = as_int(k, v); }},
      {"nodes_test", [](auto& c, auto& k, auto& v) { c.data.nodes_test = as_int(k, v); }},
      {"p", [](auto& c, auto& k, auto& v) { c.data.p = as_double(k, v); }},
      {"weights", [](auto& c, auto&, auto& v) { c.data.weights = parse_weight_mode(v); }},
      {"layers", [](auto& c, auto& k, auto& v) { c.layers = as_int(k, v); }},
      {"hidden", [](auto& c, auto& k, auto& v) { c.hidden = as_int(k, v); }},
      {"m", [](auto& c, auto& k, auto& v) { c.search.m = as_int(k, v); }},
      {"alpha_min", [](auto& c, auto& k, auto& v) { c.search.alpha_min = as_int(k, v); }},
      {"alpha_max", [](auto& c, auto& k, auto& v) { c.search.alpha_max = as_int(k, v); }},
      {"dim", [](auto& c, auto& k, auto& v) { c.search.dim = as_int(k, v); }},
      {"lambda2", [](auto& c, auto& k, auto& v) { c.search.lambda2 = as_double(k, v); }},
      {"lambda_grid", [](auto& c, auto& k, auto& v) {
         c.search.lambda_grid.clear();
         for (const auto& x : as_list(v)) c.search.lambda_grid.push_back(as_double(k, x));
       }},
      {"max_growth", [](auto& c, auto& k, auto& v) { c.search.max_growth = as_double(k, v); }},
      {"feature_samples", [](auto& c, auto& k, auto& v) {
         const int n = as_int(k, v);
         check(n >= 0, k, "must be nonnegative");
         c.search.feature_samples = static_cast<std::size_t>(n);
       }},
      {"val_samples", [](auto& c, auto& k, auto& v) {
         const int n = as_int(k, v);
         check(n >= 0, k, "must be nonnegative");
         c.search.val_samples = static_cast<std::size_t>(n);
       }},
      {"lr", [](auto& c, auto& k, auto& v) { c.train.lr = as_double(k, v); }},
      {"epochs", [](auto& c, auto& k, auto& v) { c.train.epochs = as_int(k, v); }},
      {"batch_size", [](auto& c, auto& k, auto& v) { c.train.batch_size = as_int(k, v); }},
      {"patience", [](auto& c, auto& k, auto& v) { c.train.patience = as_int(k, v); }},
      {"meta_epochs", [](auto& c, auto& k, auto& v) { c.meta_epochs = as_int(k, v); }},
      {"seeds", [](auto& c, auto& k, auto& v) {
         c.seeds.clear();
         for (const auto& x : as_list(v)) {
           const long long s = parse_int(x);
           check(s >= 0, k, "seeds must be nonnegative");
           c.seeds.push_back(static_cast<std::uint64_t>(s));
         }
       }},
      {"out_dir", [](auto& c, auto&, auto& v) { c.out_dir = v; }},
  };
  ExperimentConfig c;
  std::set<std::string> seen;
  int line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, Errc::kParse, "config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto it = setters.find(key);
    require(it != setters.end(), Errc::kParse, "config line " + std::to_string(line_no) + ": unknown key " + key);
    require(seen.insert(key).second, Errc::kParse, "config key " + key + " given twice");
    it->second(c, key, value);
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "config.txt", serialize_config(cfg));
}

std::filesystem::path output_root(const std::filesystem::path& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("BRANE_OUT"); env && *env) return env;
  return "runs";
}

std::vector<TaskDataset> make_suite(const ExperimentConfig& cfg, std::uint64_t seed) {
  DatasetConfig dc = cfg.data;
  dc.seed = seed;
  std::vector<TaskDataset> out;
  for (Algo a : cfg.tasks) out.push_back(make_dataset(a, dc));
  return out;
}

TaskData task_data(const std::vector<TaskDataset>& sets) {
  TaskData d;
  for (const auto& s : sets) d.push_back(&s);
  return d;
}

ModelConfig model_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  ModelConfig m;
  for (Algo a : cfg.tasks) m.task_names.emplace_back(algo_name(a));
  m.layers = cfg.layers;
  m.hidden = cfg.hidden;
  m.seed = seed;
  return m;
}

TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = seed;
  return t;
}

BraneConfig brane_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  BraneConfig b;
  b.model = model_config(cfg, seed);
  b.search = cfg.search;
  b.search.seed = seed;
  b.final_train = train_config(cfg, seed);
  b.meta_train = b.final_train;
  b.meta_train.epochs = cfg.meta_epochs >= 0 ? cfg.meta_epochs : cfg.train.epochs / 2;
  return b;
}

double RunScore::mean_accuracy() const {
  if (accuracy.empty()) return 0.0;
  double s = 0;
  for (double a : accuracy) s += a;
  return s / static_cast<double>(accuracy.size());
}

double RunScore::memory_ratio() const {
  return layers > 0 ? static_cast<double>(module_count) / layers : 0.0;
}

RunScore score_model(const std::string& method, std::uint64_t seed, const BranchingModel& model,
                     const TaskData& data, Split split, int training_calls) {
  RunScore r;
  r.method = method;
  r.seed = seed;
  r.tasks = model.config().task_names;
  const auto all = iota_tasks(r.tasks.size());
  for (const auto& m : evaluate(model, data, all, split)) {
    r.accuracy.push_back(m.accuracy);
    r.loss.push_back(m.loss);
  }
  r.training_calls = training_calls;
  r.module_count = model.module_count();
  r.layers = model.layers();
  return r;
}

std::string scores_csv(std::span<const RunScore> scores) {
  std::ostringstream o;
  o << "method,seed,task,accuracy,loss,training_calls,module_count,layers\n";
  for (const auto& s : scores)
    for (std::size_t t = 0; t < s.tasks.size(); ++t)
      o << s.method << ',' << s.seed << ',' << s.tasks[t] << ',' << format_double(s.accuracy[t]) << ','
        << format_double(s.loss[t]) << ',' << s.training_calls << ',' << s.module_count << ',' << s.layers
        << '\n';
  return o.str();
}

std::vector<RunScore> parse_scores_csv(std::string_view text) {
  std::vector<RunScore> out;
  bool header = true;
  int line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (header) {
      require(line == "method,seed,task,accuracy,loss,training_calls,module_count,layers", Errc::kParse,
              "scores csv: unexpected header");
      header = false;
      continue;
    }
    const auto f = split(line, ',');
    require(f.size() == 8, Errc::kParse, "scores csv line " + std::to_string(line_no) + ": expected 8 fields");
    const std::string method(f[0]);
    const auto seed = static_cast<std::uint64_t>(parse_int(f[1]));
    if (out.empty() || out.back().method != method || out.back().seed != seed) {
      RunScore r;
      r.method = method;
      r.seed = seed;
      r.training_calls = static_cast<int>(parse_int(f[5]));
      r.module_count = static_cast<std::size_t>(parse_int(f[6]));
      r.layers = static_cast<int>(parse_int(f[7]));
      out.push_back(std::move(r));
    }
    out.back().tasks.emplace_back(f[2]);
    out.back().accuracy.push_back(parse_double(f[3]));
    out.back().loss.push_back(parse_double(f[4]));
  }
  require(!header, Errc::kParse, "scores csv: empty input");
  return out;
}

std::string report_table(std::span<const RunScore> scores) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunScore*>> by;
  for (const auto& s : scores) {
    if (!by.count(s.method)) order.push_back(s.method);
    by[s.method].push_back(&s);
  }
  std::ostringstream o;
  o << "method,runs,mean_accuracy,std_accuracy,training_calls,module_count,memory_ratio\n";
  for (const auto& m : order) {
    const auto& runs = by[m];
    const double n = static_cast<double>(runs.size());
    double mean = 0, calls = 0, modules = 0, ratio = 0;
    for (const auto* r : runs) {
      mean += r->mean_accuracy() / n;
      calls += r->training_calls / n;
      modules += static_cast<double>(r->module_count) / n;
      ratio += r->memory_ratio() / n;
    }
    double var = 0;
    for (const auto* r : runs) var += std::pow(r->mean_accuracy() - mean, 2) / n;
    o << m << ',' << runs.size() << ',' << format_double(mean) << ',' << format_double(std::sqrt(var))
      << ',' << format_double(calls) << ',' << format_double(modules) << ',' << format_double(ratio) << '\n';
  }
  return o.str();
}

BaselineRun run_baselines(const ExperimentConfig& cfg, const TaskData& data, std::uint64_t seed) {
  validate(cfg);
  require(data.size() == cfg.tasks.size(), Errc::kInvalidArgument, "one dataset per task is required");
  const ModelConfig mc = model_config(cfg, seed);
  const TrainConfig tc = train_config(cfg, seed);
  const auto all = iota_tasks(cfg.tasks.size());

  BaselineRun out{{}, {}, {}, BranchingModel::new_chain(mc)};
  train(out.mtn_model, data, all, tc);
  out.mtn = score_model("mtn", seed, out.mtn_model, data, Split::kTest, 1);

  out.stn.method = "stn";
  out.stn.seed = seed;
  out.stn.layers = cfg.layers;
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    ModelConfig single = mc;
    single.task_names = {mc.task_names[t]};
    BranchingModel chain = BranchingModel::new_chain(single);
    const TaskData one = {data[t]};
    const std::vector<int> only = {0};
    train(chain, one, only, tc);
    const RunScore s = score_model("stn", seed, chain, one, Split::kTest, 1);
    out.stn.tasks.push_back(s.tasks[0]);
    out.stn.accuracy.push_back(s.accuracy[0]);
    out.stn.loss.push_back(s.loss[0]);
    out.stn.training_calls += 1;
    out.stn.module_count += chain.module_count();
    out.stn_models.push_back(std::move(chain));
  }
  return out;
}

BraneRun run_brane(const ExperimentConfig& cfg, const TaskData& data, std::uint64_t seed) {
  validate(cfg);
  require(data.size() == cfg.tasks.size(), Errc::kInvalidArgument, "one dataset per task is required");
  BraneConfig bc = brane_config(cfg, seed);
  if (!cfg.out_dir.empty()) bc.out_dir = cfg.out_dir;
  BraneResult res = autobrane(data, bc);
  RunScore score = score_model("brane", seed, res.model, data, Split::kTest, res.state.training_calls);
  return {std::move(score), std::move(res)};
}

TargetUnreached::TargetUnreached(SweepResult result)
    : Error(Errc::kTargetUnreached,
            "target error " + format_double(result.target) + " not reached; best size " +
                std::to_string(result.best.size) + " error " + format_double(result.best.val_error)),
      result_(std::move(result)) {}

SweepResult sample_complexity_sweep(Algo task, double target_err, std::span<const int> sizes,
                                    const ExperimentConfig& base, std::uint64_t seed) {
  require(!sizes.empty(), Errc::kInvalidArgument, "sweep needs sizes");
  require(std::is_sorted(sizes.begin(), sizes.end()) && sizes.front() >= 1, Errc::kInvalidArgument,
          "sweep sizes must be positive and ascending");
  require(target_err > 0, Errc::kInvalidArgument, "target error must be positive");
  ExperimentConfig cfg = base;
  cfg.tasks = {task};
  validate(cfg);
  SweepResult out;
  out.task = task;
  out.target = target_err;
  out.best.val_error = 2.0;
  for (int size : sizes) {
    cfg.data.n_train = size;
    const auto sets = make_suite(cfg, seed);
    const TaskData data = task_data(sets);
    BranchingModel chain = BranchingModel::new_chain(model_config(cfg, seed));
    const std::vector<int> only = {0};
    train(chain, data, only, train_config(cfg, seed));
    const SweepPoint p{size, val_error(chain, data, 0)};
    out.curve.push_back(p);
    if (p.val_error < out.best.val_error) out.best = p;
    if (out.minimal_size < 0 && p.val_error < target_err) out.minimal_size = size;
  }
  if (out.minimal_size < 0) throw TargetUnreached(out);
  return out;
}

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream o;
  o << "task,size,val_error,target,reached\n";
  for (const auto& p : r.curve)
    o << algo_name(r.task) << ',' << p.size << ',' << format_double(p.val_error) << ','
      << format_double(r.target) << ',' << (p.val_error < r.target ? 1 : 0) << '\n';
  return o.str();
}

std::vector<MtStRow> compare_mt_st(const ExperimentConfig& base, int size, std::uint64_t seed) {
  ExperimentConfig cfg = base;
  cfg.data.n_train = size;
  validate(cfg);
  const auto sets = make_suite(cfg, seed);
  const TaskData data = task_data(sets);
  BaselineRun b = run_baselines(cfg, data, seed);
  std::vector<MtStRow> rows;
  for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
    MtStRow r;
    r.task = cfg.tasks[t];
    r.st_error = val_error(b.stn_models[t], {data[t]}, 0);
    r.mt_error = val_error(b.mtn_model, data, static_cast<int>(t));
    rows.push_back(r);
  }
  return rows;
}

RssExperiment run_rss(const ExperimentConfig& cfg, const TaskData& data, std::uint64_t seed,
                      int subsets, int epochs, double lr, std::span<const double> uppers) {
  validate(cfg);
  require(subsets >= 1 && epochs >= 1 && lr > 0, Errc::kInvalidArgument, "rss needs subsets, epochs and lr");
  const auto all = iota_tasks(cfg.tasks.size());
  BranchingModel w0 = BranchingModel::new_chain(model_config(cfg, seed));
  train(w0, data, all, train_config(cfg, seed));

  const int n = static_cast<int>(all.size());
  const int amax = std::min(cfg.search.alpha_max, n);
  const int amin = std::min(cfg.search.alpha_min, amax);
  const SubsetPlan plan = make_subset_plan(all, subsets, amin, amax, mix_seed(seed, 0x255));

  RssExperiment out;
  out.subsets = subsets;
  for (std::size_t k = 0; k < plan.subsets.size(); ++k) {
    const auto& s = plan.subsets[k];
    BranchingModel w = w0;
    TrainConfig tc = train_config(cfg, mix_seed(seed, k));
    tc.epochs = epochs;
    tc.lr = lr;
    tc.patience = 0;
    tc.on_epoch = [&](int, const BranchingModel& m) {
      out.points.push_back(measure_rss(m, w0, data, s, 1, Split::kVal, cfg.search.val_samples));
    };
    train(w, data, s, tc);
  }
  out.buckets = bucket_rss(out.points, uppers);
  return out;
}

std::string rss_csv(const RssExperiment& exp) {
  std::ostringstream o;
  o << "distance_upper,mean_rss,count\n";
  for (const auto& b : exp.buckets)
    o << format_double(b.upper) << ',' << format_double(b.mean_rss) << ',' << b.count << '\n';
  return o.str();
}

}  // namespace brane
