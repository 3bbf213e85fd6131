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

#include "brane/linearizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>
#include <set>
#include <sstream>

#include <ceres/ceres.h>

#include "brane/error.hpp"
#include "brane/util.hpp"

namespace brane {
namespace {

constexpr Eigen::Index kChunkRows = 256;
constexpr int kCandidates = 8;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

// 1 / (1 + exp(m))
double sigmoid_neg(double m) {
  if (m >= 0) {
    const double e = std::exp(-m);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(m));
}

std::string_view projection_name(ProjectionKind k) {
  return k == ProjectionKind::kIdentity ? "identity" : "gaussian";
}

std::vector<std::size_t> first_samples(std::size_t available, std::size_t cap) {
  std::vector<std::size_t> idx(cap == 0 ? available : std::min(cap, available));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

const TaskDataset& dataset(const TaskData& data, int task) {
  require(task >= 0 && static_cast<std::size_t>(task) < data.size() &&
              data[static_cast<std::size_t>(task)],
          Errc::kInvalidArgument, "no dataset for task " + std::to_string(task));
  return *data[static_cast<std::size_t>(task)];
}

// Chain whose suffix holds the modules `tasks` share from `layer` on.
BranchingModel shared_chain(const BranchingModel& model, std::span<const int> tasks, int layer) {
  require(!tasks.empty(), Errc::kEmptyTaskSet, "no tasks given");
  require(layer >= 1 && layer <= model.layers(), Errc::kBadLayerIndex, "layer out of range");
  const auto first = model.route(tasks[0]);
  for (int t : tasks) {
    const auto r = model.route(t);
    require(std::equal(r.begin() + layer - 1, r.end(), first.begin() + layer - 1),
            Errc::kInvalidArgument, "tasks do not share a route from the given layer");
  }
  return model.path_model(tasks[0]);
}

void put_i32(std::string& out, std::int32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_f64(std::string& out, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

}  // namespace

Matrix make_projection(std::size_t p, int d, std::uint64_t seed, ProjectionKind kind) {
  require(d >= 1, Errc::kDimension, "projection dimension must be positive");
  require(static_cast<std::size_t>(d) <= p, Errc::kDimension,
          "projection dimension " + std::to_string(d) + " exceeds parameter count " +
              std::to_string(p));
  if (kind == ProjectionKind::kIdentity) {
    require(static_cast<std::size_t>(d) == p, Errc::kDimension, "identity projection needs d == p");
    return Matrix::Identity(static_cast<Eigen::Index>(p), d);
  }
  std::mt19937_64 rng(mix_seed(seed, 0x9a55));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  Matrix proj(static_cast<Eigen::Index>(p), d);
  for (Eigen::Index i = 0; i < proj.rows(); ++i)
    for (Eigen::Index j = 0; j < proj.cols(); ++j) proj(i, j) = normal(rng);
  return proj;
}

std::vector<Eigen::Index> ProjectedFeatureSet::rows_of(std::span<const int> tasks) const {
  std::vector<Eigen::Index> out;
  for (std::size_t r = 0; r < ids.size(); ++r)
    if (std::find(tasks.begin(), tasks.end(), ids[r].task) != tasks.end())
      out.push_back(static_cast<Eigen::Index>(r));
  return out;
}

ProjectedFeatureSet extract_features(const BranchingModel& w0, const TaskData& data,
                                     std::span<const int> tasks, const FeatureOptions& opt) {
  const BranchingModel chain = shared_chain(w0, tasks, opt.layer);
  const ParamStore& params = chain.params();
  const std::size_t offset = params.suffix_offset(opt.layer);
  const std::size_t p = params.dim() - offset;
  const Matrix proj = make_projection(p, opt.dim, opt.seed, opt.projection);

  ProjectedFeatureSet out;
  out.seed = opt.seed;
  out.dim = opt.dim;
  out.layer = opt.layer;
  out.p = p;
  out.projection = opt.projection;

  std::vector<double> base, norms;
  std::vector<Matrix> blocks;
  Matrix chunk(kChunkRows, static_cast<Eigen::Index>(p));
  Eigen::Index filled = 0;
  auto flush = [&] {
    if (filled == 0) return;
    if (opt.projection == ProjectionKind::kIdentity) {
      blocks.emplace_back(chunk.topRows(filled));
    } else {
      blocks.emplace_back(chunk.topRows(filled) * proj);
    }
    filled = 0;
  };

  for (int task : tasks) {
    const auto& samples = split_samples(dataset(data, task), opt.split);
    for (std::size_t s : first_samples(samples.size(), opt.max_samples)) {
      const Sample& sample = samples[s];
      const int n = sample.graph.num_nodes;
      for (int j = 0; j < sample.trace.num_steps(); ++j) {
        const LabelRow& target = sample.trace.steps[static_cast<std::size_t>(j + 1)];
        StepInstance inst{&sample.graph, &sample.trace.steps[static_cast<std::size_t>(j)], &target,
                          sample.trace.source, 1.0, nullptr};
        StepBatch batch = make_batch(std::span<const StepInstance>(&inst, 1));
        Tape tape(params);
        Var logits = chain.forward(tape, batch, task);
        for (int u = 0; u < n; ++u) {
          Var margin = tape.row_margin(logits, u, n, target[static_cast<std::size_t>(u)]);
          Vector g = tape.grad_suffix(margin, opt.layer);
          chunk.row(filled++) = g.transpose();
          base.push_back(tape.scalar(margin));
          norms.push_back(g.norm());
          out.ids.push_back({task, static_cast<int>(s), j, u});
          if (filled == kChunkRows) flush();
        }
      }
    }
  }
  flush();
  require(!out.ids.empty(), Errc::kInvalidArgument, "no feature rows extracted");
  out.features.resize(static_cast<Eigen::Index>(out.ids.size()), opt.dim);
  Eigen::Index row = 0;
  for (const auto& b : blocks) {
    out.features.middleRows(row, b.rows()) = b;
    row += b.rows();
  }
  out.base = Eigen::Map<Vector>(base.data(), static_cast<Eigen::Index>(base.size()));
  out.grad_norm = Eigen::Map<Vector>(norms.data(), static_cast<Eigen::Index>(norms.size()));
  return out;
}

std::string serialize_features(const ProjectedFeatureSet& f) {
  static_assert(std::endian::native == std::endian::little, "cache format is little-endian");
  std::string body;
  for (std::size_t r = 0; r < f.ids.size(); ++r) {
    const auto& id = f.ids[r];
    for (int v : {id.task, id.sample, id.step, id.node}) put_i32(body, v);
    const auto i = static_cast<Eigen::Index>(r);
    for (Eigen::Index c = 0; c < f.features.cols(); ++c) put_f64(body, f.features(i, c));
    put_f64(body, f.base[i]);
    put_f64(body, f.grad_norm[i]);
  }
  Fnv1a h;
  h.update(body);
  std::ostringstream head;
  head << "brane-features 1 seed=" << f.seed << " d=" << f.dim << " layer=" << f.layer
       << " p=" << f.p << " projection=" << projection_name(f.projection) << " rows=" << f.ids.size()
       << " checksum=" << h.hex() << '\n';
  return head.str() + body;
}

ProjectedFeatureSet parse_features(std::string_view bytes) {
  const auto eol = bytes.find('\n');
  require(eol != std::string_view::npos, Errc::kParse, "feature cache has no header");
  auto fields = split(bytes.substr(0, eol), ' ');
  require(fields.size() == 9 && fields[0] == "brane-features" && fields[1] == "1", Errc::kParse,
          "not a feature cache");
  std::map<std::string, std::string, std::less<>> kv;
  for (std::size_t i = 2; i < fields.size(); ++i) {
    const auto eq = fields[i].find('=');
    require(eq != std::string_view::npos, Errc::kParse, "bad header field");
    kv.emplace(std::string(fields[i].substr(0, eq)), std::string(fields[i].substr(eq + 1)));
  }
  ProjectedFeatureSet f;
  f.seed = std::stoull(kv.at("seed"));
  f.dim = static_cast<int>(parse_int(kv.at("d")));
  f.layer = static_cast<int>(parse_int(kv.at("layer")));
  f.p = static_cast<std::size_t>(parse_int(kv.at("p")));
  f.projection = kv.at("projection") == "identity" ? ProjectionKind::kIdentity : ProjectionKind::kGaussian;
  const auto rows = static_cast<std::size_t>(parse_int(kv.at("rows")));
  const std::string_view body = bytes.substr(eol + 1);
  Fnv1a h;
  h.update(body);
  require(h.hex() == kv.at("checksum"), Errc::kChecksum, "feature cache checksum mismatch");
  const std::size_t row_bytes = 16 + 8 * (static_cast<std::size_t>(f.dim) + 2);
  require(body.size() == rows * row_bytes, Errc::kParse, "feature cache has the wrong size");
  f.features.resize(static_cast<Eigen::Index>(rows), f.dim);
  f.base.resize(static_cast<Eigen::Index>(rows));
  f.grad_norm.resize(static_cast<Eigen::Index>(rows));
  const char* at = body.data();
  auto i32 = [&] {
    std::int32_t v;
    std::memcpy(&v, at, 4);
    at += 4;
    return v;
  };
  auto f64 = [&] {
    double v;
    std::memcpy(&v, at, 8);
    at += 8;
    return v;
  };
  for (std::size_t r = 0; r < rows; ++r) {
    FeatureId id;
    id.task = i32();
    id.sample = i32();
    id.step = i32();
    id.node = i32();
    f.ids.push_back(id);
    const auto i = static_cast<Eigen::Index>(r);
    for (int c = 0; c < f.dim; ++c) f.features(i, c) = f64();
    f.base[i] = f64();
    f.grad_norm[i] = f64();
  }
  return f;
}

void save_features(const ProjectedFeatureSet& f, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_features(f));
}

ProjectedFeatureSet load_features(const std::filesystem::path& path) {
  return parse_features(read_file(path));
}

double logistic_loss(const Matrix& x, const Vector& b, const Vector& w) {
  require(x.rows() > 0, Errc::kInvalidArgument, "no rows");
  const Vector m = x * w + b;
  double total = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) total += softplus(-m[i]);
  return total / static_cast<double>(m.size());
}

SurrogateFit fit_surrogate(const Matrix& x, const Vector& b, double lambda, double tol,
                           int max_iters) {
  require(x.rows() > 0 && x.rows() == b.size(), Errc::kInvalidArgument,
          "surrogate needs matching nonempty rows");
  require(lambda >= 0, Errc::kInvalidArgument, "lambda must be non-negative");
  const Eigen::Index d = x.cols();
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  auto objective = [&](const Vector& w) { return logistic_loss(x, b, w) + lambda * w.squaredNorm(); };

  SurrogateFit fit;
  fit.w = Vector::Zero(d);
  double f = objective(fit.w);
  for (int it = 0;; ++it) {
    const Vector m = x * fit.w + b;
    Vector s(m.size()), curv(m.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      s[i] = sigmoid_neg(m[i]);
      curv[i] = std::sqrt(s[i] * (1.0 - s[i]));
    }
    const Vector grad = -(x.transpose() * s) * inv_n + 2.0 * lambda * fit.w;
    fit.grad_norm = grad.norm();
    fit.iterations = it;
    if (fit.grad_norm <= tol) break;
    if (it >= max_iters)
      fail(Errc::kNonConvergence, "surrogate fit stalled at gradient norm " +
                                      format_double(fit.grad_norm) + "; increase lambda");
    const Matrix weighted = curv.asDiagonal() * x;
    Matrix hess = Matrix::Zero(d, d);
    hess.selfadjointView<Eigen::Lower>().rankUpdate(weighted.transpose(), inv_n);
    hess.diagonal().array() += 2.0 * lambda;
    const Vector step = hess.selfadjointView<Eigen::Lower>().ldlt().solve(-grad);
    const double slope = grad.dot(step);
    double t = 1.0;
    Vector next = fit.w + step;
    double fn = objective(next);
    while (fn > f + 1e-4 * t * slope + 1e-15 * std::abs(f) && t > 1e-12) {
      t *= 0.5;
      next = fit.w + t * step;
      fn = objective(next);
    }
    fit.w = std::move(next);
    f = fn;
  }
  fit.objective = f;
  fit.loss = logistic_loss(x, b, fit.w);
  return fit;
}

SubsetPlan make_subset_plan(std::span<const int> tasks, int m, int alpha_min, int alpha_max,
                            std::uint64_t seed) {
  SubsetPlan plan;
  plan.tasks.assign(tasks.begin(), tasks.end());
  std::sort(plan.tasks.begin(), plan.tasks.end());
  plan.seed = seed;
  const int n = static_cast<int>(plan.tasks.size());
  require(n >= 1, Errc::kEmptyTaskSet, "subset plan needs tasks");
  require(std::adjacent_find(plan.tasks.begin(), plan.tasks.end()) == plan.tasks.end(),
          Errc::kInvalidArgument, "duplicate task in subset plan");
  require(m >= 1, Errc::kInvalidArgument, "subset count must be positive");
  require(alpha_min >= 1 && alpha_min <= alpha_max && alpha_max <= n, Errc::kInvalidArgument,
          "subset size range must lie in [1, n]");
  if (n >= 2)
    require(alpha_max >= 2, Errc::kUncoveredPair, "subsets of size 1 cannot cover task pairs");
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    std::mt19937_64 rng(mix_seed(seed, attempt));
    std::uniform_int_distribution<int> size(alpha_min, alpha_max);
    plan.subsets.clear();
    Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(n, n);
    Eigen::MatrixXi count = Eigen::MatrixXi::Zero(n, n);
    for (int k = 0; k < m; ++k) {
      // Best of a few random draws, scored by how rarely their pairs were seen.
      const auto want = static_cast<std::size_t>(size(rng));
      std::vector<int> best;
      double best_score = -1;
      for (int c = 0; c < kCandidates; ++c) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(want);
        std::sort(idx.begin(), idx.end());
        double score = 0;
        for (std::size_t a = 0; a < idx.size(); ++a)
          for (std::size_t b = a + 1; b < idx.size(); ++b)
            score += 1.0 / (1.0 + count(idx[a], idx[b]));
        if (score > best_score) {
          best_score = score;
          best = std::move(idx);
        }
      }
      std::vector<int> subset;
      for (int a : best) {
        for (int b : best) {
          seen(a, b) = 1;
          count(a, b) += 1;
        }
        subset.push_back(plan.tasks[static_cast<std::size_t>(a)]);
      }
      plan.subsets.push_back(std::move(subset));
    }
    if (seen.minCoeff() > 0) return plan;
  }
  fail(Errc::kUncoveredPair, "could not cover every task pair; raise m or alpha");
}

SubsetLossTable estimate_subset_losses(const ProjectedFeatureSet& train, const SubsetPlan& plan,
                                       const ProjectedFeatureSet& val, double lambda) {
  require(train.dim == val.dim && train.seed == val.seed && train.layer == val.layer &&
              train.projection == val.projection,
          Errc::kDimension, "train and validation features use different projections");
  SubsetLossTable table;
  table.plan = plan;
  std::map<std::vector<int>, std::size_t> done;
  for (const auto& subset : plan.subsets) {
    if (auto it = done.find(subset); it != done.end()) {
      table.loss.push_back(table.loss[it->second]);
      table.fits.push_back(table.fits[it->second]);
      continue;
    }
    done.emplace(subset, table.loss.size());
    const auto rows = train.rows_of(subset);
    require(!rows.empty(), Errc::kInvalidArgument, "subset has no training rows");
    const Matrix x = train.features(rows, Eigen::all);
    const Vector b = train.base(rows);
    SurrogateFit fit = fit_surrogate(x, b, lambda);
    std::map<int, double> losses;
    for (int t : subset) {
      const std::vector<int> one = {t};
      const auto vrows = val.rows_of(one);
      require(!vrows.empty(), Errc::kInvalidArgument, "task has no validation rows");
      losses[t] = logistic_loss(val.features(vrows, Eigen::all), val.base(vrows), fit.w);
    }
    table.loss.push_back(std::move(losses));
    table.fits.push_back(std::move(fit));
  }
  return table;
}

AffinityMatrix affinity_matrix(const SubsetLossTable& table, int layer) {
  AffinityMatrix a;
  a.tasks = table.plan.tasks;
  a.layer = layer;
  const auto n = static_cast<Eigen::Index>(a.tasks.size());
  a.scores = Matrix::Zero(n, n);
  a.counts = Eigen::MatrixXi::Zero(n, n);
  require(table.loss.size() == table.plan.subsets.size(), Errc::kInvalidArgument,
          "loss table does not match its plan");
  auto index = [&](int task) {
    auto it = std::lower_bound(a.tasks.begin(), a.tasks.end(), task);
    require(it != a.tasks.end() && *it == task, Errc::kInvalidArgument, "task outside plan");
    return static_cast<Eigen::Index>(it - a.tasks.begin());
  };
  for (std::size_t k = 0; k < table.plan.subsets.size(); ++k) {
    const auto& subset = table.plan.subsets[k];
    for (int i : subset) {
      for (int j : subset) {
        a.scores(index(i), index(j)) += table.loss[k].at(i);
        a.counts(index(i), index(j)) += 1;
      }
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      require(a.counts(i, j) > 0, Errc::kUncoveredPair,
              "tasks " + std::to_string(a.tasks[static_cast<std::size_t>(i)]) + " and " +
                  std::to_string(a.tasks[static_cast<std::size_t>(j)]) + " never share a subset");
      a.scores(i, j) /= a.counts(i, j);
    }
  }
  return a;
}

Matrix clustering_affinity(const Matrix& scores, bool relative) {
  require(scores.rows() == scores.cols(), Errc::kShapeMismatch, "affinity must be square");
  Matrix t = scores;
  if (relative)
    for (Eigen::Index i = 0; i < t.rows(); ++i) t.row(i) /= std::max(scores(i, i), 1e-12);
  Matrix a = -(t + t.transpose()) / 2.0;
  const double mean = a.mean();
  const double var = (a.array() - mean).square().mean();
  if (var <= 1e-30) return Matrix::Zero(a.rows(), a.cols());
  return (a.array() - mean) / std::sqrt(var);
}

std::string affinity_csv(const AffinityMatrix& a, const ModelConfig& config) {
  std::ostringstream out;
  out << "task";
  for (int t : a.tasks) out << ',' << config.task_names.at(static_cast<std::size_t>(t));
  out << '\n';
  for (std::size_t i = 0; i < a.tasks.size(); ++i) {
    out << config.task_names.at(static_cast<std::size_t>(a.tasks[i]));
    for (std::size_t j = 0; j < a.tasks.size(); ++j)
      out << ',' << format_double(a.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out << '\n';
  }
  return out.str();
}

NamedScores parse_affinity_csv(std::string_view text) {
  std::vector<std::vector<std::string_view>> rows;
  for (std::string_view line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) rows.push_back(split(line, ','));
  }
  require(!rows.empty() && rows[0].size() >= 2 && rows[0][0] == "task", Errc::kParse,
          "affinity csv needs a task header");
  const std::size_t n = rows[0].size() - 1;
  require(rows.size() == n + 1, Errc::kParse, "affinity csv is not square");
  NamedScores out;
  out.scores.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rows[i + 1];
    require(r.size() == n + 1, Errc::kParse, "affinity csv row " + std::to_string(i + 1) + " is ragged");
    require(r[0] == rows[0][i + 1], Errc::kParse, "affinity csv row and column names differ");
    out.names.emplace_back(r[0]);
    for (std::size_t j = 0; j < n; ++j)
      out.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_double(r[j + 1]);
  }
  return out;
}

RssResult measure_rss(const BranchingModel& w, const BranchingModel& w0, const TaskData& data,
                      std::span<const int> tasks, int layer, Split split, std::size_t max_samples) {
  require(!tasks.empty(), Errc::kEmptyTaskSet, "no tasks given");
  require(w.serialize_tree() == w0.serialize_tree() && w.params().layout_equal(w0.params()),
          Errc::kShapeMismatch, "models differ in architecture");
  const auto x = w.params().values();
  const auto x0 = w0.params().values();
  const std::size_t offset = w0.params().suffix_offset(layer);
  require(std::equal(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(offset), x0.begin()),
          Errc::kShapeMismatch, "models differ below the linearized layer");
  std::vector<double> delta(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) delta[i] = x[i] - x0[i];

  RssResult out;
  const Eigen::Map<const Vector> wv(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::Map<const Vector> dv(delta.data(), static_cast<Eigen::Index>(delta.size()));
  out.distance = wv.norm() > 0 ? dv.norm() / wv.norm() : 0.0;
  double rss_total = 0, margin_total = 0;
  for (int task : tasks) {
    const auto& samples = split_samples(dataset(data, task), split);
    const auto which = first_samples(samples.size(), max_samples);
    double task_err = 0;
    for (std::size_t s : which) {
      const Sample& sample = samples[s];
      const int n = sample.graph.num_nodes;
      const int steps = sample.trace.num_steps();
      double graph_err = 0;
      for (int j = 0; j < steps; ++j) {
        const LabelRow& target = sample.trace.steps[static_cast<std::size_t>(j + 1)];
        StepInstance inst{&sample.graph, &sample.trace.steps[static_cast<std::size_t>(j)], &target,
                          sample.trace.source, 1.0, nullptr};
        StepBatch batch = make_batch(std::span<const StepInstance>(&inst, 1));
        Tape t0(w0.params());
        Var l0 = w0.forward(t0, batch, task);
        const Matrix jv = t0.jvp(l0, delta);
        Tape t1(w.params());
        const Matrix f1 = t1.value(w.forward(t1, batch, task));
        const Matrix& f0 = t0.value(l0);
        const double denom = f1.squaredNorm();
        rss_total += denom > 0 ? (f1 - f0 - jv).squaredNorm() / denom : 0.0;
        ++out.steps;

        double step_err = 0;
        for (int u = 0; u < n; ++u) {
          const int y = target[static_cast<std::size_t>(u)];
          auto margin = [&](const Matrix& z) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int v = 0; v < n; ++v)
              if (v != y) mx = std::max(mx, z(u, v));
            if (n == 1) return z(u, y);
            double s = 0;
            for (int v = 0; v < n; ++v)
              if (v != y) s += std::exp(z(u, v) - mx);
            return z(u, y) - (mx + std::log(s));
          };
          double dm = jv(u, y);
          if (n > 1) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int v = 0; v < n; ++v)
              if (v != y) mx = std::max(mx, f0(u, v));
            double z = 0, acc = 0;
            for (int v = 0; v < n; ++v) {
              if (v == y) continue;
              const double e = std::exp(f0(u, v) - mx);
              z += e;
              acc += e * jv(u, v);
            }
            dm -= acc / z;
          }
          step_err += std::abs(margin(f1) - margin(f0) - dm);
        }
        graph_err += step_err / n;
      }
      if (steps > 0) task_err += graph_err / steps;
    }
    if (!which.empty()) margin_total += task_err / static_cast<double>(which.size());
  }
  out.rss = out.steps ? rss_total / static_cast<double>(out.steps) : 0.0;
  out.margin_error = margin_total / static_cast<double>(tasks.size());
  return out;
}

std::vector<RssBucket> bucket_rss(std::span<const RssResult> results, std::span<const double> uppers) {
  std::vector<RssBucket> out;
  double lower = -1;
  for (double upper : uppers) {
    RssBucket b;
    b.upper = upper;
    for (const auto& r : results) {
      if (r.distance > lower && r.distance <= upper) {
        b.mean_rss += r.rss;
        ++b.count;
      }
    }
    if (b.count) b.mean_rss /= static_cast<double>(b.count);
    out.push_back(b);
    lower = upper;
  }
  return out;
}

LossFn model_loss_fn(const BranchingModel& w0, const TaskData& data, std::span<const int> tasks,
                     int layer, Split split, std::size_t max_samples) {
  auto chain = std::make_shared<BranchingModel>(shared_chain(w0, tasks, layer));
  const std::size_t offset = chain->params().suffix_offset(layer);
  const std::vector<double> base(chain->params().values().begin(), chain->params().values().end());

  struct TaskBatch {
    int task;
    StepBatch batch;
  };
  auto batches = std::make_shared<std::vector<TaskBatch>>();
  std::size_t rows = 0;
  std::vector<std::pair<int, StepSet>> sets;
  for (int task : tasks) {
    const auto& samples = split_samples(dataset(data, task), split);
    const auto which = first_samples(samples.size(), max_samples);
    StepSet set = collect_steps(samples, which, 1.0);
    for (const auto& inst : set.instances) rows += inst.graph->num_nodes;
    sets.emplace_back(task, std::move(set));
  }
  require(rows > 0, Errc::kInvalidArgument, "loss has no rows");
  for (auto& [task, set] : sets) {
    for (auto& inst : set.instances) inst.weight = 1.0 / static_cast<double>(rows);
    batches->push_back({task, make_batch(set.instances)});
  }

  return [chain, batches, offset, base, layer](std::span<const double> delta, std::span<double> grad) {
    ParamStore& p = chain->params();
    auto values = p.values();
    require(delta.size() == values.size() - offset, Errc::kShapeMismatch, "displacement size");
    for (std::size_t i = 0; i < delta.size(); ++i) values[offset + i] = base[offset + i] + delta[i];
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    double total = 0;
    for (const auto& tb : *batches) {
      Tape tape(p);
      Var loss = tape.cross_entropy(chain->forward(tape, tb.batch, tb.task), tb.batch.width,
                                    tb.batch.target, tb.batch.weight);
      total += tape.scalar(loss);
      if (!grad.empty()) {
        const Vector g = tape.grad_suffix(loss, layer);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[static_cast<Eigen::Index>(i)];
      }
    }
    return total;
  };
}

LossFn linear_loss_fn(const Matrix& grads, const Vector& base) {
  require(grads.rows() == base.size() && grads.rows() > 0, Errc::kShapeMismatch,
          "gradient rows and margins differ");
  return [grads, base](std::span<const double> delta, std::span<double> grad) {
    const Eigen::Map<const Vector> d(delta.data(), static_cast<Eigen::Index>(delta.size()));
    const Vector m = grads * d + base;
    const double inv_n = 1.0 / static_cast<double>(m.size());
    double total = 0;
    Vector s(m.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      total += softplus(-m[i]);
      s[i] = sigmoid_neg(m[i]);
    }
    if (!grad.empty()) {
      Eigen::Map<Vector> g(grad.data(), static_cast<Eigen::Index>(grad.size()));
      g = -(grads.transpose() * s) * inv_n;
    }
    return total * inv_n;
  };
}

namespace {

class RegularizedLoss final : public ceres::FirstOrderFunction {
 public:
  RegularizedLoss(std::size_t dim, const LossFn& loss, double lambda)
      : dim_(dim), loss_(loss), lambda_(lambda) {}

  bool Evaluate(const double* x, double* cost, double* gradient) const override {
    std::span<const double> delta(x, dim_);
    std::span<double> grad;
    if (gradient) grad = std::span<double>(gradient, dim_);
    double reg = 0;
    for (double v : delta) reg += v * v;
    *cost = loss_(delta, grad) + lambda_ * reg;
    if (gradient)
      for (std::size_t i = 0; i < dim_; ++i) gradient[i] += 2.0 * lambda_ * x[i];
    return std::isfinite(*cost);
  }
  int NumParameters() const override { return static_cast<int>(dim_); }

 private:
  std::size_t dim_;
  const LossFn& loss_;
  double lambda_;
};

}  // namespace

RetrainResult retrain_oracle(std::size_t dim, const LossFn& loss, double lambda, int max_iters,
                             double grad_tol) {
  require(dim > 0, Errc::kDimension, "nothing to retrain");
  std::vector<double> x(dim, 0.0);
  ceres::GradientProblem problem(new RegularizedLoss(dim, loss, lambda));
  ceres::GradientProblemSolver::Options options;
  options.line_search_direction_type = ceres::LBFGS;
  options.max_num_iterations = max_iters;
  options.gradient_tolerance = grad_tol;
  options.function_tolerance = 1e-15;
  options.parameter_tolerance = 1e-15;
  options.logging_type = ceres::SILENT;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(options, problem, x.data(), &summary);

  RetrainResult r;
  r.delta = Eigen::Map<Vector>(x.data(), static_cast<Eigen::Index>(dim));
  std::vector<double> g(dim);
  r.loss = loss(x, g);
  Eigen::Map<Vector> gv(g.data(), static_cast<Eigen::Index>(dim));
  gv += 2.0 * lambda * r.delta;
  r.grad_norm = gv.norm();
  r.objective = r.loss + lambda * r.delta.squaredNorm();
  r.iterations = static_cast<int>(summary.iterations.size());
  return r;
}

double jl_epsilon(int d, std::size_t p) {
  require(d >= 1, Errc::kDimension, "projection dimension must be positive");
  if (p < 2) return 0.0;
  const double target = 4.0 * std::log(static_cast<double>(p)) / d;
  auto f = [](double e) { return e * e / 2.0 - e * e * e / 3.0; };
  if (target >= f(1.0)) return 1.0;
  double lo = 0, hi = 1;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < target ? lo : hi) = mid;
  }
  return hi;
}

Prop1Report verify_prop1(double surrogate_loss, double oracle_loss, double g, double d,
                         double epsilon, double delta_hat, double slack) {
  Prop1Report r;
  r.surrogate_loss = surrogate_loss;
  r.oracle_loss = oracle_loss;
  r.gap = surrogate_loss - oracle_loss;
  r.g = g;
  r.d = d;
  r.epsilon = epsilon;
  r.delta_hat = delta_hat;
  r.bound = 2.0 * delta_hat + 2.0 * g * d * epsilon;
  r.holds = r.gap <= r.bound + slack;
  return r;
}

}  // namespace brane
