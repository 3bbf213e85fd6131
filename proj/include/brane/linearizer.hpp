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
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "brane/branchnet.hpp"
#include "brane/diffcore.hpp"
#include "brane/trainer.hpp"

namespace brane {

enum class ProjectionKind { kGaussian, kIdentity };

// p x d matrix with i.i.d. Normal(0, 1/d) entries, or the identity (d == p).
Matrix make_projection(std::size_t p, int d, std::uint64_t seed,
                       ProjectionKind kind = ProjectionKind::kGaussian);

struct FeatureOptions {
  int layer = 1;
  int dim = 400;
  std::uint64_t seed = 0;
  ProjectionKind projection = ProjectionKind::kGaussian;
  Split split = Split::kTrain;
  std::size_t max_samples = 0;  // per task, 0 = all
};

struct FeatureId {
  int task = 0;
  int sample = 0;
  int step = 0;
  int node = 0;

  bool operator==(const FeatureId&) const = default;
};

// One row per (task, sample, step, node): sketched gradient of the
// true-class margin at W0 and the margin itself. Targets are all +1.
struct ProjectedFeatureSet {
  std::vector<FeatureId> ids;
  Matrix features;   // rows x d
  Vector base;       // margins at W0
  Vector grad_norm;  // unprojected gradient norms
  std::uint64_t seed = 0;
  int dim = 0;
  int layer = 1;
  std::size_t p = 0;
  ProjectionKind projection = ProjectionKind::kGaussian;

  std::size_t rows() const { return ids.size(); }
  std::vector<Eigen::Index> rows_of(std::span<const int> tasks) const;

  bool operator==(const ProjectedFeatureSet&) const = default;
};

// All of `tasks` must share their route from `opt.layer` down, as a node's
// task set does before it is split.
ProjectedFeatureSet extract_features(const BranchingModel& w0, const TaskData& data,
                                     std::span<const int> tasks, const FeatureOptions& opt);

std::string serialize_features(const ProjectedFeatureSet& f);
ProjectedFeatureSet parse_features(std::string_view bytes);
void save_features(const ProjectedFeatureSet& f, const std::filesystem::path& path);
ProjectedFeatureSet load_features(const std::filesystem::path& path);

struct SurrogateFit {
  Vector w;
  double objective = 0;  // mean logistic loss + lambda |w|^2
  double loss = 0;       // mean logistic loss alone
  double grad_norm = 0;
  int iterations = 0;
};

// Mean of log(1 + exp(-(x w + b))) over the selected rows.
double logistic_loss(const Matrix& x, const Vector& b, const Vector& w);

// Newton's method with backtracking on the regularized mean logistic loss,
// run to gradient norm <= tol.
SurrogateFit fit_surrogate(const Matrix& x, const Vector& b, double lambda, double tol = 1e-8,
                           int max_iters = 100);

struct SubsetPlan {
  std::vector<std::vector<int>> subsets;  // each sorted
  std::vector<int> tasks;                 // sorted universe
  std::uint64_t seed = 0;
};

// m subsets with sizes drawn uniformly from [alpha_min, alpha_max]. Each
// subset is the best of a few random draws at covering rarely seen pairs;
// the plan is redrawn until every pair of tasks appears together.
SubsetPlan make_subset_plan(std::span<const int> tasks, int m, int alpha_min, int alpha_max,
                            std::uint64_t seed);

struct SubsetLossTable {
  SubsetPlan plan;
  std::vector<std::map<int, double>> loss;  // per subset: task -> estimated val loss
  std::vector<SurrogateFit> fits;
};

SubsetLossTable estimate_subset_losses(const ProjectedFeatureSet& train, const SubsetPlan& plan,
                                       const ProjectedFeatureSet& val, double lambda = 1e-4);

struct AffinityMatrix {
  std::vector<int> tasks;  // row/column order
  Matrix scores;           // mean loss of row task over subsets holding both
  Eigen::MatrixXi counts;
  int layer = 1;
};

AffinityMatrix affinity_matrix(const SubsetLossTable& table, int layer = 1);
// -(T + T^T) / 2, z-scored over all entries; higher means better transfer.
// With `relative`, row i is first divided by T(i, i) so tasks with large
// losses do not dominate the density.
Matrix clustering_affinity(const Matrix& scores, bool relative = true);
std::string affinity_csv(const AffinityMatrix& a, const ModelConfig& config);

struct NamedScores {
  std::vector<std::string> names;
  Matrix scores;
};
// Reads the affinity_csv layout back; throws Parse on ragged or non-square input.
NamedScores parse_affinity_csv(std::string_view text);

struct RssResult {
  double rss = 0;           // mean over steps of |f_W - f_W0 - J dW|^2 / |f_W|^2
  double distance = 0;      // |W - W0| / |W|
  double margin_error = 0;  // task-, graph-, step-nested mean |Taylor error| of margins
  std::size_t steps = 0;
};

// W and W0 share a layout and agree on every layer below `layer`.
RssResult measure_rss(const BranchingModel& w, const BranchingModel& w0, const TaskData& data,
                      std::span<const int> tasks, int layer, Split split = Split::kVal,
                      std::size_t max_samples = 0);

struct RssBucket {
  double upper = 0;
  double mean_rss = 0;
  std::size_t count = 0;
};
std::vector<RssBucket> bucket_rss(std::span<const RssResult> results, std::span<const double> uppers);

// Mean loss over rows and its gradient at a displacement of the trainable
// coordinates.
using LossFn = std::function<double(std::span<const double> delta, std::span<double> grad)>;

// Mean cross-entropy over every teacher-forced row of `tasks` as a function
// of the coordinates from suffix_offset(layer) on.
LossFn model_loss_fn(const BranchingModel& w0, const TaskData& data, std::span<const int> tasks,
                     int layer, Split split, std::size_t max_samples = 0);
// Loss of margins b + G delta.
LossFn linear_loss_fn(const Matrix& grads, const Vector& base);

struct RetrainResult {
  Vector delta;
  double loss = 0;       // without the regularizer
  double objective = 0;  // with it
  int iterations = 0;
  double grad_norm = 0;
};

// L-BFGS on loss(delta) + lambda |delta|^2 from delta = 0.
RetrainResult retrain_oracle(std::size_t dim, const LossFn& loss, double lambda,
                             int max_iters = 500, double grad_tol = 1e-9);

// JL distortion for a projection dimension d over p coordinates, solving
// d = 4 ln p / (eps^2 / 2 - eps^3 / 3) on (0, 1]. Returns 1 when d is too
// small for any eps below 1.
double jl_epsilon(int d, std::size_t p);

struct Prop1Report {
  double surrogate_loss = 0;  // training loss at W0 + P w_d
  double oracle_loss = 0;     // lowest training loss found by retraining
  double gap = 0;
  double g = 0;
  double d = 0;
  double epsilon = 0;
  double delta_hat = 0;
  double bound = 0;  // 2 delta_hat + 2 G D eps
  bool holds = false;
};

Prop1Report verify_prop1(double surrogate_loss, double oracle_loss, double g, double d,
                         double epsilon, double delta_hat, double slack = 1e-6);

}  // namespace brane
