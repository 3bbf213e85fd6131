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

#include "brane/clusterer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "brane/error.hpp"
#include "brane/util.hpp"

namespace brane {
namespace {

constexpr double kTieTol = 1e-12;

Matrix project_psd(const Matrix& x) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(x)};
  Eigen::VectorXd vals = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * vals.asDiagonal() * es.eigenvectors().transpose();
}

Matrix project_rowsum(const Matrix& x) {
  const auto n = x.rows();
  const Matrix sym = (x + x.transpose()) / 2.0;
  const Vector r = sym.rowwise().sum() - Vector::Ones(n);
  const double s = r.sum() / (2.0 * static_cast<double>(n));
  const Vector av = (r - s * Vector::Ones(n)) / static_cast<double>(n);
  return sym - av * Vector::Ones(n).transpose() - Vector::Ones(n) * av.transpose();
}

Matrix project_feasible(const Matrix& start, int rounds) {
  // Dykstra's alternating projections with one correction per set.
  const auto n = start.rows();
  Matrix x = start;
  Matrix p = Matrix::Zero(n, n), q = Matrix::Zero(n, n), r = Matrix::Zero(n, n);
  for (int k = 0; k < rounds; ++k) {
    const Matrix prev = x;
    Matrix y = project_psd(x + p);
    p = x + p - y;
    Matrix z = (y + q).cwiseMax(0.0);
    q = y + q - z;
    x = project_rowsum(z + r);
    r = z + r - x;
    if ((x - prev).cwiseAbs().maxCoeff() < 1e-12) break;
  }
  return x.cwiseMax(0.0);
}

bool lex_less(const Partition& a, const Partition& b) { return a < b; }

Partition canonical(Partition p) {
  for (auto& g : p) std::sort(g.begin(), g.end());
  std::sort(p.begin(), p.end());
  return p;
}

}  // namespace

AssignmentMatrix solve_sdp(const Matrix& a, double lambda, int layers, int layer,
                           const SdpOptions& opt) {
  const auto n = a.rows();
  require(n >= 1 && a.cols() == n, Errc::kShapeMismatch, "affinity must be square and nonempty");
  require(a.allFinite(), Errc::kInvalidArgument, "affinity has non-finite entries");
  require((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-9, Errc::kInvalidArgument,
          "affinity must be symmetric");
  require(lambda >= 0, Errc::kInvalidArgument, "lambda must be non-negative");
  require(layer >= 1 && layer <= layers, Errc::kBadLayerIndex, "layer out of range");

  const Matrix grad = a - lambda * static_cast<double>(layers - layer) * Matrix::Identity(n, n);
  auto objective = [&](const Matrix& x) { return (grad.array() * x.array()).sum(); };
  const double gnorm = grad.norm();
  const double step = gnorm > 0 ? 0.5 / gnorm : 0.0;

  AssignmentMatrix out;
  Matrix x = Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  out.x = x;
  out.objective = objective(x);
  double last = out.objective;
  int quiet = 0;
  if (n == 1 || step == 0) {
    out.converged = true;
  } else {
    for (int it = 1; it <= opt.max_iters; ++it) {
      x = project_feasible(x + step * grad, opt.projection_rounds);
      const double f = objective(x);
      out.iterations = it;
      if (f > out.objective) {
        out.objective = f;
        out.x = x;
      }
      out.best_objective.push_back(out.objective);
      quiet = std::abs(f - last) < opt.tol ? quiet + 1 : 0;
      last = f;
      if (quiet >= opt.patience) {
        out.converged = true;
        break;
      }
    }
  }
  out.row_residual = (out.x.rowwise().sum() - Vector::Ones(n)).cwiseAbs().maxCoeff();
  out.min_entry = out.x.minCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(out.x), Eigen::EigenvaluesOnly);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  return out;
}

Partition round_partition(const Matrix& x) {
  const auto n = static_cast<int>(x.rows());
  require(n >= 1 && x.cols() == n, Errc::kShapeMismatch, "assignment must be square");
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int v) {
    while (parent[static_cast<std::size_t>(v)] != v)
      v = parent[static_cast<std::size_t>(v)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(v)])];
    return v;
  };
  const double threshold = 1.0 / n - 1e-9;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (x(i, j) >= threshold || x(j, i) >= threshold) parent[static_cast<std::size_t>(find(i))] = find(j);
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) groups[static_cast<std::size_t>(find(v))].push_back(v);
  Partition p;
  for (auto& g : groups)
    if (!g.empty()) p.push_back(std::move(g));
  return canonical(std::move(p));
}

double partition_density(const Matrix& a, const Partition& p) {
  validate_partition(p, static_cast<int>(a.rows()));
  double total = 0;
  for (const auto& g : p) {
    double s = 0;
    for (int i : g)
      for (int j : g) s += a(i, j);
    total += s / static_cast<double>(g.size());
  }
  return total;
}

void validate_partition(const Partition& p, int n) {
  std::vector<int> seen(static_cast<std::size_t>(n), 0);
  for (const auto& g : p) {
    require(!g.empty(), Errc::kBadPartition, "empty group");
    for (int v : g) {
      require(v >= 0 && v < n, Errc::kBadPartition, "group member out of range");
      require(seen[static_cast<std::size_t>(v)]++ == 0, Errc::kBadPartition, "groups overlap");
    }
  }
  require(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }), Errc::kBadPartition,
          "partition does not cover every task");
}

std::vector<double> default_lambda_grid() { return {0.0, 0.01, 0.03, 0.1, 0.3, 1.0}; }

Selection select_partition(const Matrix& a, std::span<const double> grid, int layers, int layer,
                           double max_growth, int incoming_groups, const SdpOptions& opt) {
  require(!grid.empty(), Errc::kEmptyGrid, "lambda grid is empty");
  require(incoming_groups >= 1 && max_growth > 0, Errc::kInvalidArgument, "bad growth cap");
  const auto n = static_cast<int>(a.rows());
  Selection sel;
  const Candidate* best = nullptr;
  for (double lambda : grid) {
    Candidate c;
    c.lambda = lambda;
    c.solution = solve_sdp(a, lambda, layers, layer, opt);
    c.partition = round_partition(c.solution.x);
    c.density = partition_density(a, c.partition);
    c.within_growth = static_cast<double>(c.partition.size()) <= max_growth * incoming_groups;
    sel.candidates.push_back(std::move(c));
  }
  for (const auto& c : sel.candidates) {
    if (!c.within_growth) continue;
    if (!best || c.density > best->density + kTieTol) {
      best = &c;
      continue;
    }
    if (c.density < best->density - kTieTol) continue;
    if (c.partition.size() < best->partition.size() ||
        (c.partition.size() == best->partition.size() && lex_less(c.partition, best->partition)))
      best = &c;
  }
  if (best) {
    sel.partition = best->partition;
    sel.density = best->density;
  } else {
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    sel.partition = {all};
    sel.density = partition_density(a, sel.partition);
    sel.fallback = true;
  }
  return sel;
}

std::string describe_selection(const Selection& s, std::span<const std::string> names) {
  auto group_text = [&](const Partition& p) {
    std::string out;
    for (std::size_t g = 0; g < p.size(); ++g) {
      out += g ? " | " : "";
      for (std::size_t k = 0; k < p[g].size(); ++k) {
        const auto idx = static_cast<std::size_t>(p[g][k]);
        out += (k ? "," : "") + (idx < names.size() ? names[idx] : std::to_string(idx));
      }
    }
    return out;
  };
  std::ostringstream out;
  for (const auto& c : s.candidates) {
    out << "candidate lambda=" << format_double(c.lambda) << " groups=" << c.partition.size()
        << " density=" << format_double(c.density) << " within_growth=" << (c.within_growth ? 1 : 0)
        << " iterations=" << c.solution.iterations << " converged=" << (c.solution.converged ? 1 : 0)
        << " partition=" << group_text(c.partition) << '\n';
  }
  out << "selected groups=" << s.partition.size() << " density=" << format_double(s.density)
      << " fallback=" << (s.fallback ? 1 : 0) << " partition=" << group_text(s.partition) << '\n';
  return out.str();
}

Partition brute_force_partition(const Matrix& a) {
  const auto n = static_cast<int>(a.rows());
  require(n >= 1 && n <= 10, Errc::kInvalidArgument, "exhaustive search is limited to n <= 10");
  // Restricted growth strings enumerate each set partition once.
  std::vector<int> label(static_cast<std::size_t>(n), 0);
  Partition best;
  double best_density = -std::numeric_limits<double>::infinity();
  while (true) {
    const int groups = *std::max_element(label.begin(), label.end()) + 1;
    Partition p(static_cast<std::size_t>(groups));
    for (int v = 0; v < n; ++v) p[static_cast<std::size_t>(label[static_cast<std::size_t>(v)])].push_back(v);
    p = canonical(std::move(p));
    const double d = partition_density(a, p);
    if (d > best_density + kTieTol ||
        (d >= best_density - kTieTol &&
         (p.size() < best.size() || (p.size() == best.size() && lex_less(p, best))))) {
      best_density = std::max(best_density, d);
      best = p;
    }
    int i = n - 1;
    while (i > 0) {
      const int prefix_max = *std::max_element(label.begin(), label.begin() + i);
      if (label[static_cast<std::size_t>(i)] <= prefix_max) break;
      label[static_cast<std::size_t>(i)] = 0;
      --i;
    }
    if (i == 0) break;
    ++label[static_cast<std::size_t>(i)];
  }
  return best;
}

}  // namespace brane
