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

#include <span>
#include <string>
#include <vector>

#include "brane/diffcore.hpp"

namespace brane {

// Groups of row indices; each group sorted, groups ordered by first member.
using Partition = std::vector<std::vector<int>>;

struct SdpOptions {
  int max_iters = 5000;
  double tol = 1e-7;  // objective change
  int patience = 20;  // iterations below tol before stopping
  int projection_rounds = 200;
};

struct AssignmentMatrix {
  Matrix x;
  int iterations = 0;
  double objective = 0;
  double row_residual = 0;  // max |Xe - e|
  double min_entry = 0;
  double min_eigenvalue = 0;
  bool converged = false;
  std::vector<double> best_objective;  // per iteration, non-decreasing
};

// Projected gradient ascent on <A, X> - lambda (L - l) tr X over
// {Xe = e, X >= 0, X psd}. Returns the best iterate; `converged` is false
// when the iteration cap was hit.
AssignmentMatrix solve_sdp(const Matrix& a, double lambda, int layers, int layer,
                           const SdpOptions& opt = {});

// Connected components of the graph with edges where X[i][j] >= 1/n.
Partition round_partition(const Matrix& x);

// Sum over groups of v^T A v / |g|.
double partition_density(const Matrix& a, const Partition& p);

void validate_partition(const Partition& p, int n);

struct Candidate {
  double lambda = 0;
  Partition partition;
  double density = 0;
  bool within_growth = true;
  AssignmentMatrix solution;
};

struct Selection {
  Partition partition;
  double density = 0;
  std::vector<Candidate> candidates;
  bool fallback = false;  // every candidate broke the growth cap
};

std::vector<double> default_lambda_grid();

// Best-density rounded solution over the lambda grid among candidates with
// at most max_growth * incoming_groups groups. Ties go to fewer groups, then
// to the lexicographically smallest grouping. Falls back to a single group
// when no candidate survives.
Selection select_partition(const Matrix& a, std::span<const double> grid, int layers, int layer,
                           double max_growth = 5.0, int incoming_groups = 1,
                           const SdpOptions& opt = {});

std::string describe_selection(const Selection& s, std::span<const std::string> names);

// Exhaustive max-density partition for small n (Bell(n) candidates).
Partition brute_force_partition(const Matrix& a);

}  // namespace brane
