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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace brane {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct BlockInfo {
  int layer = 0;
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

// Flat parameter vector with a named block layout. Blocks are appended in
// order and never overlap; for chain models the layer index is
// non-decreasing along the layout, so layers l..L form a contiguous suffix.
class ParamStore {
 public:
  int add_block(int layer, std::string name, int rows, int cols);

  std::size_t dim() const { return data_.size(); }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  const BlockInfo& block(int id) const { return blocks_.at(static_cast<std::size_t>(id)); }
  const std::vector<BlockInfo>& blocks() const { return blocks_; }
  int find(int layer, const std::string& name) const;  // -1 when absent
  int max_layer() const;

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  Eigen::Map<Matrix> view(int id);
  Eigen::Map<const Matrix> view(int id) const;

  // Offset where the contiguous slice W_{l:L} starts. Throws BadLayerIndex
  // for l outside 1..L and ShapeMismatch if the layout is not layer-sorted.
  std::size_t suffix_offset(int layer) const;

  std::uint64_t seed = 0;

  bool operator==(const ParamStore& other) const {
    return data_ == other.data_ && layout_equal(other);
  }
  bool layout_equal(const ParamStore& other) const;

 private:
  std::vector<double> data_;
  std::vector<BlockInfo> blocks_;
};

// Structured-text header plus binary64 little-endian payload.
std::string serialize_checkpoint(const ParamStore& params);
ParamStore parse_checkpoint(std::string_view bytes);
void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

// Scaled-uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)) over one block.
void init_uniform(ParamStore& params, int block, int fan_in, std::uint64_t seed);

struct Var {
  int id = -1;
};

// Records one forward pass over dense row-major matrices. backward() and
// jvp() may be called any number of times; the tape itself is immutable
// once built.
class Tape {
 public:
  explicit Tape(const ParamStore& params) : params_(&params) {}

  Var constant(Matrix value);
  Var param(int block);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1 x c row over every row of a
  Var relu(Var a);
  Var log(Var a);
  Var softmax_rows(Var a);
  Var sum(Var a);               // 1 x 1
  Var dot(Var a, Var b);        // <a, b> as 1 x 1
  Var gather_rows(Var a, std::vector<int> index);
  // out[s] = sum / max of rows a[r] with segment[r] == s. Empty segments
  // give zero rows; max ties go to the earliest row.
  Var segment_sum(Var a, std::vector<int> segment, int num_segments);
  Var segment_max(Var a, std::vector<int> segment, int num_segments);
  // For consecutive row blocks [offset[b], offset[b+1]) returns the N x w_max
  // matrix out[r][c] = <q[r], k[offset[b]+c]>, zero beyond the block width.
  Var block_pair_scores(Var q, Var k, std::vector<int> offsets);
  Var add_scaled(Var a, Matrix pattern, Var scale);  // a + scale * pattern
  // sum_r weight[r] * CE(row r restricted to its width, target[r]).
  Var cross_entropy(Var logits, std::vector<int> width, std::vector<int> target,
                    std::vector<double> weight);
  // logit[target] - logsumexp(other logits in the row's first `width`).
  Var row_margin(Var logits, int row, int width, int target);

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  double scalar(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  const ParamStore& params() const { return *params_; }

  // Gradient of a 1 x 1 output with respect to every parameter; untouched
  // entries are exactly zero.
  Vector backward(Var out) const;
  // Vector-Jacobian product with an explicit output cotangent.
  Vector backward(Var out, const Matrix& seed) const;
  // The W_{l:L} slice of backward(out).
  Vector grad_suffix(Var out, int layer) const;
  // Jacobian-vector product d out / d params * direction.
  Matrix jvp(Var out, std::span<const double> direction) const;

 private:
  enum class Op {
    kConstant, kParam, kMatmul, kAdd, kAddRow, kRelu, kLog, kSoftmaxRows, kSum, kDot,
    kGatherRows, kSegmentSum, kSegmentMax, kBlockPairScores, kAddScaled, kCrossEntropy,
    kRowMargin,
  };
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    Matrix value{};
    std::vector<int> ints{};  // indices, segments, argmax, offsets, targets
    std::vector<int> ints2{}; // widths
    std::vector<double> reals{};
    Matrix aux{};             // softmax probabilities or constant pattern
  };

  Var push(Node node);
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  void check(bool ok, const char* what) const;

  const ParamStore* params_;
  std::vector<Node> nodes_;
};

// A program maps (tape, inputs) to a 1 x 1 output variable.
struct ScalarForward {
  double value;
  Tape tape;
  Var output;
};

template <typename Program>
ScalarForward forward_scalar(Program&& program, const ParamStore& params) {
  Tape tape(params);
  Var out = program(tape);
  double v = tape.scalar(out);
  return {v, std::move(tape), out};
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
};

// Standard bias-corrected Adam. Coordinates with mask[i] == 0 are left
// untouched (parameters and moments); an empty mask updates everything.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hyper, std::span<const char> mask = {});

}  // namespace brane
