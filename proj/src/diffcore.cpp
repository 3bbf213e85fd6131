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

#include "brane/diffcore.hpp"

#include <bit>
#include <cmath>
#include <random>
#include <sstream>

#include "brane/error.hpp"
#include "brane/util.hpp"

namespace brane {

// ---------------------------------------------------------------------------
// ParamStore

int ParamStore::add_block(int layer, std::string name, int rows, int cols) {
  require(rows >= 0 && cols >= 0, Errc::kShapeMismatch, "negative block shape");
  require(find(layer, name) < 0, Errc::kInvalidArgument, "duplicate block " + name);
  BlockInfo info{layer, std::move(name), data_.size(), rows, cols};
  data_.resize(data_.size() + info.size(), 0.0);
  blocks_.push_back(std::move(info));
  return static_cast<int>(blocks_.size()) - 1;
}

int ParamStore::find(int layer, const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].layer == layer && blocks_[i].name == name) return static_cast<int>(i);
  return -1;
}

int ParamStore::max_layer() const {
  int m = 0;
  for (const auto& b : blocks_) m = std::max(m, b.layer);
  return m;
}

Eigen::Map<Matrix> ParamStore::view(int id) {
  const BlockInfo& b = block(id);
  return {data_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<const Matrix> ParamStore::view(int id) const {
  const BlockInfo& b = block(id);
  return {data_.data() + b.offset, b.rows, b.cols};
}

std::size_t ParamStore::suffix_offset(int layer) const {
  const int top = max_layer();
  require(layer >= 1 && layer <= top, Errc::kBadLayerIndex,
          "layer " + std::to_string(layer) + " outside 1.." + std::to_string(top));
  std::size_t start = data_.size();
  int prev = 0;
  for (const auto& b : blocks_) {
    require(b.layer >= prev, Errc::kShapeMismatch, "layout is not sorted by layer");
    prev = b.layer;
    if (b.layer >= layer && b.offset < start) start = b.offset;
  }
  return start;
}

bool ParamStore::layout_equal(const ParamStore& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& a = blocks_[i];
    const auto& b = other.blocks_[i];
    if (a.layer != b.layer || a.name != b.name || a.offset != b.offset || a.rows != b.rows ||
        a.cols != b.cols)
      return false;
  }
  return true;
}

std::string serialize_checkpoint(const ParamStore& params) {
  std::ostringstream head;
  head << "brane-checkpoint 1\n";
  head << "seed " << params.seed << '\n';
  head << "blocks " << params.num_blocks() << '\n';
  for (const auto& b : params.blocks()) {
    head << "block " << b.layer << ' ' << b.name << ' ' << b.offset << ' ' << b.rows << ' '
         << b.cols << '\n';
  }
  head << "values " << params.dim() << '\n';
  std::string out = head.str();
  out.reserve(out.size() + params.dim() * 8);
  for (double x : params.values()) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
  }
  return out;
}

ParamStore parse_checkpoint(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    auto nl = bytes.find('\n', pos);
    require(nl != std::string_view::npos, Errc::kParse, "truncated checkpoint header");
    auto line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return split(line, ' ');
  };
  auto f = next_line();
  require(f.size() == 2 && f[0] == "brane-checkpoint" && f[1] == "1", Errc::kParse,
          "not a checkpoint");
  ParamStore params;
  f = next_line();
  require(f.size() == 2 && f[0] == "seed", Errc::kParse, "missing seed");
  params.seed = std::stoull(std::string(f[1]));
  f = next_line();
  require(f.size() == 2 && f[0] == "blocks", Errc::kParse, "missing block count");
  const long long count = parse_int(f[1]);
  for (long long i = 0; i < count; ++i) {
    f = next_line();
    require(f.size() == 6 && f[0] == "block", Errc::kParse, "bad block line");
    int id = params.add_block(static_cast<int>(parse_int(f[1])), std::string(f[2]),
                              static_cast<int>(parse_int(f[4])), static_cast<int>(parse_int(f[5])));
    require(params.block(id).offset == static_cast<std::size_t>(parse_int(f[3])), Errc::kParse,
            "block offsets are not contiguous");
  }
  f = next_line();
  require(f.size() == 2 && f[0] == "values", Errc::kParse, "missing values line");
  const auto n = static_cast<std::size_t>(parse_int(f[1]));
  require(n == params.dim(), Errc::kParse, "value count differs from layout");
  require(bytes.size() - pos == n * 8, Errc::kParse, "payload size mismatch");
  auto out = params.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i * 8 + k]))
              << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
  return params;
}

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(params));
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

void init_uniform(ParamStore& params, int block, int fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double a = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-a, a);
  auto m = params.view(block);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

// ---------------------------------------------------------------------------
// Tape: forward

void Tape::check(bool ok, const char* what) const {
  if (!ok) fail(Errc::kShapeMismatch, what);
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) {
  Node n{Op::kConstant};
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(int block) {
  Node n{Op::kParam};
  n.ints = {block};
  n.value = params_->view(block);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  check(value(a).cols() == value(b).rows(), "matmul: inner dimensions differ");
  Node n{Op::kMatmul, a.id, b.id};
  n.value.noalias() = value(a) * value(b);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  check(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
        "add: shapes differ");
  Node n{Op::kAdd, a.id, b.id};
  n.value = value(a) + value(b);
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
  check(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row: bad row shape");
  Node n{Op::kAddRow, a.id, row.id};
  n.value = value(a).rowwise() + value(row).row(0);
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Node n{Op::kRelu, a.id};
  n.value = value(a).cwiseMax(0.0);
  return push(std::move(n));
}

Var Tape::log(Var a) {
  Node n{Op::kLog, a.id};
  n.value = value(a).array().log().matrix();
  return push(std::move(n));
}

Var Tape::softmax_rows(Var a) {
  Node n{Op::kSoftmaxRows, a.id};
  const Matrix& x = value(a);
  n.value.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    auto e = (x.row(r).array() - m).exp();
    n.value.row(r) = e / e.sum();
  }
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n{Op::kSum, a.id};
  n.value = Matrix::Constant(1, 1, value(a).sum());
  return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
  check(value(a).size() == value(b).size(), "dot: sizes differ");
  Node n{Op::kDot, a.id, b.id};
  n.value = Matrix::Constant(1, 1, value(a).cwiseProduct(value(b)).sum());
  return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<int> index) {
  const Matrix& x = value(a);
  Node n{Op::kGatherRows, a.id};
  n.value.resize(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    check(index[r] >= 0 && index[r] < x.rows(), "gather_rows: index out of range");
    n.value.row(static_cast<Eigen::Index>(r)) = x.row(index[r]);
  }
  n.ints = std::move(index);
  return push(std::move(n));
}

Var Tape::segment_sum(Var a, std::vector<int> segment, int num_segments) {
  const Matrix& x = value(a);
  check(static_cast<Eigen::Index>(segment.size()) == x.rows(), "segment_sum: segment length");
  Node n{Op::kSegmentSum, a.id};
  n.value = Matrix::Zero(num_segments, x.cols());
  for (std::size_t r = 0; r < segment.size(); ++r) {
    check(segment[r] >= 0 && segment[r] < num_segments, "segment_sum: bad segment id");
    n.value.row(segment[r]) += x.row(static_cast<Eigen::Index>(r));
  }
  n.ints = std::move(segment);
  return push(std::move(n));
}

Var Tape::segment_max(Var a, std::vector<int> segment, int num_segments) {
  const Matrix& x = value(a);
  check(static_cast<Eigen::Index>(segment.size()) == x.rows(), "segment_max: segment length");
  const Eigen::Index cols = x.cols();
  Node n{Op::kSegmentMax, a.id};
  n.value = Matrix::Zero(num_segments, cols);
  // argmax stored row-major (segment, col); -1 marks an empty segment.
  std::vector<int> arg(static_cast<std::size_t>(num_segments * cols), -1);
  for (std::size_t r = 0; r < segment.size(); ++r) {
    const int s = segment[r];
    check(s >= 0 && s < num_segments, "segment_max: bad segment id");
    for (Eigen::Index c = 0; c < cols; ++c) {
      int& best = arg[static_cast<std::size_t>(s * cols + c)];
      double v = x(static_cast<Eigen::Index>(r), c);
      if (best < 0 || v > n.value(s, c)) {
        best = static_cast<int>(r);
        n.value(s, c) = v;
      }
    }
  }
  n.ints = std::move(arg);
  return push(std::move(n));
}

Var Tape::block_pair_scores(Var q, Var k, std::vector<int> offsets) {
  const Matrix& qv = value(q);
  const Matrix& kv = value(k);
  check(qv.rows() == kv.rows() && qv.cols() == kv.cols(), "block_pair_scores: shapes differ");
  check(!offsets.empty() && offsets.front() == 0 && offsets.back() == qv.rows(),
        "block_pair_scores: offsets must span all rows");
  int wmax = 0;
  for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
    check(offsets[b + 1] >= offsets[b], "block_pair_scores: offsets decrease");
    wmax = std::max(wmax, offsets[b + 1] - offsets[b]);
  }
  Node n{Op::kBlockPairScores, q.id, k.id};
  n.value = Matrix::Zero(qv.rows(), wmax);
  for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
    const int o = offsets[b];
    const int w = offsets[b + 1] - o;
    n.value.block(o, 0, w, w).noalias() = qv.middleRows(o, w) * kv.middleRows(o, w).transpose();
  }
  n.ints = std::move(offsets);
  return push(std::move(n));
}

Var Tape::add_scaled(Var a, Matrix pattern, Var scale) {
  check(pattern.rows() == value(a).rows() && pattern.cols() == value(a).cols(),
        "add_scaled: pattern shape");
  check(value(scale).size() == 1, "add_scaled: scale must be 1 x 1");
  Node n{Op::kAddScaled, a.id, scale.id};
  n.value = value(a) + value(scale)(0, 0) * pattern;
  n.aux = std::move(pattern);
  return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, std::vector<int> width, std::vector<int> target,
                        std::vector<double> weight) {
  const Matrix& z = value(logits);
  const auto rows = static_cast<std::size_t>(z.rows());
  check(width.size() == rows && target.size() == rows && weight.size() == rows,
        "cross_entropy: per-row vectors must match logits rows");
  Node n{Op::kCrossEntropy, logits.id};
  n.aux = Matrix::Zero(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int w = width[r];
    check(w >= 1 && w <= z.cols() && target[r] >= 0 && target[r] < w,
          "cross_entropy: bad width or target");
    const auto ri = static_cast<Eigen::Index>(r);
    auto row = z.row(ri).head(w);
    const double m = row.maxCoeff();
    auto e = (row.array() - m).exp();
    const double s = e.sum();
    n.aux.row(ri).head(w) = e / s;
    total += weight[r] * (m + std::log(s) - z(ri, target[r]));
  }
  n.value = Matrix::Constant(1, 1, total);
  n.ints = std::move(target);
  n.ints2 = std::move(width);
  n.reals = std::move(weight);
  return push(std::move(n));
}

Var Tape::row_margin(Var logits, int row, int width, int target) {
  const Matrix& z = value(logits);
  check(row >= 0 && row < z.rows() && width >= 2 && width <= z.cols() && target >= 0 &&
            target < width,
        "row_margin: bad row, width or target");
  Node n{Op::kRowMargin, logits.id};
  n.aux = Matrix::Zero(1, width);
  double m = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < width; ++c)
    if (c != target) m = std::max(m, z(row, c));
  double s = 0.0;
  for (int c = 0; c < width; ++c)
    if (c != target) s += (n.aux(0, c) = std::exp(z(row, c) - m));
  n.aux /= s;
  n.value = Matrix::Constant(1, 1, z(row, target) - (m + std::log(s)));
  n.ints = {row, width, target};
  return push(std::move(n));
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  check(m.rows() == 1 && m.cols() == 1, "scalar: output is not 1 x 1");
  return m(0, 0);
}

// ---------------------------------------------------------------------------
// Tape: reverse mode

Vector Tape::backward(Var out) const {
  check(value(out).size() == 1, "backward: output is not scalar");
  return backward(out, Matrix::Ones(1, 1));
}

Vector Tape::backward(Var out, const Matrix& seed) const {
  check(seed.rows() == value(out).rows() && seed.cols() == value(out).cols(),
        "backward: seed shape differs from output");
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(params_->dim()));
  std::vector<Matrix> adj(static_cast<std::size_t>(out.id) + 1);
  std::vector<char> live(adj.size(), 0);
  auto acc = [&](int id, const auto& g) {
    if (nodes_[static_cast<std::size_t>(id)].op == Op::kConstant) return;
    auto i = static_cast<std::size_t>(id);
    if (!live[i]) {
      adj[i] = g;
      live[i] = 1;
    } else {
      adj[i] += g;
    }
  };
  auto zeros_like = [&](int id) {
    const Matrix& v = nodes_[static_cast<std::size_t>(id)].value;
    return Matrix::Zero(v.rows(), v.cols());
  };
  acc(out.id, seed);
  for (int i = out.id; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    if (!live[ui]) continue;
    const Node& n = nodes_[ui];
    const Matrix& g = adj[ui];
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kParam: {
        const BlockInfo& b = params_->block(n.ints[0]);
        grad.segment(static_cast<Eigen::Index>(b.offset), g.size()) +=
            Eigen::Map<const Vector>(g.data(), g.size());
        break;
      }
      case Op::kMatmul: {
        const Matrix& a = nodes_[n.a].value;
        const Matrix& b = nodes_[n.b].value;
        if (nodes_[n.a].op != Op::kConstant) acc(n.a, (g * b.transpose()).eval());
        if (nodes_[n.b].op != Op::kConstant) acc(n.b, (a.transpose() * g).eval());
        break;
      }
      case Op::kAdd:
        acc(n.a, g);
        acc(n.b, g);
        break;
      case Op::kAddRow:
        acc(n.a, g);
        acc(n.b, Matrix(g.colwise().sum()));
        break;
      case Op::kRelu: {
        const Matrix& a = nodes_[n.a].value;
        acc(n.a, Matrix((a.array() > 0.0).select(g, 0.0)));
        break;
      }
      case Op::kLog:
        acc(n.a, Matrix(g.array() / nodes_[n.a].value.array()));
        break;
      case Op::kSoftmaxRows: {
        const Matrix& y = n.value;
        Matrix inner = (g.cwiseProduct(y)).rowwise().sum();
        Matrix d = y.cwiseProduct(g - inner.replicate(1, g.cols()));
        acc(n.a, d);
        break;
      }
      case Op::kSum: {
        const Matrix& a = nodes_[n.a].value;
        acc(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
        break;
      }
      case Op::kDot:
        acc(n.a, Matrix(g(0, 0) * nodes_[n.b].value));
        acc(n.b, Matrix(g(0, 0) * nodes_[n.a].value));
        break;
      case Op::kGatherRows: {
        Matrix d = zeros_like(n.a);
        for (std::size_t r = 0; r < n.ints.size(); ++r)
          d.row(n.ints[r]) += g.row(static_cast<Eigen::Index>(r));
        acc(n.a, d);
        break;
      }
      case Op::kSegmentSum: {
        Matrix d = zeros_like(n.a);
        for (std::size_t r = 0; r < n.ints.size(); ++r)
          d.row(static_cast<Eigen::Index>(r)) = g.row(n.ints[r]);
        acc(n.a, d);
        break;
      }
      case Op::kSegmentMax: {
        Matrix d = zeros_like(n.a);
        const Eigen::Index cols = g.cols();
        for (Eigen::Index s = 0; s < g.rows(); ++s)
          for (Eigen::Index c = 0; c < cols; ++c) {
            int r = n.ints[static_cast<std::size_t>(s * cols + c)];
            if (r >= 0) d(r, c) += g(s, c);
          }
        acc(n.a, d);
        break;
      }
      case Op::kBlockPairScores: {
        const Matrix& q = nodes_[n.a].value;
        const Matrix& k = nodes_[n.b].value;
        Matrix dq = Matrix::Zero(q.rows(), q.cols());
        Matrix dk = Matrix::Zero(k.rows(), k.cols());
        for (std::size_t b = 0; b + 1 < n.ints.size(); ++b) {
          const int o = n.ints[b];
          const int w = n.ints[b + 1] - o;
          auto gb = g.block(o, 0, w, w);
          dq.middleRows(o, w).noalias() += gb * k.middleRows(o, w);
          dk.middleRows(o, w).noalias() += gb.transpose() * q.middleRows(o, w);
        }
        acc(n.a, dq);
        acc(n.b, dk);
        break;
      }
      case Op::kAddScaled:
        acc(n.a, g);
        acc(n.b, Matrix::Constant(1, 1, g.cwiseProduct(n.aux).sum()));
        break;
      case Op::kCrossEntropy: {
        Matrix d = n.aux;
        for (std::size_t r = 0; r < n.ints.size(); ++r) {
          const auto ri = static_cast<Eigen::Index>(r);
          d(ri, n.ints[r]) -= 1.0;
          d.row(ri) *= g(0, 0) * n.reals[r];
        }
        acc(n.a, d);
        break;
      }
      case Op::kRowMargin: {
        Matrix d = zeros_like(n.a);
        const int row = n.ints[0], width = n.ints[1], target = n.ints[2];
        for (int c = 0; c < width; ++c) d(row, c) = -g(0, 0) * n.aux(0, c);
        d(row, target) = g(0, 0);
        acc(n.a, d);
        break;
      }
    }
  }
  return grad;
}

Vector Tape::grad_suffix(Var out, int layer) const {
  const std::size_t start = params_->suffix_offset(layer);
  Vector full = backward(out);
  return full.tail(full.size() - static_cast<Eigen::Index>(start));
}

// ---------------------------------------------------------------------------
// Tape: forward mode

Matrix Tape::jvp(Var out, std::span<const double> direction) const {
  require(direction.size() == params_->dim(), Errc::kShapeMismatch,
          "jvp: direction length differs from parameter count");
  std::vector<Matrix> tan(static_cast<std::size_t>(out.id) + 1);
  std::vector<char> live(tan.size(), 0);
  auto has = [&](int id) { return id >= 0 && live[static_cast<std::size_t>(id)]; };
  auto t = [&](int id) -> const Matrix& { return tan[static_cast<std::size_t>(id)]; };
  for (int i = 0; i <= out.id; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const Node& n = nodes_[ui];
    const bool ha = has(n.a);
    const bool hb = has(n.b);
    Matrix d;
    switch (n.op) {
      case Op::kConstant:
        continue;
      case Op::kParam: {
        const BlockInfo& b = params_->block(n.ints[0]);
        d = Eigen::Map<const Matrix>(direction.data() + b.offset, b.rows, b.cols);
        break;
      }
      case Op::kMatmul:
        if (!ha && !hb) continue;
        d = Matrix::Zero(n.value.rows(), n.value.cols());
        if (ha) d.noalias() += t(n.a) * nodes_[n.b].value;
        if (hb) d.noalias() += nodes_[n.a].value * t(n.b);
        break;
      case Op::kAdd:
        if (!ha && !hb) continue;
        d = Matrix::Zero(n.value.rows(), n.value.cols());
        if (ha) d += t(n.a);
        if (hb) d += t(n.b);
        break;
      case Op::kAddRow:
        if (!ha && !hb) continue;
        d = Matrix::Zero(n.value.rows(), n.value.cols());
        if (ha) d += t(n.a);
        if (hb) d.rowwise() += t(n.b).row(0);
        break;
      case Op::kRelu:
        if (!ha) continue;
        d = (nodes_[n.a].value.array() > 0.0).select(t(n.a), 0.0);
        break;
      case Op::kLog:
        if (!ha) continue;
        d = t(n.a).array() / nodes_[n.a].value.array();
        break;
      case Op::kSoftmaxRows: {
        if (!ha) continue;
        const Matrix& y = n.value;
        Matrix inner = t(n.a).cwiseProduct(y).rowwise().sum();
        d = y.cwiseProduct(t(n.a) - inner.replicate(1, y.cols()));
        break;
      }
      case Op::kSum:
        if (!ha) continue;
        d = Matrix::Constant(1, 1, t(n.a).sum());
        break;
      case Op::kDot: {
        if (!ha && !hb) continue;
        double s = 0.0;
        if (ha) s += t(n.a).cwiseProduct(nodes_[n.b].value).sum();
        if (hb) s += t(n.b).cwiseProduct(nodes_[n.a].value).sum();
        d = Matrix::Constant(1, 1, s);
        break;
      }
      case Op::kGatherRows:
        if (!ha) continue;
        d.resize(n.value.rows(), n.value.cols());
        for (std::size_t r = 0; r < n.ints.size(); ++r)
          d.row(static_cast<Eigen::Index>(r)) = t(n.a).row(n.ints[r]);
        break;
      case Op::kSegmentSum:
        if (!ha) continue;
        d = Matrix::Zero(n.value.rows(), n.value.cols());
        for (std::size_t r = 0; r < n.ints.size(); ++r)
          d.row(n.ints[r]) += t(n.a).row(static_cast<Eigen::Index>(r));
        break;
      case Op::kSegmentMax: {
        if (!ha) continue;
        d = Matrix::Zero(n.value.rows(), n.value.cols());
        const Eigen::Index cols = d.cols();
        for (Eigen::Index s = 0; s < d.rows(); ++s)
          for (Eigen::Index c = 0; c < cols; ++c) {
            int r = n.ints[static_cast<std::size_t>(s * cols + c)];
            if (r >= 0) d(s, c) = t(n.a)(r, c);
          }
        break;
      }
      case Op::kBlockPairScores: {
        if (!ha && !hb) continue;
        const Matrix& q = nodes_[n.a].value;
        const Matrix& k = nodes_[n.b].value;
        d = Matrix::Zero(n.value.rows(), n.value.cols());
        for (std::size_t b = 0; b + 1 < n.ints.size(); ++b) {
          const int o = n.ints[b];
          const int w = n.ints[b + 1] - o;
          auto db = d.block(o, 0, w, w);
          if (ha) db.noalias() += t(n.a).middleRows(o, w) * k.middleRows(o, w).transpose();
          if (hb) db.noalias() += q.middleRows(o, w) * t(n.b).middleRows(o, w).transpose();
        }
        break;
      }
      case Op::kAddScaled:
        if (!ha && !hb) continue;
        d = Matrix::Zero(n.value.rows(), n.value.cols());
        if (ha) d += t(n.a);
        if (hb) d += t(n.b)(0, 0) * n.aux;
        break;
      case Op::kCrossEntropy: {
        if (!ha) continue;
        double s = 0.0;
        for (std::size_t r = 0; r < n.ints.size(); ++r) {
          const auto ri = static_cast<Eigen::Index>(r);
          const int w = n.ints2[r];
          s += n.reals[r] * (n.aux.row(ri).head(w).dot(t(n.a).row(ri).head(w)) -
                             t(n.a)(ri, n.ints[r]));
        }
        d = Matrix::Constant(1, 1, s);
        break;
      }
      case Op::kRowMargin: {
        if (!ha) continue;
        const int row = n.ints[0], width = n.ints[1], target = n.ints[2];
        double s = t(n.a)(row, target);
        for (int c = 0; c < width; ++c)
          if (c != target) s -= n.aux(0, c) * t(n.a)(row, c);
        d = Matrix::Constant(1, 1, s);
        break;
      }
    }
    tan[ui] = std::move(d);
    live[ui] = 1;
  }
  if (has(out.id)) return t(out.id);
  return Matrix::Zero(value(out).rows(), value(out).cols());
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamHyper& hyper, std::span<const char> mask) {
  require(params.size() == grads.size(), Errc::kShapeMismatch, "adam: gradient length");
  require(mask.empty() || mask.size() == params.size(), Errc::kShapeMismatch, "adam: mask length");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double g = grads[i];
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
  }
}

}  // namespace brane
