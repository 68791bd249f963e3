#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace progdet {

/// Dense row-major float64 matrix; the carrier for every feature tensor.
using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A trainable matrix with its accumulated gradient.
struct Param {
  std::string name;
  Tensor2 value;
  Tensor2 grad;

  Param() = default;
  Param(std::string n, Tensor2 v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor2::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor2& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in execution order and replays them backwards.
///
/// Parameters are bound by reference (no copy of the value); their gradients
/// stay on the tape until read back with grad(param) or backward_into().
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor2& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor2 value);
  Var param(const Param& p);
  Var record(Tensor2 value, bool requires_grad, BackwardFn backward);

  const Tensor2& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  void accumulate(std::size_t id, const Tensor2& g);

  /// Reverse pass from a 1x1 node.
  void backward(Var loss);

  /// Gradient of the last backward pass w.r.t. `p`; zero if `p` was not used.
  Tensor2 grad(const Param& p) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2 owned;
    const Tensor2* external = nullptr;
    Tensor2 grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_nodes_;
};

/// backward() then add the resulting gradients into each Param::grad.
void backward_into(Tape& tape, Var loss, std::span<Param* const> params);

/// value -= lr * grad, then zero the gradient.
void sgd_step(std::span<Param* const> params, double lr);

// Differentiable operations. All inputs must live on the same tape.

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x c row to every row of `a`.
Var add_row(Var a, Var row);
Var scale(Var a, double factor);
Var linear(Var x, Var weight, Var bias);
Var relu(Var x);
Var sigmoid(Var x);
Var softmax_rows(Var x);
/// Softmax restricted to true mask entries; false entries get a -inf logit.
Var masked_softmax_rows(Var x, const BoolMatrix& mask);
Var detach(Var x);
/// Columnwise maximum over all rows; zero vector for an empty input.
Var maxpool_rows(Var x);

/// Row range [begin, end) of a pooled input.
struct RowSegment {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
};
/// One maxpool_rows per segment, stacked. Empty segments yield zero rows.
Var segment_maxpool(Var x, std::span<const RowSegment> segments);

Var gather_rows(Var x, std::span<const Eigen::Index> rows);
Var vcat(Var top, Var bottom);
Var hcat(std::span<const Var> parts);
Var col_block(Var x, Eigen::Index start, Eigen::Index count);
Var sum(Var x);
/// Sigmoid focal loss summed over all entries; targets are 0/1.
Var focal_bce(Var logits, const Tensor2& targets, double alpha, double gamma);

// Parameter initialisation.

Tensor2 xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng);

struct Linear {
  Param weight;  // in x out
  Param bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);

  Var operator()(Tape& tape, Var x) const {
    return linear(x, tape.param(weight), tape.param(bias));
  }
  void collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// linear + ReLU followed by linear.
struct TwoLayerMlp {
  Linear first;
  Linear second;

  TwoLayerMlp() = default;
  TwoLayerMlp(const std::string& name, Eigen::Index in, Eigen::Index hidden, Eigen::Index out,
              std::mt19937_64& rng)
      : first(name + ".0", in, hidden, rng), second(name + ".1", hidden, out, rng) {}

  Var operator()(Tape& tape, Var x) const { return second(tape, relu(first(tape, x))); }
  void collect(std::vector<Param*>& out) {
    first.collect(out);
    second.collect(out);
  }
};

/// Query/key/value/output projections of a multi-head attention block.
struct AttentionParams {
  Linear query, key, value, output;
  int heads = 1;

  AttentionParams() = default;
  AttentionParams(const std::string& name, Eigen::Index dim, int heads, std::mt19937_64& rng);

  void collect(std::vector<Param*>& out) {
    query.collect(out);
    key.collect(out);
    value.collect(out);
    output.collect(out);
  }
};

/// Per-head scaled dot-product attention on already projected q, k, v.
/// `mask` is rows(q) x rows(k); nullptr means global attention. The head
/// outputs are concatenated (rows(q) x cols(v)), not projected.
Var attention_heads(Var q, Var k, Var v, const BoolMatrix* mask, int heads);

/// Projects queries and context, attends, concatenates heads and applies the
/// output projection.
Var multi_head_attention(Tape& tape, const AttentionParams& params, Var queries, Var context,
                         const BoolMatrix* mask);

/// Self-attention entry point: masked_attention(x, x, x, mask).
Var masked_attention(Tape& tape, const AttentionParams& params, Var x, const BoolMatrix& mask);

}  // namespace progdet
