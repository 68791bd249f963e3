#include "progdet/tensor.hpp"

#include <cmath>
#include <limits>

namespace progdet {

namespace {

bool wants_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars)
    if (v.tape()->requires_grad(v.id())) return true;
  return false;
}

Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return *a.tape();
}

void require_shape(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor2 softmax_impl(const Tensor2& x, const BoolMatrix* mask) {
  Tensor2 y(x.rows(), x.cols());
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double row_max = neg_inf;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double v = (mask && !(*mask)(i, j)) ? neg_inf : x(i, j);
      y(i, j) = v;
      row_max = std::max(row_max, v);
    }
    if (row_max == neg_inf) throw std::invalid_argument("attention mask row has no true entry");
    double total = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      y(i, j) = std::exp(y(i, j) - row_max);
      total += y(i, j);
    }
    for (Eigen::Index j = 0; j < x.cols(); ++j) y(i, j) /= total;
  }
  return y;
}

Var softmax_common(Var x, const BoolMatrix* mask) {
  Tape& tape = *x.tape();
  const std::size_t xi = x.id();
  Tensor2 y = softmax_impl(x.value(), mask);
  const std::size_t out_id = tape.size();  // id the output node will get
  Var out = tape.record(std::move(y), wants_grad({x}),
                        [xi, out_id](Tape& t, const Tensor2& g) {
                          const Tensor2& yv = t.value(out_id);
                          Tensor2 dx(yv.rows(), yv.cols());
                          for (Eigen::Index i = 0; i < yv.rows(); ++i) {
                            const double dot = g.row(i).dot(yv.row(i));
                            for (Eigen::Index j = 0; j < yv.cols(); ++j)
                              dx(i, j) = yv(i, j) * (g(i, j) - dot);
                          }
                          t.accumulate(xi, dx);
                        });
  return out;
}

}  // namespace

const Tensor2& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor2 value) { return record(std::move(value), false, nullptr); }

Var Tape::param(const Param& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node node;
  node.external = &p.value;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(Tensor2 value, bool requires_grad, BackwardFn backward) {
  if (!value.allFinite()) throw NonFiniteError("non-finite value produced on tape");
  Node node;
  node.owned = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor2& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

void Tape::accumulate(std::size_t id, const Tensor2& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("loss recorded on another tape");
  const Tensor2& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward: loss must be 1x1");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  accumulate(loss.id(), Tensor2::Ones(1, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Tensor2 Tape::grad(const Param& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end() || nodes_[it->second].grad.size() == 0)
    return Tensor2::Zero(p.value.rows(), p.value.cols());
  return nodes_[it->second].grad;
}

void backward_into(Tape& tape, Var loss, std::span<Param* const> params) {
  tape.backward(loss);
  for (Param* p : params) {
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
    p->grad += tape.grad(*p);
  }
}

void sgd_step(std::span<Param* const> params, double lr) {
  for (Param* p : params) {
    p->value -= lr * p->grad;
    p->zero_grad();
  }
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const std::size_t ai = a.id(), bi = b.id();
  Tensor2 out = a.value() * b.value();
  return tape.record(std::move(out), wants_grad({a, b}), [ai, bi](Tape& t, const Tensor2& g) {
    if (t.requires_grad(ai)) t.accumulate(ai, g * t.value(bi).transpose());
    if (t.requires_grad(bi)) t.accumulate(bi, t.value(ai).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_shape(a.cols() == b.cols(), "matmul_nt: column counts differ");
  const std::size_t ai = a.id(), bi = b.id();
  Tensor2 out = a.value() * b.value().transpose();
  return tape.record(std::move(out), wants_grad({a, b}), [ai, bi](Tape& t, const Tensor2& g) {
    if (t.requires_grad(ai)) t.accumulate(ai, g * t.value(bi));
    if (t.requires_grad(bi)) t.accumulate(bi, g.transpose() * t.value(ai));
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  const std::size_t ai = a.id(), bi = b.id();
  Tensor2 out = a.value() + b.value();
  return tape.record(std::move(out), wants_grad({a, b}), [ai, bi](Tape& t, const Tensor2& g) {
    t.accumulate(ai, g);
    t.accumulate(bi, g);
  });
}

Var add_row(Var a, Var row) {
  Tape& tape = same_tape(a, row);
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  const std::size_t ai = a.id(), ri = row.id();
  Tensor2 out = a.value();
  out.rowwise() += row.value().row(0);
  return tape.record(std::move(out), wants_grad({a, row}), [ai, ri](Tape& t, const Tensor2& g) {
    t.accumulate(ai, g);
    if (t.requires_grad(ri)) t.accumulate(ri, g.colwise().sum());
  });
}

Var scale(Var a, double factor) {
  const std::size_t ai = a.id();
  Tensor2 out = a.value() * factor;
  return a.tape()->record(std::move(out), wants_grad({a}),
                          [ai, factor](Tape& t, const Tensor2& g) { t.accumulate(ai, g * factor); });
}

Var linear(Var x, Var weight, Var bias) {
  require_shape(x.cols() == weight.rows(), "linear: input width does not match weight rows");
  return add_row(matmul(x, weight), bias);
}

Var relu(Var x) {
  const std::size_t xi = x.id();
  Tensor2 out = x.value().cwiseMax(0.0);
  return x.tape()->record(std::move(out), wants_grad({x}), [xi](Tape& t, const Tensor2& g) {
    const Tensor2& xv = t.value(xi);
    t.accumulate(xi, (xv.array() > 0.0).select(g, 0.0));
  });
}

Var sigmoid(Var x) {
  Tape& tape = *x.tape();
  const std::size_t xi = x.id();
  Tensor2 out = x.value().unaryExpr([](double v) { return sigmoid_scalar(v); });
  const std::size_t out_id = tape.size();  // id the output node will get
  Var y = tape.record(std::move(out), wants_grad({x}), [xi, out_id](Tape& t, const Tensor2& g) {
    const Tensor2& yv = t.value(out_id);
    t.accumulate(xi, (g.array() * yv.array() * (1.0 - yv.array())).matrix());
  });
  return y;
}

Var softmax_rows(Var x) { return softmax_common(x, nullptr); }

Var masked_softmax_rows(Var x, const BoolMatrix& mask) {
  require_shape(mask.rows() == x.rows() && mask.cols() == x.cols(), "mask shape mismatch");
  return softmax_common(x, &mask);
}

Var detach(Var x) { return x.tape()->record(x.value(), false, nullptr); }

Var segment_maxpool(Var x, std::span<const RowSegment> segments) {
  const Tensor2& xv = x.value();
  const Eigen::Index cols = xv.cols();
  const Eigen::Index n = static_cast<Eigen::Index>(segments.size());
  Tensor2 out = Tensor2::Zero(n, cols);
  // argmax row per (segment, column); -1 for empty segments.
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(n * cols), -1);
  for (Eigen::Index s = 0; s < n; ++s) {
    const RowSegment seg = segments[static_cast<std::size_t>(s)];
    require_shape(seg.begin <= seg.end && seg.end <= xv.rows() && seg.begin >= 0,
                  "segment_maxpool: segment out of range");
    if (seg.begin == seg.end) continue;
    for (Eigen::Index c = 0; c < cols; ++c) {
      Eigen::Index best = seg.begin;
      for (Eigen::Index r = seg.begin + 1; r < seg.end; ++r)
        if (xv(r, c) > xv(best, c)) best = r;
      out(s, c) = xv(best, c);
      arg[static_cast<std::size_t>(s * cols + c)] = best;
    }
  }
  const std::size_t xi = x.id();
  const Eigen::Index xrows = xv.rows();
  return x.tape()->record(std::move(out), wants_grad({x}),
                          [xi, xrows, cols, n, arg = std::move(arg)](Tape& t, const Tensor2& g) {
                            Tensor2 dx = Tensor2::Zero(xrows, cols);
                            for (Eigen::Index s = 0; s < n; ++s)
                              for (Eigen::Index c = 0; c < cols; ++c) {
                                const Eigen::Index r = arg[static_cast<std::size_t>(s * cols + c)];
                                if (r >= 0) dx(r, c) += g(s, c);
                              }
                            t.accumulate(xi, dx);
                          });
}

Var maxpool_rows(Var x) {
  const RowSegment all{0, x.rows()};
  return segment_maxpool(x, std::span<const RowSegment>(&all, 1));
}

Var gather_rows(Var x, std::span<const Eigen::Index> rows) {
  const Tensor2& xv = x.value();
  Tensor2 out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require_shape(rows[i] >= 0 && rows[i] < xv.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  }
  const std::size_t xi = x.id();
  const Eigen::Index xrows = xv.rows();
  std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  return x.tape()->record(std::move(out), wants_grad({x}),
                          [xi, xrows, idx = std::move(idx)](Tape& t, const Tensor2& g) {
                            Tensor2 dx = Tensor2::Zero(xrows, g.cols());
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              dx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                            t.accumulate(xi, dx);
                          });
}

Var vcat(Var top, Var bottom) {
  Tape& tape = same_tape(top, bottom);
  require_shape(top.cols() == bottom.cols(), "vcat: column counts differ");
  const Eigen::Index tr = top.rows(), br = bottom.rows();
  Tensor2 out(tr + br, top.cols());
  out.topRows(tr) = top.value();
  out.bottomRows(br) = bottom.value();
  const std::size_t ti = top.id(), bi = bottom.id();
  return tape.record(std::move(out), wants_grad({top, bottom}),
                     [ti, bi, tr, br](Tape& t, const Tensor2& g) {
                       if (t.requires_grad(ti)) t.accumulate(ti, g.topRows(tr));
                       if (t.requires_grad(bi)) t.accumulate(bi, g.bottomRows(br));
                     });
}

Var hcat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("hcat: no inputs");
  Tape& tape = *parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool grad = false;
  std::vector<std::pair<std::size_t, Eigen::Index>> ids;
  for (const Var& p : parts) {
    require_shape(p.tape() == &tape && p.rows() == rows, "hcat: row counts differ");
    ids.emplace_back(p.id(), p.cols());
    cols += p.cols();
    grad = grad || tape.requires_grad(p.id());
  }
  Tensor2 out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return tape.record(std::move(out), grad, [ids = std::move(ids)](Tape& t, const Tensor2& g) {
    Eigen::Index at = 0;
    for (const auto& [id, c] : ids) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(at, c));
      at += c;
    }
  });
}

Var col_block(Var x, Eigen::Index start, Eigen::Index count) {
  require_shape(start >= 0 && count >= 0 && start + count <= x.cols(), "col_block: out of range");
  Tensor2 out = x.value().middleCols(start, count);
  const std::size_t xi = x.id();
  const Eigen::Index xcols = x.cols();
  return x.tape()->record(std::move(out), wants_grad({x}),
                          [xi, start, count, xcols](Tape& t, const Tensor2& g) {
                            Tensor2 dx = Tensor2::Zero(g.rows(), xcols);
                            dx.middleCols(start, count) = g;
                            t.accumulate(xi, dx);
                          });
}

Var sum(Var x) {
  Tensor2 out(1, 1);
  out(0, 0) = x.value().sum();
  const std::size_t xi = x.id();
  const Eigen::Index r = x.rows(), c = x.cols();
  return x.tape()->record(std::move(out), wants_grad({x}), [xi, r, c](Tape& t, const Tensor2& g) {
    t.accumulate(xi, Tensor2::Constant(r, c, g(0, 0)));
  });
}

Var focal_bce(Var logits, const Tensor2& targets, double alpha, double gamma) {
  const Tensor2& x = logits.value();
  require_shape(targets.rows() == x.rows() && targets.cols() == x.cols(),
                "focal_bce: target shape mismatch");
  Tensor2 out = Tensor2::Zero(1, 1);
  Tensor2 dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double z = x(i, j);
      const double p = sigmoid_scalar(z);
      const double log_p = -softplus(-z);
      const double log_q = -softplus(z);
      if (targets(i, j) > 0.5) {
        const double w = std::pow(1.0 - p, gamma);
        out(0, 0) += -alpha * w * log_p;
        dx(i, j) = alpha * w * (gamma * p * log_p - (1.0 - p));
      } else {
        const double w = std::pow(p, gamma);
        out(0, 0) += -(1.0 - alpha) * w * log_q;
        dx(i, j) = (1.0 - alpha) * w * (-gamma * (1.0 - p) * log_q + p);
      }
    }
  const std::size_t xi = logits.id();
  return logits.tape()->record(std::move(out), wants_grad({logits}),
                               [xi, dx = std::move(dx)](Tape& t, const Tensor2& g) {
                                 t.accumulate(xi, dx * g(0, 0));
                               });
}

Tensor2 xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor2 w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

Linear::Linear(const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng)
    : weight(name + ".weight", xavier_uniform(in, out, rng)),
      bias(name + ".bias", Tensor2::Zero(1, out)) {}

AttentionParams::AttentionParams(const std::string& name, Eigen::Index dim, int h,
                                 std::mt19937_64& rng)
    : query(name + ".query", dim, dim, rng),
      key(name + ".key", dim, dim, rng),
      value(name + ".value", dim, dim, rng),
      output(name + ".output", dim, dim, rng),
      heads(h) {
  if (h <= 0 || dim % h != 0) throw ShapeError("attention: dim must be divisible by heads");
}

Var attention_heads(Var q, Var k, Var v, const BoolMatrix* mask, int heads) {
  require_shape(heads > 0 && q.cols() % heads == 0, "attention: width not divisible by heads");
  require_shape(q.cols() == k.cols() && k.rows() == v.rows() && v.cols() == q.cols(),
                "attention: q/k/v shape mismatch");
  if (mask)
    require_shape(mask->rows() == q.rows() && mask->cols() == k.rows(),
                  "attention: mask shape mismatch");
  const Eigen::Index dh = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = col_block(q, h * dh, dh);
    Var kh = col_block(k, h * dh, dh);
    Var vh = col_block(v, h * dh, dh);
    Var logits = scale(matmul_nt(qh, kh), inv_sqrt);
    Var weights = mask ? masked_softmax_rows(logits, *mask) : softmax_rows(logits);
    outs.push_back(matmul(weights, vh));
  }
  return heads == 1 ? outs.front() : hcat(outs);
}

Var multi_head_attention(Tape& tape, const AttentionParams& params, Var queries, Var context,
                         const BoolMatrix* mask) {
  Var q = params.query(tape, queries);
  Var k = params.key(tape, context);
  Var v = params.value(tape, context);
  return params.output(tape, attention_heads(q, k, v, mask, params.heads));
}

Var masked_attention(Tape& tape, const AttentionParams& params, Var x, const BoolMatrix& mask) {
  return multi_head_attention(tape, params, x, x, &mask);
}

}  // namespace progdet
