#include "illid/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "illid/error.hpp"

namespace illid::ad {

namespace detail {

constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

class GradSink;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

struct Node {
  std::vector<std::size_t> inputs;  // kNoNode for untracked operands
  BackwardFn backward;              // empty for leaves
  std::size_t size = 0;
};

struct TapeRecord {
  std::vector<Node> nodes;
};

class GradSink {
 public:
  GradSink(const TapeRecord& record, const Node& node, std::vector<std::vector<double>>& grads)
      : record_(record), node_(node), grads_(grads) {}

  /// Accumulator for operand `slot`, or nullptr when that operand is untracked.
  double* target(std::size_t slot) {
    const std::size_t id = node_.inputs[slot];
    if (id == kNoNode) return nullptr;
    auto& g = grads_[id];
    if (g.empty()) g.assign(record_.nodes[id].size, 0.0);
    return g.data();
  }

 private:
  const TapeRecord& record_;
  const Node& node_;
  std::vector<std::vector<double>>& grads_;
};

}  // namespace detail

using detail::BackwardFn;
using detail::GradSink;
using detail::kNoNode;

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return shape_[0];
  if (rank() == 1) return 1;
  throw DimensionError("rows() needs a rank-1 or rank-2 tensor, got " + to_string(shape_));
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  throw DimensionError("cols() needs a rank-1 or rank-2 tensor, got " + to_string(shape_));
}

std::span<double> Tensor::mutable_data() {
  if (tracked()) throw ContractError("cannot mutate a tensor recorded on a tape");
  return data_;
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on tensor of shape " + to_string(shape_));
  }
  return data_[0];
}

// ---------------------------------------------------------------------------
// Recording

struct OpRecorder {
  static bool any_tracked(std::initializer_list<const Tensor*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->tracked(); });
  }
  static bool any_tracked(const std::vector<Tensor>& inputs) {
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.tracked(); });
  }

  template <class Range, class Get>
  static Tensor finish(Tensor out, const Range& inputs, Get get, BackwardFn fn) {
    std::shared_ptr<detail::TapeRecord> tape;
    for (const auto& in : inputs) {
      const Tensor& t = get(in);
      if (!t.tracked()) continue;
      if (tape && tape != t.tape_) throw ContractError("operands recorded on different tapes");
      tape = t.tape_;
    }
    if (!tape) return out;
    detail::Node node;
    node.size = out.size();
    node.backward = std::move(fn);
    for (const auto& in : inputs) {
      const Tensor& t = get(in);
      node.inputs.push_back(t.tracked() ? t.node_ : kNoNode);
    }
    tape->nodes.push_back(std::move(node));
    out.tape_ = std::move(tape);
    out.node_ = out.tape_->nodes.size() - 1;
    return out;
  }

  static Tensor finish(Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
    return finish(std::move(out), inputs, [](const Tensor* t) -> const Tensor& { return *t; },
                  std::move(fn));
  }
  static Tensor finish(Tensor out, const std::vector<Tensor>& inputs, BackwardFn fn) {
    return finish(std::move(out), inputs, [](const Tensor& t) -> const Tensor& { return t; },
                  std::move(fn));
  }
};

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : record_(std::make_shared<detail::TapeRecord>()) {}

void Tape::watch(Tensor& t) {
  detail::Node node;
  node.size = t.size();
  record_->nodes.push_back(std::move(node));
  t.tape_ = record_;
  t.node_ = record_->nodes.size() - 1;
}

Tensor Tape::leaf(Tensor t) {
  t.detach();
  watch(t);
  return t;
}

std::size_t Tape::size() const { return record_->nodes.size(); }

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.tracked() || loss.tape_ != record_) {
    throw ContractError("backward: loss was not recorded on this tape");
  }
  Gradients out;
  out.tape_ = record_;
  auto& grads = out.grads_;
  grads.resize(record_->nodes.size());
  grads[loss.node_] = {1.0};
  for (std::size_t id = loss.node_ + 1; id-- > 0;) {
    const auto& node = record_->nodes[id];
    if (grads[id].empty() || !node.backward) continue;
    GradSink sink(*record_, node, grads);
    // Copy: the sink may grow other entries of `grads`, never this one.
    const std::vector<double> gout = grads[id];
    node.backward(gout, sink);
  }
  return out;
}

Tensor Gradients::wrt(const Tensor& leaf) const {
  if (!leaf.tracked() || leaf.tape_ != tape_) {
    throw ContractError("wrt: tensor is not a leaf of the differentiated tape");
  }
  const auto& g = grads_.size() > leaf.node_ ? grads_[leaf.node_] : std::vector<double>{};
  if (g.empty()) return Tensor::zeros(leaf.shape());
  return Tensor(leaf.shape(), g);
}

// ---------------------------------------------------------------------------
// Scalar helpers

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " needs a rank-2 tensor, got " + to_string(t.shape()));
  }
}

// --- elementwise machinery --------------------------------------------------

template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  Tensor result(a.shape(), std::move(out));
  if (!OpRecorder::any_tracked({&a})) return result;
  std::vector<double> xs(x.begin(), x.end());
  std::vector<double> ys(result.data().begin(), result.data().end());
  return OpRecorder::finish(std::move(result), {&a},
                            [xs = std::move(xs), ys = std::move(ys), df](std::span<const double> g,
                                                                         GradSink& sink) {
                              if (double* ga = sink.target(0)) {
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xs[i], ys[i]);
                              }
                            });
}

enum class Bin { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, Bin op, const char* name) {
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = element_count(shape);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = a_scalar ? x[0] : x[i];
    const double v = b_scalar ? y[0] : y[i];
    switch (op) {
      case Bin::add: out[i] = u + v; break;
      case Bin::sub: out[i] = u - v; break;
      case Bin::mul: out[i] = u * v; break;
    }
  }
  Tensor result(shape, std::move(out));
  if (!OpRecorder::any_tracked({&a, &b})) return result;
  std::vector<double> xs, ys;
  if (op == Bin::mul) {
    xs.assign(x.begin(), x.end());
    ys.assign(y.begin(), y.end());
  }
  return OpRecorder::finish(
      std::move(result), {&a, &b},
      [op, a_scalar, b_scalar, xs = std::move(xs), ys = std::move(ys)](std::span<const double> g,
                                                                      GradSink& sink) {
        const std::size_t n = g.size();
        if (double* ga = sink.target(0)) {
          for (std::size_t i = 0; i < n; ++i) {
            const double d = op == Bin::mul ? g[i] * (b_scalar ? ys[0] : ys[i]) : g[i];
            ga[a_scalar ? 0 : i] += d;
          }
        }
        if (double* gb = sink.target(1)) {
          for (std::size_t i = 0; i < n; ++i) {
            double d = g[i];
            if (op == Bin::sub) d = -d;
            if (op == Bin::mul) d = g[i] * (a_scalar ? xs[0] : xs[i]);
            gb[b_scalar ? 0 : i] += d;
          }
        }
      });
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xip = x[i * k + p];
      const double* yrow = &y[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += xip * yrow[j];
    }
  }
  Tensor result({m, n}, std::move(out));
  if (!OpRecorder::any_tracked({&a, &b})) return result;
  std::vector<double> xs(x.begin(), x.end()), ys(y.begin(), y.end());
  return OpRecorder::finish(
      std::move(result), {&a, &b},
      [m, k, n, xs = std::move(xs), ys = std::move(ys)](std::span<const double> g, GradSink& sink) {
        // dA = G B^T, dB = A^T G
        if (double* ga = sink.target(0)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * ys[p * n + j];
              ga[i * k + p] += acc;
            }
        }
        if (double* gb = sink.target(1)) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double xip = xs[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += xip * g[i * n + j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto x = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  Tensor result({c, r}, std::move(out));
  if (!OpRecorder::any_tracked({&a})) return result;
  return OpRecorder::finish(std::move(result), {&a}, [r, c](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.target(0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Bin::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Bin::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Bin::mul, "mul"); }

Tensor negate(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
  return unary(a, [](double x) { return softplus(x); }, [](double x, double) { return sigmoid(x); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return sigmoid(x); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor result = Tensor::scalar(s);
  if (!OpRecorder::any_tracked({&a})) return result;
  return OpRecorder::finish(std::move(result), {&a}, [n = a.size()](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.target(0))
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.empty()) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sq_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  Tensor result = Tensor::scalar(s);
  if (!OpRecorder::any_tracked({&a})) return result;
  std::vector<double> xs(a.data().begin(), a.data().end());
  return OpRecorder::finish(std::move(result), {&a},
                            [xs = std::move(xs)](std::span<const double> g, GradSink& sink) {
                              if (double* ga = sink.target(0))
                                for (std::size_t i = 0; i < xs.size(); ++i) ga[i] += 2.0 * xs[i] * g[0];
                            });
}

// ---------------------------------------------------------------------------
// Row/column plumbing

Tensor row_sum(const Tensor& a) {
  require_rank2(a, "row_sum");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto x = a.data();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x[i * c + j];
  Tensor result({r, 1}, std::move(out));
  if (!OpRecorder::any_tracked({&a})) return result;
  return OpRecorder::finish(std::move(result), {&a}, [r, c](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.target(0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i];
  });
}

Tensor repeat_rows(const Tensor& row, std::size_t count) {
  if (row.rank() != 2 || row.shape()[0] != 1) {
    throw DimensionError("repeat_rows needs a [1 x c] row, got " + to_string(row.shape()));
  }
  const std::size_t c = row.shape()[1];
  const auto x = row.data();
  std::vector<double> out(count * c);
  for (std::size_t i = 0; i < count; ++i) std::copy(x.begin(), x.end(), out.begin() + i * c);
  Tensor result({count, c}, std::move(out));
  if (!OpRecorder::any_tracked({&row})) return result;
  return OpRecorder::finish(std::move(result), {&row}, [count, c](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.target(0))
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[j] += g[i * c + j];
  });
}

Tensor slice_col(const Tensor& a, std::size_t j) {
  require_rank2(a, "slice_col");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (j >= c) throw DimensionError("slice_col: column " + std::to_string(j) + " out of " + to_string(a.shape()));
  const auto x = a.data();
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = x[i * c + j];
  Tensor result({r, 1}, std::move(out));
  if (!OpRecorder::any_tracked({&a})) return result;
  return OpRecorder::finish(std::move(result), {&a}, [r, c, j](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.target(0))
      for (std::size_t i = 0; i < r; ++i) ga[i * c + j] += g[i];
  });
}

Tensor slice_row(const Tensor& a, std::size_t i) {
  require_rank2(a, "slice_row");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (i >= r) throw DimensionError("slice_row: row " + std::to_string(i) + " out of " + to_string(a.shape()));
  const auto x = a.data();
  std::vector<double> out(x.begin() + i * c, x.begin() + (i + 1) * c);
  Tensor result({1, c}, std::move(out));
  if (!OpRecorder::any_tracked({&a})) return result;
  return OpRecorder::finish(std::move(result), {&a}, [c, i](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.target(0))
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank2(a, "slice_cols");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  if (begin + count > c) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of " + to_string(a.shape()));
  }
  const auto x = a.data();
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    std::copy(x.begin() + i * c + begin, x.begin() + i * c + begin + count, out.begin() + i * count);
  Tensor result({r, count}, std::move(out));
  if (!OpRecorder::any_tracked({&a})) return result;
  return OpRecorder::finish(std::move(result), {&a}, [r, c, begin, count](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.target(0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) ga[i * c + begin + j] += g[i * count + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of no tensors");
  const std::size_t r = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.shape()[0] != r) {
      throw DimensionError("concat_cols: row mismatch " + to_string(parts.front().shape()) + " vs " +
                           to_string(p.shape()));
    }
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  std::vector<double> out(r * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < r; ++i)
      std::copy(x.begin() + i * w, x.begin() + (i + 1) * w, out.begin() + i * total + offset);
    offset += w;
  }
  Tensor result({r, total}, std::move(out));
  if (!OpRecorder::any_tracked(parts)) return result;
  return OpRecorder::finish(std::move(result), parts,
                            [r, total, widths](std::span<const double> g, GradSink& sink) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < widths.size(); ++k) {
                                const std::size_t w = widths[k];
                                if (double* gk = sink.target(k))
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < w; ++j) gk[i * w + j] += g[i * total + off + j];
                                off += w;
                              }
                            });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_rank2(a, "log_softmax_rows");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  const auto x = a.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, x[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[i * c + j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] - lse;
  }
  Tensor result({r, c}, std::move(out));
  if (!OpRecorder::any_tracked({&a})) return result;
  std::vector<double> ys(result.data().begin(), result.data().end());
  return OpRecorder::finish(std::move(result), {&a},
                            [r, c, ys = std::move(ys)](std::span<const double> g, GradSink& sink) {
                              if (double* ga = sink.target(0))
                                for (std::size_t i = 0; i < r; ++i) {
                                  double gs = 0.0;
                                  for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
                                  for (std::size_t j = 0; j < c; ++j)
                                    ga[i * c + j] += g[i * c + j] - std::exp(ys[i * c + j]) * gs;
                                }
                            });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.size()) {
    throw DimensionError("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (!OpRecorder::any_tracked({&a})) return result;
  return OpRecorder::finish(std::move(result), {&a}, [](std::span<const double> g, GradSink& sink) {
    if (double* ga = sink.target(0))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

}  // namespace illid::ad
