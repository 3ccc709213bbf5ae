#pragma once

// Dense 64-bit tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a value: shape plus row-major data. It may additionally carry a
// handle to a node on a Tape; every op whose inputs carry nodes records its
// result on the same tape. Tensors without nodes go through exactly the same
// forward arithmetic, so tracked and untracked evaluation agree bit for bit.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace illid::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

namespace detail {
struct TapeRecord;
}

class Tensor {
 public:
  /// Empty rank-1 tensor.
  Tensor() : shape_{0} {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Rows/cols of a rank-2 tensor; a rank-1 tensor reads as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const noexcept { return data_; }
  /// Mutable access to the values. Not allowed on tracked tensors.
  std::span<double> mutable_data();

  double operator[](std::size_t i) const { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  /// Value of a single-element tensor.
  double item() const;

  bool tracked() const noexcept { return static_cast<bool>(tape_); }
  /// Same values, no tape node.
  Tensor detached() const { return Tensor(shape_, data_); }
  /// Drops the tape node in place.
  void detach() noexcept { tape_.reset(); node_ = 0; }

 private:
  friend class Tape;
  friend class Gradients;
  friend struct OpRecorder;

  Shape shape_;
  std::vector<double> data_;
  std::shared_ptr<detail::TapeRecord> tape_;
  std::size_t node_ = 0;
};

/// Gradients of a scalar loss with respect to the leaves of a tape.
class Gradients {
 public:
  /// d(loss)/d(leaf). A leaf the loss does not depend on gets a zero tensor.
  Tensor wrt(const Tensor& leaf) const;

 private:
  friend class Tape;
  std::shared_ptr<detail::TapeRecord> tape_;
  std::vector<std::vector<double>> grads_;
};

/// Records operations in forward order; backward walks the record once in reverse.
/// Single-threaded. Tensors hold a shared reference to the record, so a tape
/// outlives every tensor recorded on it.
class Tape {
 public:
  Tape();

  /// Registers `t` as a differentiable leaf in place.
  void watch(Tensor& t);
  /// Returns a tracked copy of `t`.
  Tensor leaf(Tensor t);

  /// Reverse sweep from a scalar loss recorded on this tape.
  Gradients backward(const Tensor& loss) const;

  std::size_t size() const;

 private:
  std::shared_ptr<detail::TapeRecord> record_;
};

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise binary ops. Shapes must match, except that a single-element
// operand is broadcast against the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Elementwise unary ops
Tensor negate(const Tensor& a);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// Reductions to a scalar
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sq_norm(const Tensor& a);

// Row/column plumbing on rank-2 tensors
/// Sum over columns: [r x c] -> [r x 1].
Tensor row_sum(const Tensor& a);
/// Tiles a [1 x c] row `count` times: -> [count x c].
Tensor repeat_rows(const Tensor& row, std::size_t count);
/// Column j as [r x 1].
Tensor slice_col(const Tensor& a, std::size_t j);
/// Row i as [1 x c].
Tensor slice_row(const Tensor& a, std::size_t i);
/// Columns [begin, begin + count) as [r x count].
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
/// Horizontal concatenation of matrices with equal row counts.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Row-wise log-softmax.
Tensor log_softmax_rows(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return negate(a); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

/// Numerically safe scalar helpers shared by tensor ops and plain-double code.
double softplus(double x);
double sigmoid(double x);

}  // namespace illid::ad
