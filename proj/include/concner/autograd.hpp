#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "concner/tensor.hpp"

namespace concner {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  // Gradient after Tape::backward; zero-filled if nothing flowed here.
  Tensor grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Single-threaded; one tape per forward/backward pass.
class Tape {
 public:
  // Receives the op's own output value and the gradient flowing into it.
  using Backward = std::function<void(Tape&, const Tensor& out, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Seeds d(output)/d(output) = 1 and propagates to every recorded input.
  // The output must hold exactly one element.
  void backward(Var output);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Op-author interface.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  // Zero-initialized on first access.
  Tensor& grad_buffer(std::size_t id);
  Tensor grad(std::size_t id) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------- primitives
// Shapes are checked eagerly (ShapeMismatch / EmptyTensor).

Var matmul(Var a, Var b);  // [m,k] x [k,n]
Var transpose(Var a);      // rank-2
// Same shape, or b rank-1 of size a.cols() broadcast across rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var gather_rows(Var table, std::span<const std::size_t> rows);
// exclude (optional, size a.size()): nonzero entries are dropped from the row
// normalizer and produce 0 on output. Every row needs one kept entry.
Var softmax_rows(Var a, std::span<const std::uint8_t> exclude = {});
Var log_softmax_rows(Var a, std::span<const std::uint8_t> exclude = {});
// log(max(a, floor)); gradient is zero where the floor is active.
Var log(Var a, double floor = 0.0);
Var exp(Var a);
Var sum(Var a);
Var mean(Var a);
Var relu(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
// Pairwise cosine similarity between rows of a [m,d] and b [n,d] -> [m,n].
// Rows with norm below 1e-12 give similarity 0 and receive no gradient.
Var cosine_similarity_rows(Var a, Var b);
// Rank-1 inputs of equal length -> scalar.
Var cosine_similarity(Var u, Var v);
// Mean over rows whose row_mask entry is nonzero (all rows if empty) -> [d].
Var mean_rows(Var a, std::span<const std::uint8_t> row_mask = {});
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

inline constexpr double kCosineZeroNorm = 1e-12;

// Value-level cosine similarity, clamped to [-1, 1]; 0 if either norm < 1e-12.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

// Central differences (f(x + eps e_j) - f(x - eps e_j)) / (2 eps) per coordinate.
std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> theta, double eps);

}  // namespace concner
