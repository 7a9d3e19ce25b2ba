#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lmmtc/prng.hpp"

namespace lmmtc {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
  template <typename Expr>
  void add_grad(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

/// Dense 2-D float64 tensor with reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies alias the same storage and gradient. Rank-1 data
/// (biases, gains) is stored as a 1×n row. Ops record themselves on the graph only when at
/// least one input requires a gradient; `backward` walks that graph in reverse topological
/// order and then releases it.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                          bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const;
  Matrix& mutable_value();
  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  /// Accumulated gradient, or zeros of the value's shape if nothing reached this tensor.
  Matrix grad() const;
  void zero_grad();

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  double item() const;

  /// Fresh leaf holding a copy of the value.
  Tensor detach() const;
  /// Deep copy that keeps the requires_grad flag.
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(const char*, Matrix, std::initializer_list<Tensor>,
                               std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

/// Builds an op output; records `backward` only if some input requires a gradient.
/// Throws NumericError when the value contains NaN or Inf.
Tensor make_op_result(const char* op, Matrix value, std::initializer_list<Tensor> inputs,
                      std::function<void(detail::Node&)> backward);

std::string shape_string(const Tensor& t);

// ---- kernels ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
/// x[m×n] + b[1×n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
/// Normalizes every row over the last axis, then applies gamma/beta (both 1×d).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-12);

/// Row lookup; ids outside [0, table.rows()) raise VocabularyError.
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor gather_rows(const Tensor& x, std::span<const Index> rows);
/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Pcg32& rng);

struct AttentionGeometry {
  Index batch = 1;
  Index seq_len = 1;
  Index n_heads = 1;
};

/// Scaled dot-product attention for all heads of a batch laid out as [batch*seq_len × d].
/// Keys with key_valid == 0 get probability exactly 0. When probs_out is non-null it
/// receives batch*n_heads matrices (seq_len × seq_len), index b*n_heads + h.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionGeometry& geom, std::span<const std::uint8_t> key_valid,
                            std::vector<Matrix>* probs_out = nullptr);

/// x is [n_blocks*w × w]; returns [n_blocks × w] with out(b, i) = x(b*w + i, i).
Tensor block_diagonal(const Tensor& x, Index n_blocks);

/// Mean binary cross entropy in the stable logit form; targets has the shape of logits.
Tensor bce_with_logits(const Tensor& logits, const Matrix& targets);
/// Mean softmax cross entropy over rows; an empty batch yields the constant 0.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Reverse pass from a scalar loss. Gradients accumulate on every reachable tensor that
/// requires them; the recorded graph is released afterwards.
void backward(const Tensor& loss);

// Scalar helpers shared with the losses and inference.
double stable_sigmoid(double x);
double gelu_value(double x);

}  // namespace lmmtc
