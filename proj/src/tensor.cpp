#include "lmmtc/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "lmmtc/errors.hpp"

namespace lmmtc {

using detail::Node;

Tensor::Tensor() = default;

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m), requires_grad);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad) {
  const auto n_rows = static_cast<Index>(rows.size());
  const Index n_cols = n_rows == 0 ? 0 : static_cast<Index>(rows.begin()->size());
  Matrix m(n_rows, n_cols);
  Index r = 0;
  for (const auto& row : rows) {
    if (static_cast<Index>(row.size()) != n_cols) {
      throw DimensionError("Tensor::from_rows: ragged rows");
    }
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return Tensor(std::move(m), requires_grad);
}

const Matrix& Tensor::value() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->value;
}

Matrix& Tensor::mutable_value() {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw ContractError("use of an undefined tensor");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() != 0; }

Matrix Tensor::grad() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  if (node_->grad.size() == 0) return Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(*this));
  return value()(0, 0);
}

Tensor Tensor::detach() const { return Tensor(value(), false); }

Tensor Tensor::clone() const { return Tensor(value(), requires_grad()); }

std::string shape_string(const Tensor& t) {
  if (!t.defined()) return "[undefined]";
  std::ostringstream os;
  os << '[' << t.rows() << "x" << t.cols() << ']';
  return os.str();
}

Tensor make_op_result(const char* op, Matrix value, std::initializer_list<Tensor> inputs,
                      std::function<void(Node&)> backward) {
  // x * 0 is 0 for finite x and NaN for inf/NaN, so the sum is 0 exactly when all are finite.
  if ((value.array() * 0.0).sum() != 0.0) {
    throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool tracked = false;
  for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  if (tracked) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

bool wants(const std::shared_ptr<Node>& n) { return n->requires_grad; }

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a) + " x " +
                         shape_string(b));
  }
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return make_op_result("matmul", std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) pa->grad_buffer().noalias() += self.grad * pb->value.transpose();
    if (wants(pb)) pb->grad_buffer().noalias() += pa->value.transpose() * self.grad;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return make_op_result("add", a.value() + b.value(), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (wants(p)) p->add_grad(self.grad);
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias) + " does not match " +
                         shape_string(x));
  }
  Matrix out = x.value();
  out.rowwise() += bias.value().row(0);
  return make_op_result("add_bias", std::move(out), {x, bias}, [](Node& self) {
    if (wants(self.parents[0])) self.parents[0]->add_grad(self.grad);
    if (wants(self.parents[1])) self.parents[1]->add_grad(self.grad.colwise().sum());
  });
}

Tensor scale(const Tensor& x, double factor) {
  return make_op_result("scale", x.value() * factor, {x}, [factor](Node& self) {
    self.parents[0]->add_grad(self.grad * factor);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  return make_op_result("mul", a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants(pa)) pa->add_grad(self.grad.cwiseProduct(pb->value));
    if (wants(pb)) pb->add_grad(self.grad.cwiseProduct(pa->value));
  });
}

Tensor sum(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_op_result("sum", std::move(out), {x}, [](Node& self) {
    auto& p = self.parents[0];
    p->add_grad(Matrix::Constant(p->value.rows(), p->value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor gelu(const Tensor& x) {
  // tanh(u) = 1 - 2/(exp(2u) + 1) keeps the evaluation on Eigen's vectorized exp.
  const auto xa = x.value().array();
  Matrix t = (1.0 - 2.0 / ((2.0 * kGeluC * (xa + kGeluA * xa.cube())).exp() + 1.0)).matrix();
  Matrix out = (0.5 * xa * (1.0 + t.array())).matrix();
  return make_op_result("gelu", std::move(out), {x}, [t = std::move(t)](Node& self) {
    auto& p = self.parents[0];
    const auto v = p->value.array();
    const auto ta = t.array();
    const auto d = 0.5 * (1.0 + ta) + 0.5 * v * (1.0 - ta.square()) * kGeluC * (1.0 + 3.0 * kGeluA * v.square());
    p->add_grad((self.grad.array() * d).matrix());
  });
}

Tensor sigmoid(const Tensor& x) {
  Matrix out = x.value().unaryExpr([](double v) { return stable_sigmoid(v); });
  return make_op_result("sigmoid", std::move(out), {x}, [](Node& self) {
    const Matrix& s = self.value;
    self.parents[0]->add_grad(self.grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.cols() == 0) throw DimensionError("softmax_rows: empty row dimension");
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.value().row(r).maxCoeff();
    out.row(r) = (x.value().row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make_op_result("softmax_rows", std::move(out), {x}, [](Node& self) {
    const Matrix& s = self.value;
    Matrix g = s.cwiseProduct(self.grad);
    const Eigen::VectorXd dots = g.rowwise().sum();
    g.noalias() -= s.cwiseProduct((dots * RowVector::Ones(s.cols())));
    self.parents[0]->add_grad(g);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Index d = x.cols();
  if (d == 0) throw DimensionError("layer_norm: zero-width last axis");
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw DimensionError("layer_norm: gamma/beta " + shape_string(gamma) + "/" +
                         shape_string(beta) + " do not match " + shape_string(x));
  }
  const Index m = x.rows();
  Matrix xhat(m, d);
  Eigen::VectorXd rstd(m);
  const auto& xv = x.value();
  for (Index r = 0; r < m; ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    rstd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * rstd(r);
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_op_result(
      "layer_norm", std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        auto& px = self.parents[0];
        auto& pg = self.parents[1];
        auto& pb = self.parents[2];
        const Matrix& dy = self.grad;
        if (wants(pg)) pg->add_grad(dy.cwiseProduct(xhat).colwise().sum());
        if (wants(pb)) pb->add_grad(dy.colwise().sum());
        if (wants(px)) {
          const Index width = dy.cols();
          Matrix g = dy.array().rowwise() * pg->value.row(0).array();
          Matrix dx(g.rows(), width);
          for (Index r = 0; r < g.rows(); ++r) {
            const double mean_g = g.row(r).mean();
            const double mean_gx = g.row(r).dot(xhat.row(r)) / static_cast<double>(width);
            dx.row(r) = rstd(r) * (g.row(r).array() - mean_g - xhat.row(r).array() * mean_gx);
          }
          px->add_grad(dx);
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  const Index n = static_cast<Index>(ids.size());
  Matrix out(n, table.cols());
  for (Index i = 0; i < n; ++i) {
    const int id = ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= table.rows()) {
      throw VocabularyError("embedding: token id " + std::to_string(id) +
                            " outside vocabulary of size " + std::to_string(table.rows()));
    }
    out.row(i) = table.value().row(id);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_op_result("embedding", std::move(out), {table},
                        [idx = std::move(idx)](Node& self) {
                          Matrix& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
                          }
                        });
}

Tensor gather_rows(const Tensor& x, std::span<const Index> rows) {
  const Index n = static_cast<Index>(rows.size());
  Matrix out(n, x.cols());
  for (Index i = 0; i < n; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= x.rows()) {
      throw ContractError("gather_rows: row " + std::to_string(r) + " outside " +
                          shape_string(x));
    }
    out.row(i) = x.value().row(r);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_op_result("gather_rows", std::move(out), {x}, [idx = std::move(idx)](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
  });
}

Tensor dropout(const Tensor& x, double p, Pcg32& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < p ? 0.0 : keep_scale;
  }
  Matrix out = x.value().cwiseProduct(mask);
  return make_op_result("dropout", std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    self.parents[0]->add_grad(self.grad.cwiseProduct(mask));
  });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionGeometry& geom, std::span<const std::uint8_t> key_valid,
                            std::vector<Matrix>* probs_out) {
  const Index B = geom.batch;
  const Index T = geom.seq_len;
  const Index H = geom.n_heads;
  require_same_shape("multi_head_attention", q, k);
  require_same_shape("multi_head_attention", q, v);
  if (q.rows() != B * T) {
    throw DimensionError("multi_head_attention: " + shape_string(q) + " is not batch*seq_len rows");
  }
  if (H <= 0 || q.cols() % H != 0) {
    throw DimensionError("multi_head_attention: width not divisible by head count");
  }
  if (static_cast<Index>(key_valid.size()) != B * T) {
    throw DimensionError("multi_head_attention: key mask length mismatch");
  }
  const Index dh = q.cols() / H;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(B * H));
  Matrix ctx(B * T, q.cols());
  Matrix scores(T, T);
  RowVector key_weight(T);
  for (Index b = 0; b < B; ++b) {
    const std::uint8_t* valid = key_valid.data() + b * T;
    for (Index c = 0; c < T; ++c) key_weight(c) = valid[c] ? 1.0 : 0.0;
    for (Index h = 0; h < H; ++h) {
      const auto qb = q.value().block(b * T, h * dh, T, dh);
      const auto kb = k.value().block(b * T, h * dh, T, dh);
      const auto vb = v.value().block(b * T, h * dh, T, dh);
      scores.noalias() = qb * kb.transpose();
      Matrix& p = (*probs)[static_cast<std::size_t>(b * H + h)];
      p.resize(T, T);
      // Padding keys are dropped by restricting to the valid columns, then scattered back.
      p.setZero();
      for (Index r = 0; r < T; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Index c = 0; c < T; ++c) {
          if (valid[c]) mx = std::max(mx, scores(r, c));
        }
        auto row = p.row(r).array();
        row = ((scores.row(r).array() - mx).min(0.0) * inv_sqrt).exp() * key_weight.array();
        row /= row.sum();
      }
      ctx.block(b * T, h * dh, T, dh).noalias() = p * vb;
    }
  }
  if (probs_out != nullptr) *probs_out = *probs;
  return make_op_result(
      "multi_head_attention", std::move(ctx), {q, k, v},
      [probs, B, T, H, dh, inv_sqrt](Node& self) {
        auto& pq = self.parents[0];
        auto& pk = self.parents[1];
        auto& pv = self.parents[2];
        Matrix* gq = wants(pq) ? &pq->grad_buffer() : nullptr;
        Matrix* gk = wants(pk) ? &pk->grad_buffer() : nullptr;
        Matrix* gv = wants(pv) ? &pv->grad_buffer() : nullptr;
        Matrix dp(T, T);
        Matrix ds(T, T);
        for (Index b = 0; b < B; ++b) {
          for (Index h = 0; h < H; ++h) {
            const Matrix& p = (*probs)[static_cast<std::size_t>(b * H + h)];
            const auto dctx = self.grad.block(b * T, h * dh, T, dh);
            const auto qb = pq->value.block(b * T, h * dh, T, dh);
            const auto kb = pk->value.block(b * T, h * dh, T, dh);
            const auto vb = pv->value.block(b * T, h * dh, T, dh);
            if (gv) gv->block(b * T, h * dh, T, dh).noalias() += p.transpose() * dctx;
            if (!gq && !gk) continue;
            dp.noalias() = dctx * vb.transpose();
            const Eigen::VectorXd dots = p.cwiseProduct(dp).rowwise().sum();
            ds = p.cwiseProduct(dp - dots * RowVector::Ones(T)) * inv_sqrt;
            if (gq) gq->block(b * T, h * dh, T, dh).noalias() += ds * kb;
            if (gk) gk->block(b * T, h * dh, T, dh).noalias() += ds.transpose() * qb;
          }
        }
      });
}

Tensor block_diagonal(const Tensor& x, Index n_blocks) {
  const Index w = x.cols();
  if (x.rows() != n_blocks * w) {
    throw DimensionError("block_diagonal: " + shape_string(x) + " is not " +
                         std::to_string(n_blocks) + " stacked square blocks");
  }
  Matrix out(n_blocks, w);
  for (Index b = 0; b < n_blocks; ++b) {
    for (Index i = 0; i < w; ++i) out(b, i) = x.value()(b * w + i, i);
  }
  return make_op_result("block_diagonal", std::move(out), {x}, [n_blocks, w](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    for (Index b = 0; b < n_blocks; ++b) {
      for (Index i = 0; i < w; ++i) g(b * w + i, i) += self.grad(b, i);
    }
  });
}

Tensor bce_with_logits(const Tensor& logits, const Matrix& targets) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw DimensionError("bce_with_logits: targets do not match logits " + shape_string(logits));
  }
  if (logits.size() == 0) throw DimensionError("bce_with_logits: empty batch");
  const auto& z = logits.value();
  double total = 0.0;
  for (Index i = 0; i < z.size(); ++i) {
    const double zi = z.data()[i];
    const double yi = targets.data()[i];
    total += std::max(zi, 0.0) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
  }
  const double n = static_cast<double>(z.size());
  Matrix out(1, 1);
  out(0, 0) = total / n;
  return make_op_result("bce_with_logits", std::move(out), {logits},
                        [targets, n](Node& self) {
                          auto& p = self.parents[0];
                          Matrix g = p->value.unaryExpr([](double v) { return stable_sigmoid(v); });
                          g -= targets;
                          p->add_grad(g * (self.grad(0, 0) / n));
                        });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const Index n = static_cast<Index>(targets.size());
  if (logits.rows() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(n) + " targets for logits " +
                         shape_string(logits));
  }
  if (n == 0) return Tensor::scalar(0.0);
  const Index V = logits.cols();
  Matrix probs(n, V);
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= V) {
      throw ContractError("cross_entropy: target id " + std::to_string(t) +
                          " outside vocabulary of size " + std::to_string(V));
    }
    const double m = logits.value().row(r).maxCoeff();
    probs.row(r) = (logits.value().row(r).array() - m).exp().matrix();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    total += std::log(z) + m - logits.value()(r, t);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  return make_op_result("cross_entropy", std::move(out), {logits},
                        [probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                          Matrix g = probs;
                          for (std::size_t r = 0; r < tgt.size(); ++r) g(static_cast<Index>(r), tgt[r]) -= 1.0;
                          self.parents[0]->add_grad(g * (self.grad(0, 0) / static_cast<double>(tgt.size())));
                        });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_string(loss));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not connected to any tensor that requires grad");
  }
  // Iterative post-order DFS gives a topological order of the recorded ops.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !parent->parents.empty() && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->add_grad(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
  for (Node* node : order) {
    node->backward = nullptr;
    node->parents.clear();
    node->grad.resize(0, 0);
  }
}

}  // namespace lmmtc
