#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mtp {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// One node of the define-by-run gradient tape. Values and gradients are
/// dense row-major 2-D arrays; vectors are 1xN, scalars 1x1.
struct TensorNode {
  Mat value;
  Mat grad;  // empty until touched by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // reads this->grad, adds to parents
  std::string name;

  Mat& ensure_grad() {
    if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    return grad;
  }
};

/// Cheap shared handle to a tape node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Mat v, bool requires_grad = false)
      : node_(std::make_shared<TensorNode>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    Mat m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m), requires_grad);
  }
  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Mat::Zero(rows, cols), requires_grad);
  }

  bool valid() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }

  const Mat& value() const { return node_->value; }
  Mat& value() { return node_->value; }
  double item() const { return node_->value(0, 0); }

  bool has_grad() const { return node_->grad.size() != 0; }
  const Mat& grad() const { return node_->grad; }
  Mat& ensure_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_->requires_grad; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---- differentiable ops ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

/// a * b^T (used e.g. for tied embedding heads).
Tensor matmul_bt(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// y = x + 1*bias per row; bias is 1 x cols.
Tensor add_row_broadcast(const Tensor& x, const Tensor& bias);

/// y = s * x where s is a (possibly learnable) 1x1 tensor.
Tensor scale_by(const Tensor& x, const Tensor& s);

/// y = a + diag(row_weights) * b. Shapes must match.
Tensor add_rows_weighted(const Tensor& a, const Tensor& b,
                         const std::vector<double>& row_weights);

/// y.row(i) = table.row(ids[i]); backward scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

Tensor concat_cols(const Tensor& a, const Tensor& b);

/// Row-wise (x - mean) / sqrt(var + eps) * gain + bias; gain/bias are 1 x d.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor gelu(const Tensor& x);

/// Numerically stable row softmax (per-row max subtraction).
Tensor softmax_rows(const Tensor& x);

/// Causal multi-head self-attention core over fixed-size row groups.
/// q/k/v are (n_groups*group_size) x d; within each group row j attends to
/// rows 0..j. Returns the mixed values, before any output projection.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        int n_heads, Index group_size);

struct RowLosses {
  Tensor total;                 // scalar: sum_i weights[i] * nll_i
  std::vector<double> per_row;  // raw unweighted -log p[target] per row
};

/// Fused log-softmax + NLL over rows of a logits matrix. Rows with zero
/// weight still get a per_row value but contribute no gradient.
RowLosses cross_entropy_rows(const Tensor& logits,
                             const std::vector<int>& targets,
                             const std::vector<double>& weights);

/// -log softmax(logits)[target] for a single 1xV (or Vx1) logits vector.
Tensor cross_entropy(const Tensor& logits, int target);

/// Reverse pass from a scalar loss. Gradients accumulate additively until
/// zero_grad is called on the leaves.
void backward(const Tensor& loss);

/// Central-difference check of analytic gradients of f() w.r.t. params.
/// Returns max over entries of |analytic-numeric| /
/// max(1e-6, |analytic|+|numeric|); the floor absorbs finite-difference
/// noise on exactly-zero gradients. f must be deterministic.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps = 1e-5);

}  // namespace mtp
