#include "mtp/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace mtp {

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

Tensor make_result(Mat value, std::vector<Tensor> inputs,
                   std::function<void(TensorNode&)> backprop) {
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.node()->requires_grad;
  Tensor out(std::move(value), needs);
  if (needs) {
    auto& n = *out.node();
    for (const auto& t : inputs) n.parents.push_back(t.node());
    n.backprop = std::move(backprop);
  }
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_str(a) + " vs " + shape_str(b));
  }
  Mat v = a.value() * b.value();
  auto an = a.node();
  auto bn = b.node();
  return make_result(std::move(v), {a, b}, [an, bn](TensorNode& n) {
    if (an->requires_grad) an->ensure_grad().noalias() += n.grad * bn->value.transpose();
    if (bn->requires_grad) bn->ensure_grad().noalias() += an->value.transpose() * n.grad;
  });
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_bt: inner dimensions disagree: " +
                                shape_str(a) + " vs " + shape_str(b) + "^T");
  }
  Mat v = a.value() * b.value().transpose();
  auto an = a.node();
  auto bn = b.node();
  return make_result(std::move(v), {a, b}, [an, bn](TensorNode& n) {
    if (an->requires_grad) an->ensure_grad().noalias() += n.grad * bn->value;
    if (bn->requires_grad) bn->ensure_grad().noalias() += n.grad.transpose() * an->value;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("add: shape mismatch: " + shape_str(a) +
                                " vs " + shape_str(b));
  }
  Mat v = a.value() + b.value();
  auto an = a.node();
  auto bn = b.node();
  return make_result(std::move(v), {a, b}, [an, bn](TensorNode& n) {
    if (an->requires_grad) an->ensure_grad() += n.grad;
    if (bn->requires_grad) bn->ensure_grad() += n.grad;
  });
}

Tensor scale(const Tensor& a, double s) {
  Mat v = s * a.value();
  auto an = a.node();
  return make_result(std::move(v), {a}, [an, s](TensorNode& n) {
    if (an->requires_grad) an->ensure_grad() += s * n.grad;
  });
}

Tensor add_row_broadcast(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw std::invalid_argument("add_row_broadcast: bias shape " +
                                shape_str(bias) + " does not fit " +
                                shape_str(x));
  }
  Mat v = x.value().rowwise() + bias.value().row(0);
  auto xn = x.node();
  auto bn = bias.node();
  return make_result(std::move(v), {x, bias}, [xn, bn](TensorNode& n) {
    if (xn->requires_grad) xn->ensure_grad() += n.grad;
    if (bn->requires_grad) bn->ensure_grad().row(0) += n.grad.colwise().sum();
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw std::invalid_argument("scale_by: scale must be 1x1, got " +
                                shape_str(s));
  }
  Mat v = s.item() * x.value();
  auto xn = x.node();
  auto sn = s.node();
  return make_result(std::move(v), {x, s}, [xn, sn](TensorNode& n) {
    if (xn->requires_grad) xn->ensure_grad() += sn->value(0, 0) * n.grad;
    if (sn->requires_grad)
      sn->ensure_grad()(0, 0) += (n.grad.array() * xn->value.array()).sum();
  });
}

Tensor add_rows_weighted(const Tensor& a, const Tensor& b,
                         const std::vector<double>& row_weights) {
  if (a.rows() != b.rows() || a.cols() != b.cols() ||
      static_cast<Index>(row_weights.size()) != a.rows()) {
    throw std::invalid_argument("add_rows_weighted: shape mismatch");
  }
  Mat v = a.value();
  for (Index i = 0; i < v.rows(); ++i) v.row(i) += row_weights[i] * b.value().row(i);
  auto an = a.node();
  auto bn = b.node();
  return make_result(std::move(v), {a, b}, [an, bn, row_weights](TensorNode& n) {
    if (an->requires_grad) an->ensure_grad() += n.grad;
    if (bn->requires_grad) {
      Mat& g = bn->ensure_grad();
      for (Index i = 0; i < n.grad.rows(); ++i)
        g.row(i) += row_weights[i] * n.grad.row(i);
    }
  });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  Mat v(static_cast<Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw std::out_of_range("gather_rows: row id " + std::to_string(ids[i]) +
                              " outside table " + shape_str(table));
    }
    v.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  auto tn = table.node();
  return make_result(std::move(v), {table}, [tn, ids](TensorNode& n) {
    if (!tn->requires_grad) return;
    Mat& g = tn->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i)
      g.row(ids[i]) += n.grad.row(static_cast<Index>(i));
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("concat_cols: row counts differ: " +
                                shape_str(a) + " vs " + shape_str(b));
  }
  Mat v(a.rows(), a.cols() + b.cols());
  v.leftCols(a.cols()) = a.value();
  v.rightCols(b.cols()) = b.value();
  auto an = a.node();
  auto bn = b.node();
  const Index ac = a.cols();
  return make_result(std::move(v), {a, b}, [an, bn, ac](TensorNode& n) {
    if (an->requires_grad) an->ensure_grad() += n.grad.leftCols(ac);
    if (bn->requires_grad)
      bn->ensure_grad() += n.grad.rightCols(n.grad.cols() - ac);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const Index d = x.cols();
  if (gain.cols() != d || bias.cols() != d || gain.rows() != 1 ||
      bias.rows() != 1) {
    throw std::invalid_argument("layer_norm: gain/bias must be 1x" +
                                std::to_string(d));
  }
  auto xhat = std::make_shared<Mat>(x.rows(), d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(x.rows());
  Mat v(x.rows(), d);
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.value().row(i).mean();
    const auto centered = x.value().row(i).array() - mu;
    const double var = centered.square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(i) = is;
    xhat->row(i) = centered * is;
    v.row(i) = xhat->row(i).array() * gain.value().row(0).array() +
               bias.value().row(0).array();
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return make_result(std::move(v), {x, gain, bias},
                     [xn, gn, bn, xhat, inv_std](TensorNode& n) {
    if (gn->requires_grad)
      gn->ensure_grad().row(0) +=
          (n.grad.array() * xhat->array()).colwise().sum().matrix();
    if (bn->requires_grad) bn->ensure_grad().row(0) += n.grad.colwise().sum();
    if (xn->requires_grad) {
      Mat& g = xn->ensure_grad();
      using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;
      for (Index i = 0; i < n.grad.rows(); ++i) {
        RowArr dxhat = n.grad.row(i).array() * gn->value.row(0).array();
        RowArr xh = xhat->row(i).array();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xh).mean();
        g.row(i) += ((dxhat - m1 - xh * m2) * (*inv_std)(i)).matrix();
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Mat v = x.value().unaryExpr([](double a) {
    return a * 0.5 * (1.0 + std::erf(a * kInvSqrt2));
  });
  auto xn = x.node();
  return make_result(std::move(v), {x}, [xn](TensorNode& n) {
    if (!xn->requires_grad) return;
    Mat d = xn->value.unaryExpr([](double a) {
      const double cdf = 0.5 * (1.0 + std::erf(a * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * a * a);
      return cdf + a * pdf;
    });
    xn->ensure_grad().array() += n.grad.array() * d.array();
  });
}

Tensor softmax_rows(const Tensor& x) {
  Mat v(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.value().row(i).maxCoeff();
    Eigen::ArrayXd e = (x.value().row(i).array() - m).exp();
    v.row(i) = (e / e.sum()).matrix().transpose();
  }
  auto xn = x.node();
  auto probs = std::make_shared<Mat>(v);
  return make_result(std::move(v), {x}, [xn, probs](TensorNode& n) {
    if (!xn->requires_grad) return;
    Mat& g = xn->ensure_grad();
    for (Index i = 0; i < n.grad.rows(); ++i) {
      const double dot = n.grad.row(i).dot(probs->row(i));
      g.row(i) += (probs->row(i).array() * (n.grad.row(i).array() - dot)).matrix();
    }
  });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        int n_heads, Index group_size) {
  const Index rows = q.rows();
  const Index d = q.cols();
  if (k.rows() != rows || v.rows() != rows || k.cols() != d || v.cols() != d) {
    throw std::invalid_argument("causal_attention: q/k/v shapes disagree");
  }
  if (group_size <= 0 || rows % group_size != 0 || d % n_heads != 0) {
    throw std::invalid_argument(
        "causal_attention: bad grouping (rows=" + std::to_string(rows) +
        ", group=" + std::to_string(group_size) +
        ", d=" + std::to_string(d) + ", heads=" + std::to_string(n_heads) + ")");
  }
  const Index n_groups = rows / group_size;
  const Index dh = d / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[g] stacks per-head W x W attention matrices vertically.
  auto probs = std::make_shared<std::vector<Mat>>(n_groups);
  Mat out(rows, d);
  for (Index g = 0; g < n_groups; ++g) {
    const Index r0 = g * group_size;
    Mat& pg = (*probs)[g];
    pg.resize(n_heads * group_size, group_size);
    for (int h = 0; h < n_heads; ++h) {
      const Index c0 = h * dh;
      auto Q = q.value().block(r0, c0, group_size, dh);
      auto K = k.value().block(r0, c0, group_size, dh);
      auto V = v.value().block(r0, c0, group_size, dh);
      for (Index i = 0; i < group_size; ++i) {
        Eigen::RowVectorXd s = (Q.row(i) * K.topRows(i + 1).transpose()) * inv_sqrt_dh;
        const double m = s.maxCoeff();
        Eigen::ArrayXd e = (s.transpose().array() - m).exp();
        const double z = e.sum();
        pg.block(h * group_size + i, 0, 1, i + 1) = (e / z).matrix().transpose();
        pg.block(h * group_size + i, i + 1, 1, group_size - i - 1).setZero();
        out.block(r0 + i, c0, 1, dh).noalias() =
            pg.block(h * group_size + i, 0, 1, i + 1) * V.topRows(i + 1);
      }
    }
  }

  auto qn = q.node();
  auto kn = k.node();
  auto vn = v.node();
  return make_result(
      std::move(out), {q, k, v},
      [qn, kn, vn, probs, n_heads, group_size, dh, inv_sqrt_dh](TensorNode& n) {
        const bool gq = qn->requires_grad, gk = kn->requires_grad,
                   gv = vn->requires_grad;
        if (!(gq || gk || gv)) return;
        Mat& dq = qn->ensure_grad();
        Mat& dk = kn->ensure_grad();
        Mat& dv = vn->ensure_grad();
        const Index n_groups = n.value.rows() / group_size;
        for (Index g = 0; g < n_groups; ++g) {
          const Index r0 = g * group_size;
          const Mat& pg = (*probs)[g];
          for (int h = 0; h < n_heads; ++h) {
            const Index c0 = h * dh;
            auto Q = qn->value.block(r0, c0, group_size, dh);
            auto K = kn->value.block(r0, c0, group_size, dh);
            auto V = vn->value.block(r0, c0, group_size, dh);
            auto dO = n.grad.block(r0, c0, group_size, dh);
            auto P = pg.block(h * group_size, 0, group_size, group_size);
            // dV = P^T dO;  dP = dO V^T;  dS = P o (dP - rowsum(dP o P))
            Mat dP = dO * V.transpose();
            Mat dS(group_size, group_size);
            for (Index i = 0; i < group_size; ++i) {
              const double dot = dP.row(i).dot(P.row(i));
              dS.row(i) = (P.row(i).array() * (dP.row(i).array() - dot)).matrix();
            }
            if (gv) dv.block(r0, c0, group_size, dh).noalias() += P.transpose() * dO;
            if (gq)
              dq.block(r0, c0, group_size, dh).noalias() += inv_sqrt_dh * dS * K;
            if (gk)
              dk.block(r0, c0, group_size, dh).noalias() +=
                  inv_sqrt_dh * dS.transpose() * Q;
          }
        }
      });
}

RowLosses cross_entropy_rows(const Tensor& logits,
                             const std::vector<int>& targets,
                             const std::vector<double>& weights) {
  const Index rows = logits.rows();
  const Index vsz = logits.cols();
  if (static_cast<Index>(targets.size()) != rows ||
      static_cast<Index>(weights.size()) != rows) {
    throw std::invalid_argument("cross_entropy_rows: row count mismatch");
  }
  auto probs = std::make_shared<Mat>(rows, vsz);
  std::vector<double> per_row(static_cast<size_t>(rows));
  double total = 0.0;
  for (Index i = 0; i < rows; ++i) {
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= vsz) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " outside vocabulary of size " +
                              std::to_string(vsz));
    }
    const double m = logits.value().row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.value().row(i).array() - m).exp();
    const double z = e.sum();
    probs->row(i) = (e / z).matrix().transpose();
    const double nll = std::log(z) - (logits.value()(i, t) - m);
    per_row[static_cast<size_t>(i)] = nll;
    total += weights[static_cast<size_t>(i)] * nll;
  }
  auto ln = logits.node();
  Tensor total_t = [&] {
    Mat v(1, 1);
    v(0, 0) = total;
    return make_result(std::move(v), {logits},
                       [ln, probs, targets, weights](TensorNode& n) {
      if (!ln->requires_grad) return;
      Mat& g = ln->ensure_grad();
      const double up = n.grad(0, 0);
      for (Index i = 0; i < g.rows(); ++i) {
        const double w = up * weights[static_cast<size_t>(i)];
        if (w == 0.0) continue;
        g.row(i) += w * probs->row(i);
        g(i, targets[static_cast<size_t>(i)]) -= w;
      }
    });
  }();
  return {std::move(total_t), std::move(per_row)};
}

Tensor cross_entropy(const Tensor& logits, int target) {
  if (logits.rows() != 1) {
    throw std::invalid_argument("cross_entropy: logits must be a single 1xV row");
  }
  return cross_entropy_rows(logits, {target}, {1.0}).total;
}

void backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                std::to_string(loss.rows()) + "x" +
                                std::to_string(loss.cols()));
  }
  // iterative post-order DFS over the requires_grad subgraph
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  if (loss.node()->requires_grad) stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior grads are scratch space for this pass; only leaves accumulate.
  for (TensorNode* n : order)
    if (n->backprop) n->grad.resize(0, 0);
  loss.node()->ensure_grad()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                  double eps) {
  for (auto& p : params) p.zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (auto& p : params)
    analytic.push_back(p.has_grad() ? p.grad()
                                    : Mat::Zero(p.rows(), p.cols()));
  double max_err = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Mat& v = params[pi].value();
    for (Index i = 0; i < v.rows(); ++i) {
      for (Index j = 0; j < v.cols(); ++j) {
        const double orig = v(i, j);
        v(i, j) = orig + eps;
        const double fp = f().item();
        v(i, j) = orig - eps;
        const double fm = f().item();
        v(i, j) = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[pi](i, j);
        const double err =
            std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
        max_err = std::max(max_err, err);
      }
    }
  }
  for (auto& p : params) p.zero_grad();
  return max_err;
}

}  // namespace mtp
