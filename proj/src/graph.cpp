#include "disent/graph.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

namespace disent {

namespace detail {

void Node::accumulate(Tensor g) {
  require_same_shape("accumulate", value, g);
  if (!grad_ready) {
    grad = std::move(g);
    grad_ready = true;
  } else {
    grad.map() += g.map();
  }
}

}  // namespace detail

using detail::Node;

Var Var::param(Tensor v) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(v);
  out.node_->requires_grad = true;
  return out;
}

Var Var::constant(Tensor v) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(v);
  return out;
}

Tensor Var::grad() const {
  if (!node_) throw std::invalid_argument("grad: undefined Var");
  if (!node_->grad_ready)
    return Tensor::zeros(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

Var Var::make(const char* op, Tensor value, std::vector<Var> parents,
              std::function<void(detail::Node&)> backprop) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(value);
  out.node_->op = op;
  bool needs_grad = false;
  for (const Var& p : parents) needs_grad = needs_grad || p.requires_grad();
  out.node_->requires_grad = needs_grad;
  if (needs_grad) {
    out.node_->parents.reserve(parents.size());
    for (Var& p : parents) out.node_->parents.push_back(p.ptr());
    out.node_->backprop = std::move(backprop);
  }
  return out;
}

void backward(const Var& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  Node* root = loss.node();
  if (root->value.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " +
                     root->value.shape_str());
  if (!root->requires_grad) return;

  // iterative postorder over the requires-grad subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad_ready = false;
  root->accumulate(Tensor::scalar(1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad_ready) n->backprop(*n);
  }
}

namespace {

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

void add_into(Node& p, Tensor g) {
  if (p.requires_grad) p.accumulate(std::move(g));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows())
    throw ShapeError("matmul: shape mismatch " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor out(A.rows(), B.cols());
  out.map().noalias() = A.map() * B.map();
  return Var::make("matmul", std::move(out), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      Tensor ga(pa.value.rows(), pa.value.cols());
      ga.map().noalias() = n.grad.map() * pb.value.map().transpose();
      pa.accumulate(std::move(ga));
    }
    if (pb.requires_grad) {
      Tensor gb(pb.value.rows(), pb.value.cols());
      gb.map().noalias() = pa.value.map().transpose() * n.grad.map();
      pb.accumulate(std::move(gb));
    }
  });
}

Var transpose(const Var& a) {
  Tensor out(a.value().cols(), a.value().rows());
  out.map() = a.value().map().transpose();
  return Var::make("transpose", std::move(out), {a}, [](Node& n) {
    Tensor g(n.value.cols(), n.value.rows());
    g.map() = n.grad.map().transpose();
    add_into(parent(n, 0), std::move(g));
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out(a.value().rows(), a.value().cols());
  out.map() = a.value().map() + b.value().map();
  return Var::make("add", std::move(out), {a, b}, [](Node& n) {
    add_into(parent(n, 0), n.grad);
    add_into(parent(n, 1), n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out(a.value().rows(), a.value().cols());
  out.map() = a.value().map() - b.value().map();
  return Var::make("sub", std::move(out), {a, b}, [](Node& n) {
    add_into(parent(n, 0), n.grad);
    Tensor g(n.grad.rows(), n.grad.cols());
    g.map() = -n.grad.map();
    add_into(parent(n, 1), std::move(g));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out(a.value().rows(), a.value().cols());
  out.map() = a.value().map().cwiseProduct(b.value().map());
  return Var::make("mul", std::move(out), {a, b}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pb = parent(n, 1);
    if (pa.requires_grad) {
      Tensor g(n.grad.rows(), n.grad.cols());
      g.map() = n.grad.map().cwiseProduct(pb.value.map());
      pa.accumulate(std::move(g));
    }
    if (pb.requires_grad) {
      Tensor g(n.grad.rows(), n.grad.cols());
      g.map() = n.grad.map().cwiseProduct(pa.value.map());
      pb.accumulate(std::move(g));
    }
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out(a.value().rows(), a.value().cols());
  out.map() = a.value().map().array() + c;
  return Var::make("add_scalar", std::move(out), {a},
                   [](Node& n) { add_into(parent(n, 0), n.grad); });
}

Var mul_scalar(const Var& a, double c) {
  Tensor out(a.value().rows(), a.value().cols());
  out.map() = a.value().map() * c;
  return Var::make("mul_scalar", std::move(out), {a}, [c](Node& n) {
    Tensor g(n.grad.rows(), n.grad.cols());
    g.map() = n.grad.map() * c;
    add_into(parent(n, 0), std::move(g));
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_rowvec(const Var& a, const Var& v) {
  const Tensor& A = a.value();
  const Tensor& V = v.value();
  if (V.rows() != 1 || V.cols() != A.cols())
    throw ShapeError("add_rowvec: shape mismatch " + A.shape_str() + " vs " +
                     V.shape_str());
  Tensor out(A.rows(), A.cols());
  out.map() = A.map().rowwise() + V.map().row(0);
  return Var::make("add_rowvec", std::move(out), {a, v}, [](Node& n) {
    add_into(parent(n, 0), n.grad);
    Node& pv = parent(n, 1);
    if (pv.requires_grad) {
      Tensor g(1, n.grad.cols());
      g.map() = n.grad.map().colwise().sum();
      pv.accumulate(std::move(g));
    }
  });
}

Var add_colvec(const Var& a, const Var& u) {
  const Tensor& A = a.value();
  const Tensor& U = u.value();
  if (U.cols() != 1 || U.rows() != A.rows())
    throw ShapeError("add_colvec: shape mismatch " + A.shape_str() + " vs " +
                     U.shape_str());
  Tensor out(A.rows(), A.cols());
  out.map() = A.map().colwise() + U.map().col(0);
  return Var::make("add_colvec", std::move(out), {a, u}, [](Node& n) {
    add_into(parent(n, 0), n.grad);
    Node& pu = parent(n, 1);
    if (pu.requires_grad) {
      Tensor g(n.grad.rows(), 1);
      g.map() = n.grad.map().rowwise().sum();
      pu.accumulate(std::move(g));
    }
  });
}

Var mul_colvec(const Var& a, const Var& u) {
  const Tensor& A = a.value();
  const Tensor& U = u.value();
  if (U.cols() != 1 || U.rows() != A.rows())
    throw ShapeError("mul_colvec: shape mismatch " + A.shape_str() + " vs " +
                     U.shape_str());
  Tensor out(A.rows(), A.cols());
  out.map() = A.map().array().colwise() * U.map().col(0).array();
  return Var::make("mul_colvec", std::move(out), {a, u}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pu = parent(n, 1);
    if (pa.requires_grad) {
      Tensor g(n.grad.rows(), n.grad.cols());
      g.map() = n.grad.map().array().colwise() * pu.value.map().col(0).array();
      pa.accumulate(std::move(g));
    }
    if (pu.requires_grad) {
      Tensor g(n.grad.rows(), 1);
      g.map() = n.grad.map().cwiseProduct(pa.value.map()).rowwise().sum();
      pu.accumulate(std::move(g));
    }
  });
}

Var div_colvec(const Var& a, const Var& u) {
  const Tensor& A = a.value();
  const Tensor& U = u.value();
  if (U.cols() != 1 || U.rows() != A.rows())
    throw ShapeError("div_colvec: shape mismatch " + A.shape_str() + " vs " +
                     U.shape_str());
  for (std::size_t i = 0; i < U.rows(); ++i)
    if (U.at(i, 0) == 0.0)
      throw DomainError("div_colvec: zero divisor at row " + std::to_string(i));
  Tensor out(A.rows(), A.cols());
  out.map() = A.map().array().colwise() / U.map().col(0).array();
  return Var::make("div_colvec", std::move(out), {a, u}, [](Node& n) {
    Node& pa = parent(n, 0);
    Node& pu = parent(n, 1);
    if (pa.requires_grad) {
      Tensor g(n.grad.rows(), n.grad.cols());
      g.map() = n.grad.map().array().colwise() / pu.value.map().col(0).array();
      pa.accumulate(std::move(g));
    }
    if (pu.requires_grad) {
      Tensor g(n.grad.rows(), 1);
      g.map() = -(n.grad.map().cwiseProduct(n.value.map()).rowwise().sum());
      g.map().array() /= pu.value.map().col(0).array();
      pu.accumulate(std::move(g));
    }
  });
}

Var exp(const Var& a) {
  Tensor out(a.value().rows(), a.value().cols());
  out.map() = a.value().map().array().exp();
  return Var::make("exp", std::move(out), {a}, [](Node& n) {
    Tensor g(n.grad.rows(), n.grad.cols());
    g.map() = n.grad.map().cwiseProduct(n.value.map());
    add_into(parent(n, 0), std::move(g));
  });
}

Var log(const Var& a) {
  const Tensor& A = a.value();
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j)
      if (!(A.at(i, j) > 0.0))
        throw DomainError("log: non-positive input at (" + std::to_string(i) +
                          "," + std::to_string(j) + ")");
  Tensor out(A.rows(), A.cols());
  out.map() = A.map().array().log();
  return Var::make("log", std::move(out), {a}, [](Node& n) {
    Tensor g(n.grad.rows(), n.grad.cols());
    g.map() = n.grad.map().cwiseQuotient(parent(n, 0).value.map());
    add_into(parent(n, 0), std::move(g));
  });
}

Var sqrt(const Var& a) {
  const Tensor& A = a.value();
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j)
      if (A.at(i, j) < 0.0)
        throw DomainError("sqrt: negative input at (" + std::to_string(i) +
                          "," + std::to_string(j) + ")");
  Tensor out(A.rows(), A.cols());
  out.map() = A.map().array().sqrt();
  return Var::make("sqrt", std::move(out), {a}, [](Node& n) {
    Tensor g(n.grad.rows(), n.grad.cols());
    g.map() = n.grad.map().array() /
              (2.0 * n.value.map().array()).cwiseMax(kNormEps);
    add_into(parent(n, 0), std::move(g));
  });
}

Var abs(const Var& a) {
  Tensor out(a.value().rows(), a.value().cols());
  out.map() = a.value().map().cwiseAbs();
  return Var::make("abs", std::move(out), {a}, [](Node& n) {
    const Tensor& A = parent(n, 0).value;
    Tensor g(n.grad.rows(), n.grad.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) {
        double x = A.at(i, j);
        g.at(i, j) = x > 0 ? n.grad.at(i, j) : (x < 0 ? -n.grad.at(i, j) : 0.0);
      }
    add_into(parent(n, 0), std::move(g));
  });
}

Var relu(const Var& a) {
  Tensor out(a.value().rows(), a.value().cols());
  out.map() = a.value().map().cwiseMax(0.0);
  return Var::make("relu", std::move(out), {a}, [](Node& n) {
    const Tensor& A = parent(n, 0).value;
    Tensor g(n.grad.rows(), n.grad.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j)
        g.at(i, j) = A.at(i, j) > 0 ? n.grad.at(i, j) : 0.0;
    add_into(parent(n, 0), std::move(g));
  });
}

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().map().sum());
  return Var::make("sum", std::move(out), {a}, [](Node& n) {
    Node& pa = parent(n, 0);
    if (!pa.requires_grad) return;
    pa.accumulate(
        Tensor::full(pa.value.rows(), pa.value.cols(), n.grad.item()));
  });
}

Var row_sum(const Var& a) {
  Tensor out(a.value().rows(), 1);
  out.map() = a.value().map().rowwise().sum();
  return Var::make("row_sum", std::move(out), {a}, [](Node& n) {
    Node& pa = parent(n, 0);
    if (!pa.requires_grad) return;
    Tensor g(pa.value.rows(), pa.value.cols());
    g.map() = n.grad.map().col(0).replicate(1, pa.value.cols());
    pa.accumulate(std::move(g));
  });
}

Var col_sum(const Var& a) {
  Tensor out(1, a.value().cols());
  out.map() = a.value().map().colwise().sum();
  return Var::make("col_sum", std::move(out), {a}, [](Node& n) {
    Node& pa = parent(n, 0);
    if (!pa.requires_grad) return;
    Tensor g(pa.value.rows(), pa.value.cols());
    g.map() = n.grad.map().row(0).replicate(pa.value.rows(), 1);
    pa.accumulate(std::move(g));
  });
}

Var row_max_detached(const Var& a) {
  Tensor out(a.value().rows(), 1);
  out.map() = a.value().map().rowwise().maxCoeff();
  return Var::constant(std::move(out));
}

Var row_l2_norm(const Var& a) {
  const Tensor& A = a.value();
  Tensor out(A.rows(), 1);
  out.map() = A.map().rowwise().norm();
  return Var::make("row_l2_norm", std::move(out), {a}, [](Node& n) {
    const Tensor& A = parent(n, 0).value;
    Tensor g(A.rows(), A.cols());
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double s = n.grad.at(i, 0) / std::max(n.value.at(i, 0), kNormEps);
      for (std::size_t j = 0; j < A.cols(); ++j) g.at(i, j) = s * A.at(i, j);
    }
    add_into(parent(n, 0), std::move(g));
  });
}

Var row_l2_normalize(const Var& a) {
  const Tensor& A = a.value();
  Tensor out(A.rows(), A.cols());
  Tensor scale(A.rows(), 1);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    double q = A.map().row(i).squaredNorm();
    scale.at(i, 0) = std::sqrt(q + kNormEps);
    out.map().row(i) = A.map().row(i) / scale.at(i, 0);
  }
  return Var::make(
      "row_l2_normalize", std::move(out), {a}, [scale](Node& n) {
        Tensor g(n.value.rows(), n.value.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
          double dot = n.grad.map().row(i).dot(n.value.map().row(i));
          g.map().row(i) =
              (n.grad.map().row(i) - dot * n.value.map().row(i)) /
              scale.at(i, 0);
        }
        add_into(parent(n, 0), std::move(g));
      });
}

Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
  const Tensor& A = a.value();
  if (!(c0 < c1 && c1 <= A.cols()))
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") invalid for " + A.shape_str());
  Tensor out(A.rows(), c1 - c0);
  out.map() = A.map().middleCols(c0, c1 - c0);
  return Var::make("slice_cols", std::move(out), {a}, [c0](Node& n) {
    Node& pa = parent(n, 0);
    if (!pa.requires_grad) return;
    Tensor g = Tensor::zeros(pa.value.rows(), pa.value.cols());
    g.map().middleCols(c0, n.grad.cols()) = n.grad.map();
    pa.accumulate(std::move(g));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  std::size_t rows = parts[0].value().rows(), cols = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != rows)
      throw ShapeError("concat_cols: shape mismatch " +
                       parts[0].value().shape_str() + " vs " +
                       p.value().shape_str());
    cols += p.value().cols();
  }
  Tensor out(rows, cols);
  std::size_t c = 0;
  std::vector<std::size_t> offs;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    out.map().middleCols(c, p.value().cols()) = p.value().map();
    offs.push_back(c);
    widths.push_back(p.value().cols());
    c += p.value().cols();
  }
  return Var::make("concat_cols", std::move(out), parts,
                   [offs, widths](Node& n) {
                     for (std::size_t k = 0; k < n.parents.size(); ++k) {
                       Node& p = parent(n, k);
                       if (!p.requires_grad) continue;
                       Tensor g(p.value.rows(), widths[k]);
                       g.map() = n.grad.map().middleCols(offs[k], widths[k]);
                       p.accumulate(std::move(g));
                     }
                   });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  std::size_t cols = parts[0].value().cols(), rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != cols)
      throw ShapeError("concat_rows: shape mismatch " +
                       parts[0].value().shape_str() + " vs " +
                       p.value().shape_str());
    rows += p.value().rows();
  }
  Tensor out(rows, cols);
  std::size_t r = 0;
  std::vector<std::size_t> offs;
  std::vector<std::size_t> heights;
  for (const Var& p : parts) {
    out.map().middleRows(r, p.value().rows()) = p.value().map();
    offs.push_back(r);
    heights.push_back(p.value().rows());
    r += p.value().rows();
  }
  return Var::make("concat_rows", std::move(out), parts,
                   [offs, heights](Node& n) {
                     for (std::size_t k = 0; k < n.parents.size(); ++k) {
                       Node& p = parent(n, k);
                       if (!p.requires_grad) continue;
                       Tensor g(heights[k], p.value.cols());
                       g.map() = n.grad.map().middleRows(offs[k], heights[k]);
                       p.accumulate(std::move(g));
                     }
                   });
}

Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
  const Tensor& A = a.value();
  for (std::size_t i : idx)
    if (i >= A.rows())
      throw ShapeError("gather_rows: index " + std::to_string(i) +
                       " out of range for " + A.shape_str());
  Tensor out(idx.size(), A.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    out.map().row(r) = A.map().row(idx[r]);
  return Var::make("gather_rows", std::move(out), {a},
                   [idx = std::move(idx)](Node& n) {
                     Node& pa = parent(n, 0);
                     if (!pa.requires_grad) return;
                     Tensor g = Tensor::zeros(pa.value.rows(), pa.value.cols());
                     for (std::size_t r = 0; r < idx.size(); ++r)
                       g.map().row(idx[r]) += n.grad.map().row(r);
                     pa.accumulate(std::move(g));
                   });
}

Var permute_cols(const Var& a, std::vector<std::size_t> perm) {
  const Tensor& A = a.value();
  if (perm.size() != A.cols())
    throw ShapeError("permute_cols: permutation size " +
                     std::to_string(perm.size()) + " for " + A.shape_str());
  std::vector<bool> used(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || used[p])
      throw DomainError("permute_cols: invalid permutation entry " +
                        std::to_string(p));
    used[p] = true;
  }
  Tensor out(A.rows(), A.cols());
  for (std::size_t j = 0; j < perm.size(); ++j)
    out.map().col(j) = A.map().col(perm[j]);
  return Var::make("permute_cols", std::move(out), {a},
                   [perm = std::move(perm)](Node& n) {
                     Node& pa = parent(n, 0);
                     if (!pa.requires_grad) return;
                     Tensor g(n.grad.rows(), n.grad.cols());
                     for (std::size_t j = 0; j < perm.size(); ++j)
                       g.map().col(perm[j]) = n.grad.map().col(j);
                     pa.accumulate(std::move(g));
                   });
}

Var im2col(const Var& a, const ConvGeom& g) {
  const Tensor& A = a.value();
  if (A.rows() != g.batch || A.cols() != g.in_c * g.in_h * g.in_w)
    throw ShapeError("im2col: input " + A.shape_str() + " does not match " +
                     std::to_string(g.batch) + "x" +
                     std::to_string(g.in_c * g.in_h * g.in_w));
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  Tensor out = Tensor::zeros(g.batch * oh * ow, g.in_c * k * k);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* img = A.data() + b * A.cols();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double* row = out.data() + ((b * oh + oy) * ow + ox) * out.cols();
        for (std::size_t c = 0; c < g.in_c; ++c)
          for (std::size_t ky = 0; ky < k; ++ky) {
            std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                               static_cast<std::ptrdiff_t>(g.pad);
            if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              std::ptrdiff_t x =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                  static_cast<std::ptrdiff_t>(g.pad);
              if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              row[(c * k + ky) * k + kx] = img[(c * g.in_h + y) * g.in_w + x];
            }
          }
      }
  }
  return Var::make("im2col", std::move(out), {a}, [g](Node& n) {
    Node& pa = parent(n, 0);
    if (!pa.requires_grad) return;
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    Tensor gr = Tensor::zeros(pa.value.rows(), pa.value.cols());
    for (std::size_t b = 0; b < g.batch; ++b) {
      double* img = gr.data() + b * gr.cols();
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double* row =
              n.grad.data() + ((b * oh + oy) * ow + ox) * n.grad.cols();
          for (std::size_t c = 0; c < g.in_c; ++c)
            for (std::size_t ky = 0; ky < k; ++ky) {
              std::ptrdiff_t y =
                  static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                  static_cast<std::ptrdiff_t>(g.pad);
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                std::ptrdiff_t x =
                    static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                    static_cast<std::ptrdiff_t>(g.pad);
                if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
                img[(c * g.in_h + y) * g.in_w + x] +=
                    row[(c * k + ky) * k + kx];
              }
            }
        }
    }
    pa.accumulate(std::move(gr));
  });
}

Var conv_rows_to_chw(const Var& a, std::size_t batch, std::size_t oh,
                     std::size_t ow, std::size_t oc) {
  const Tensor& A = a.value();
  if (A.rows() != batch * oh * ow || A.cols() != oc)
    throw ShapeError("conv_rows_to_chw: input " + A.shape_str() +
                     " does not match geometry");
  Tensor out(batch, oc * oh * ow);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double* src = A.data() + ((b * oh + oy) * ow + ox) * oc;
        double* dst = out.data() + b * out.cols() + oy * ow + ox;
        for (std::size_t c = 0; c < oc; ++c) dst[c * oh * ow] = src[c];
      }
  return Var::make("conv_rows_to_chw", std::move(out), {a},
                   [batch, oh, ow, oc](Node& n) {
                     Node& pa = parent(n, 0);
                     if (!pa.requires_grad) return;
                     Tensor g(batch * oh * ow, oc);
                     for (std::size_t b = 0; b < batch; ++b)
                       for (std::size_t oy = 0; oy < oh; ++oy)
                         for (std::size_t ox = 0; ox < ow; ++ox) {
                           double* dst = g.data() +
                                         ((b * oh + oy) * ow + ox) * oc;
                           const double* src = n.grad.data() +
                                               b * n.grad.cols() + oy * ow + ox;
                           for (std::size_t c = 0; c < oc; ++c)
                             dst[c] = src[c * oh * ow];
                         }
                     pa.accumulate(std::move(g));
                   });
}

Var segment_mean_rows(const Var& a, std::size_t group) {
  const Tensor& A = a.value();
  if (group == 0 || A.rows() % group != 0)
    throw ShapeError("segment_mean_rows: " + A.shape_str() +
                     " not divisible into groups of " + std::to_string(group));
  std::size_t out_rows = A.rows() / group;
  Tensor out = Tensor::zeros(out_rows, A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r)
    out.map().row(r / group) += A.map().row(r);
  out.map() /= static_cast<double>(group);
  return Var::make("segment_mean_rows", std::move(out), {a}, [group](Node& n) {
    Node& pa = parent(n, 0);
    if (!pa.requires_grad) return;
    Tensor g(pa.value.rows(), pa.value.cols());
    double inv = 1.0 / static_cast<double>(group);
    for (std::size_t r = 0; r < g.rows(); ++r)
      g.map().row(r) = n.grad.map().row(r / group) * inv;
    pa.accumulate(std::move(g));
  });
}

}  // namespace disent
