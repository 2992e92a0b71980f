#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "disent/tensor.hpp"

namespace disent {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_ready = false;  // grad holds the result of the last backward()
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void accumulate(Tensor g);
};

}  // namespace detail

// Handle to a node in a define-by-run differentiation graph. Graphs are
// rebuilt every step; a graph instance belongs to one thread. Values are
// never mutated after the node is created.
class Var {
 public:
  Var() = default;

  static Var param(Tensor v);     // leaf that receives gradient
  static Var constant(Tensor v);  // leaf without gradient
  static Var constant(double v) { return constant(Tensor::scalar(v)); }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // gradient of the last backward() pass; zeros if this node was not reached
  Tensor grad() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& ptr() const { return node_; }

  static Var make(const char* op, Tensor value, std::vector<Var> parents,
                  std::function<void(detail::Node&)> backprop);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Reverse pass from a scalar loss. Gradients of all reachable nodes are
// recomputed from scratch, so repeated calls yield identical results.
void backward(const Var& loss);

// ---- primitive ops ----

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var neg(const Var& a);

Var add_rowvec(const Var& a, const Var& v);  // v is [1,c]
Var add_colvec(const Var& a, const Var& u);  // u is [r,1]
Var mul_colvec(const Var& a, const Var& u);
Var div_colvec(const Var& a, const Var& u);

Var exp(const Var& a);
Var log(const Var& a);   // input strictly positive
Var sqrt(const Var& a);  // input nonnegative
Var abs(const Var& a);   // subgradient 0 at 0
Var relu(const Var& a);

Var sum(const Var& a);      // -> 1x1
Var row_sum(const Var& a);  // -> [r,1]
Var col_sum(const Var& a);  // -> [1,c]

// row maxima as a detached constant; log-sum-exp shifted by any constant is
// exact, so this keeps gradients of stabilized softmax expressions untouched
Var row_max_detached(const Var& a);

Var row_l2_norm(const Var& a);       // exact norm, guarded backward
Var row_l2_normalize(const Var& a);  // eps inside the sqrt (1e-12)

Var slice_cols(const Var& a, std::size_t c0, std::size_t c1);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(const Var& a, std::vector<std::size_t> idx);
Var permute_cols(const Var& a, std::vector<std::size_t> perm);

// convolution support: rows are images with channel-major planes
struct ConvGeom {
  std::size_t batch, in_c, in_h, in_w;
  std::size_t kernel, stride, pad;
  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

Var im2col(const Var& a, const ConvGeom& g);
// [(B*OH*OW), OC] -> [B, OC*OH*OW]
Var conv_rows_to_chw(const Var& a, std::size_t batch, std::size_t oh,
                     std::size_t ow, std::size_t oc);
// mean over consecutive row blocks: [(G*group), c] -> [G, c]
Var segment_mean_rows(const Var& a, std::size_t group);

constexpr double kNormEps = 1e-12;

}  // namespace disent
