#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "disent/graph.hpp"

namespace disent {

// Equal column slices of an embedding of the given total width.
struct SubLayout {
  std::size_t K = 2;
  std::size_t width = 0;

  std::size_t slice_width() const;                     // throws if indivisible
  std::pair<std::size_t, std::size_t> slice(std::size_t k) const;  // [c0,c1)
};

// A batch of embeddings with explicit contrastive structure. Rows of z are
// anchors; every anchor i has one positive positive_of[i] drawn from its
// candidate set candidates[i] (which never contains i itself).
struct ContrastiveBatch {
  Var z;                 // [n, width], raw (normalization happens in losses)
  std::size_t n_pairs = 0;  // in view-pair mode: rows [0,N) then [N,2N)
  std::vector<std::size_t> positive_of;
  std::vector<std::vector<std::size_t>> candidates;
  double tau = 0.1;

  // standard two-view structure: positive is the paired view, candidates are
  // every other row in the batch
  static ContrastiveBatch view_pairs(Var z, std::size_t n_pairs, double tau);

  void validate() const;  // throws DomainError on any broken invariant
};

enum class RegKind { none, infomin, ortho, perm_ortho, hessian };
RegKind reg_kind_from_string(const std::string& s);
std::string to_string(RegKind k);

struct LossTerms {
  Var sub_infomax;
  std::vector<Var> slice_terms;  // per-slice contrastive values
  Var regularizer;
  double lambda = 0.0;
  Var total;  // sub_infomax + lambda * regularizer
};

// InfoNCE over the batch: sum_i -log( exp(s_ip/tau) / sum_{a in A(i)}
// exp(s_ia/tau) ) with s the cosine similarity of l2-normalized rows.
// Stabilized by detached row-max subtraction; gradients are exact.
Var infomax(const ContrastiveBatch& b);
Var infomax_terms(const ContrastiveBatch& b);  // per-anchor column [n,1]

// sum over slices k of infomax computed on the k-th column slice, with the
// batch's positives/candidates reused per slice; K=1 is infomax itself
Var sub_infomax(const ContrastiveBatch& b, const SubLayout& layout);
std::vector<Var> sub_infomax_slice_values(const ContrastiveBatch& b,
                                          const SubLayout& layout);

// Cross-slice InfoNCE computed within each view: for every ordered slice pair
// (k,k') and every sample i, the "positive" is i's own k'-slice and the
// remaining candidates are the k-slices of the other same-view samples, so the
// value is exactly the negated InfoMax of that construction and is always <= 0.
// Term order: view-major, then ordered slice pair (k,k') in lexicographic
// order, then sample index within the view.
Var infomin_reg(const ContrastiveBatch& b, const SubLayout& layout);
Var infomin_terms(const ContrastiveBatch& b, const SubLayout& layout);

// sum over both ordered slice pairs and all sample pairs (i,j) of the unsigned
// cosine |z_{i,k} . z_{j,k'}| / (|z_{i,k}||z_{j,k'}|); rows may be zero
// (eps-guarded norms)
Var ortho_reg(const Var& z0_rows, const Var& z1_rows);
// same with a fixed coordinate permutation applied to the slice-0 operand
Var perm_ortho_reg(const Var& z0_rows, const Var& z1_rows,
                   const std::vector<std::size_t>& perm);

// Analytic gradient of infomax(b) with respect to the raw rows of b.z,
// expressed in graph primitives so the result is itself differentiable.
Var infomax_grad_closed_form(const ContrastiveBatch& b);

// Gauss-Newton off-diagonal block penalty: per sample,
// sqrt( sum_{i in slice0} sum_{j in slice1} (g_i g_j)^2 ) which equals
// |g_slice0| * |g_slice1|; averaged over the batch rows. Requires K=2.
Var hessian_reg(const Var& grads, const SubLayout& layout);

// Full objective; perm is required for RegKind::perm_ortho and ignored
// otherwise. ortho/perm_ortho/hessian require a K=2 layout.
LossTerms total_objective(const ContrastiveBatch& b, const SubLayout& layout,
                          RegKind kind, double lambda,
                          const std::vector<std::size_t>* perm = nullptr);

// Multi-positive InfoNCE on raw rows: positives of anchor i are all other
// rows with the same label, the per-anchor loss averages over them, and
// anchors without any positive are skipped. Candidates are all other rows.
Var label_infomax(const Var& rows, const std::vector<std::size_t>& labels,
                  double tau);

}  // namespace disent
