#include "disent/losses.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace disent {

std::size_t SubLayout::slice_width() const {
  if (K == 0 || width == 0)
    throw DomainError("layout: K and width must be positive");
  if (width % K != 0)
    throw ShapeError("layout: width " + std::to_string(width) +
                     " not divisible into " + std::to_string(K) + " slices");
  return width / K;
}

std::pair<std::size_t, std::size_t> SubLayout::slice(std::size_t k) const {
  std::size_t sw = slice_width();
  if (k >= K) throw DomainError("layout: slice index out of range");
  return {k * sw, (k + 1) * sw};
}

ContrastiveBatch ContrastiveBatch::view_pairs(Var z, std::size_t n_pairs,
                                              double tau) {
  if (n_pairs == 0) throw DomainError("view_pairs: need at least one pair");
  std::size_t n = 2 * n_pairs;
  if (z.value().rows() != n)
    throw ShapeError("view_pairs: expected " + std::to_string(n) +
                     " rows, got " + z.value().shape_str());
  ContrastiveBatch b;
  b.z = std::move(z);
  b.n_pairs = n_pairs;
  b.tau = tau;
  b.positive_of.resize(n);
  b.candidates.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.positive_of[i] = (i + n_pairs) % n;
    b.candidates[i].reserve(n - 1);
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) b.candidates[i].push_back(a);
  }
  return b;
}

void ContrastiveBatch::validate() const {
  if (!z.defined()) throw DomainError("batch: embeddings missing");
  if (!(tau > 0.0)) throw DomainError("batch: tau must be positive");
  std::size_t n = z.value().rows();
  if (positive_of.size() != n || candidates.size() != n)
    throw DomainError("batch: structure size does not match " +
                      z.value().shape_str());
  for (std::size_t i = 0; i < n; ++i) {
    if (candidates[i].empty())
      throw DomainError("batch: empty candidate set for anchor " +
                        std::to_string(i));
    bool pos_found = false;
    for (std::size_t a : candidates[i]) {
      if (a >= n)
        throw DomainError("batch: candidate " + std::to_string(a) +
                          " out of range for anchor " + std::to_string(i));
      if (a == i)
        throw DomainError("batch: anchor " + std::to_string(i) +
                          " lists itself as candidate");
      pos_found = pos_found || a == positive_of[i];
    }
    if (!pos_found)
      throw DomainError("batch: positive of anchor " + std::to_string(i) +
                        " is not among its candidates");
  }
  if (n_pairs > 0) {
    if (n != 2 * n_pairs)
      throw DomainError("batch: view-pair mode expects 2*n_pairs rows");
    for (std::size_t i = 0; i < n; ++i)
      if (positive_of[positive_of[i]] != i)
        throw DomainError("batch: positives are not an involution at anchor " +
                          std::to_string(i));
  }
}

RegKind reg_kind_from_string(const std::string& s) {
  if (s == "none") return RegKind::none;
  if (s == "infomin") return RegKind::infomin;
  if (s == "ortho") return RegKind::ortho;
  if (s == "perm-ortho") return RegKind::perm_ortho;
  if (s == "hessian") return RegKind::hessian;
  throw std::invalid_argument("unknown regularizer: " + s);
}

std::string to_string(RegKind k) {
  switch (k) {
    case RegKind::none: return "none";
    case RegKind::infomin: return "infomin";
    case RegKind::ortho: return "ortho";
    case RegKind::perm_ortho: return "perm-ortho";
    case RegKind::hessian: return "hessian";
  }
  throw std::invalid_argument("unknown regularizer kind");
}

namespace {

constexpr double kMaskOffset = 1e30;  // pushed below every real logit

// Per-anchor InfoNCE terms from precomputed logits (temperature already
// applied): log-sum-exp over candidate-masked columns minus the mean of the
// positive-masked columns. Anchors with no positive get just the LSE part;
// callers mask those rows out. Masks are 0/1 constants.
Var nce_terms(const Var& logits, const Tensor& cand_mask,
              const Tensor& pos_mask) {
  const std::size_t n = logits.value().rows(), m = logits.value().cols();
  require_same_shape("nce_terms", logits.value(), cand_mask);
  require_same_shape("nce_terms", cand_mask, pos_mask);

  Tensor offset = Tensor::zeros(n, m);
  Tensor pos_count = Tensor::full(n, 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < m; ++j) {
      double c = cand_mask.at(i, j), p = pos_mask.at(i, j);
      if (p != 0.0 && c == 0.0)
        throw DomainError("nce_terms: positive outside candidate set at (" +
                          std::to_string(i) + "," + std::to_string(j) + ")");
      any = any || c != 0.0;
      offset.at(i, j) = (c - 1.0) * kMaskOffset;
      pos_count.at(i, 0) += p;
    }
    if (!any)
      throw DomainError("nce_terms: empty candidate set for anchor " +
                        std::to_string(i));
    if (pos_count.at(i, 0) == 0.0) pos_count.at(i, 0) = 1.0;
  }

  Var M = Var::constant(cand_mask);
  Var masked = add(mul(logits, M), Var::constant(std::move(offset)));
  Var top = row_max_detached(masked);
  Var e = mul(exp(add_colvec(masked, neg(top))), M);
  Var lse = add(log(row_sum(e)), top);
  Var pos_sum = row_sum(mul(logits, Var::constant(pos_mask)));
  Var pos_mean = div_colvec(pos_sum, Var::constant(std::move(pos_count)));
  return sub(lse, pos_mean);
}

Var cosine_logits(const Var& rows, double tau) {
  Var zn = row_l2_normalize(rows);
  return mul_scalar(matmul(zn, transpose(zn)), 1.0 / tau);
}

Tensor cand_mask_of(const ContrastiveBatch& b) {
  std::size_t n = b.z.value().rows();
  Tensor m = Tensor::zeros(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a : b.candidates[i]) m.at(i, a) = 1.0;
  return m;
}

Tensor pos_mask_of(const ContrastiveBatch& b) {
  std::size_t n = b.z.value().rows();
  Tensor m = Tensor::zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, b.positive_of[i]) = 1.0;
  return m;
}

std::vector<std::size_t> identity_perm(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

}  // namespace

Var infomax_terms(const ContrastiveBatch& b) {
  b.validate();
  return nce_terms(cosine_logits(b.z, b.tau), cand_mask_of(b), pos_mask_of(b));
}

Var infomax(const ContrastiveBatch& b) { return sum(infomax_terms(b)); }

std::vector<Var> sub_infomax_slice_values(const ContrastiveBatch& b,
                                          const SubLayout& layout) {
  b.validate();
  if (layout.width != b.z.value().cols())
    throw ShapeError("layout width " + std::to_string(layout.width) +
                     " does not match embeddings " + b.z.value().shape_str());
  if (layout.K == 1) return {infomax(b)};
  Tensor cand = cand_mask_of(b);
  Tensor pos = pos_mask_of(b);
  std::vector<Var> values;
  for (std::size_t k = 0; k < layout.K; ++k) {
    auto [c0, c1] = layout.slice(k);
    Var logits = cosine_logits(slice_cols(b.z, c0, c1), b.tau);
    values.push_back(sum(nce_terms(logits, cand, pos)));
  }
  return values;
}

Var sub_infomax(const ContrastiveBatch& b, const SubLayout& layout) {
  std::vector<Var> values = sub_infomax_slice_values(b, layout);
  Var total = values[0];
  for (std::size_t k = 1; k < values.size(); ++k) total = add(total, values[k]);
  return total;
}

Var infomin_terms(const ContrastiveBatch& b, const SubLayout& layout) {
  b.validate();
  if (layout.K < 2) throw DomainError("infomin needs at least two slices");
  if (layout.width != b.z.value().cols())
    throw ShapeError("layout width " + std::to_string(layout.width) +
                     " does not match embeddings " + b.z.value().shape_str());
  if (b.n_pairs == 0 || b.z.value().rows() != 2 * b.n_pairs)
    throw DomainError("infomin needs the two-view batch structure");
  const std::size_t N = b.n_pairs;

  Tensor cand = Tensor::full(N, N + 1, 1.0);
  for (std::size_t i = 0; i < N; ++i) cand.at(i, i) = 0.0;  // anchor itself
  Tensor pos = Tensor::zeros(N, N + 1);
  for (std::size_t i = 0; i < N; ++i) pos.at(i, N) = 1.0;  // own cross slice

  std::vector<Var> blocks;
  for (std::size_t v = 0; v < 2; ++v) {
    std::vector<std::size_t> view_idx(N);
    std::iota(view_idx.begin(), view_idx.end(), v * N);
    Var zv = gather_rows(b.z, view_idx);
    std::vector<Var> norm_slices(layout.K);
    for (std::size_t k = 0; k < layout.K; ++k) {
      auto [c0, c1] = layout.slice(k);
      norm_slices[k] = row_l2_normalize(slice_cols(zv, c0, c1));
    }
    for (std::size_t k = 0; k < layout.K; ++k)
      for (std::size_t kp = 0; kp < layout.K; ++kp) {
        if (kp == k) continue;
        Var same = mul_scalar(
            matmul(norm_slices[k], transpose(norm_slices[k])), 1.0 / b.tau);
        Var cross = mul_scalar(
            row_sum(mul(norm_slices[k], norm_slices[kp])), 1.0 / b.tau);
        Var logits = concat_cols({same, cross});
        blocks.push_back(neg(nce_terms(logits, cand, pos)));
      }
  }
  return concat_rows(blocks);
}

Var infomin_reg(const ContrastiveBatch& b, const SubLayout& layout) {
  return sum(infomin_terms(b, layout));
}

Var perm_ortho_reg(const Var& z0_rows, const Var& z1_rows,
                   const std::vector<std::size_t>& perm) {
  if (z0_rows.value().cols() != z1_rows.value().cols())
    throw ShapeError("ortho: slice widths differ, " +
                     z0_rows.value().shape_str() + " vs " +
                     z1_rows.value().shape_str());
  Var n0 = permute_cols(row_l2_normalize(z0_rows), perm);
  Var n1 = row_l2_normalize(z1_rows);
  // both ordered slice pairs contribute the same double sum
  return mul_scalar(sum(abs(matmul(n0, transpose(n1)))), 2.0);
}

Var ortho_reg(const Var& z0_rows, const Var& z1_rows) {
  return perm_ortho_reg(z0_rows, z1_rows,
                        identity_perm(z0_rows.value().cols()));
}

Var infomax_grad_closed_form(const ContrastiveBatch& b) {
  b.validate();
  const std::size_t n = b.z.value().rows();
  Var scale = sqrt(add_scalar(row_sum(mul(b.z, b.z)), kNormEps));
  Var zn = div_colvec(b.z, scale);
  Var logits = mul_scalar(matmul(zn, transpose(zn)), 1.0 / b.tau);

  Tensor cand = cand_mask_of(b);
  Tensor pos = pos_mask_of(b);
  Tensor offset(n, n);
  Tensor pos_norm(n, n);  // positive indicator over per-anchor positive count
  for (std::size_t i = 0; i < n; ++i) {
    double cnt = 0.0;
    for (std::size_t j = 0; j < n; ++j) cnt += pos.at(i, j);
    for (std::size_t j = 0; j < n; ++j) {
      offset.at(i, j) = (cand.at(i, j) - 1.0) * kMaskOffset;
      pos_norm.at(i, j) = pos.at(i, j) / cnt;
    }
  }

  Var M = Var::constant(cand);
  Var masked = add(mul(logits, M), Var::constant(std::move(offset)));
  Var top = row_max_detached(masked);
  Var e = mul(exp(add_colvec(masked, neg(top))), M);
  Var q = div_colvec(e, row_sum(e));  // candidate softmax, zero elsewhere
  Var coeff =
      mul_scalar(sub(q, Var::constant(std::move(pos_norm))), 1.0 / b.tau);
  Var w = add(coeff, transpose(coeff));
  Var g_hat = matmul(w, zn);  // gradient w.r.t. the normalized rows
  // pull back through the row normalization
  Var radial = row_sum(mul(zn, g_hat));
  return div_colvec(sub(g_hat, mul_colvec(zn, radial)), scale);
}

Var hessian_reg(const Var& grads, const SubLayout& layout) {
  if (layout.K != 2)
    throw DomainError("hessian penalty is defined for the two-slice layout");
  if (layout.width != grads.value().cols())
    throw ShapeError("layout width " + std::to_string(layout.width) +
                     " does not match gradients " + grads.value().shape_str());
  auto [a0, a1] = layout.slice(0);
  auto [b0, b1] = layout.slice(1);
  Var n0 = row_l2_norm(slice_cols(grads, a0, a1));
  Var n1 = row_l2_norm(slice_cols(grads, b0, b1));
  double rows = static_cast<double>(grads.value().rows());
  return mul_scalar(sum(mul(n0, n1)), 1.0 / rows);
}

LossTerms total_objective(const ContrastiveBatch& b, const SubLayout& layout,
                          RegKind kind, double lambda,
                          const std::vector<std::size_t>* perm) {
  if (lambda < 0.0) throw DomainError("lambda must be nonnegative");
  LossTerms out;
  out.lambda = lambda;
  out.slice_terms = sub_infomax_slice_values(b, layout);
  out.sub_infomax = out.slice_terms[0];
  for (std::size_t k = 1; k < out.slice_terms.size(); ++k)
    out.sub_infomax = add(out.sub_infomax, out.slice_terms[k]);

  auto ortho_slices = [&]() {
    if (layout.K != 2)
      throw DomainError("orthogonality penalty is defined for two slices");
    auto [a0, a1] = layout.slice(0);
    auto [b0, b1] = layout.slice(1);
    return std::pair<Var, Var>(slice_cols(b.z, a0, a1),
                               slice_cols(b.z, b0, b1));
  };

  switch (kind) {
    case RegKind::none:
      out.regularizer = Var::constant(0.0);
      break;
    case RegKind::infomin:
      out.regularizer = infomin_reg(b, layout);
      break;
    case RegKind::ortho: {
      auto [z0, z1] = ortho_slices();
      out.regularizer = ortho_reg(z0, z1);
      break;
    }
    case RegKind::perm_ortho: {
      if (perm == nullptr)
        throw std::invalid_argument(
            "perm-ortho requires a coordinate permutation");
      auto [z0, z1] = ortho_slices();
      out.regularizer = perm_ortho_reg(z0, z1, *perm);
      break;
    }
    case RegKind::hessian:
      out.regularizer = hessian_reg(infomax_grad_closed_form(b), layout);
      break;
  }
  out.total = add(out.sub_infomax, mul_scalar(out.regularizer, lambda));
  return out;
}

Var label_infomax(const Var& rows, const std::vector<std::size_t>& labels,
                  double tau) {
  const std::size_t n = rows.value().rows();
  if (labels.size() != n)
    throw ShapeError("label_infomax: " + std::to_string(labels.size()) +
                     " labels for " + rows.value().shape_str());
  if (!(tau > 0.0)) throw DomainError("label_infomax: tau must be positive");
  Tensor cand = Tensor::full(n, n, 1.0);
  Tensor pos = Tensor::zeros(n, n);
  Tensor keep = Tensor::zeros(n, 1);  // anchors that have at least one positive
  for (std::size_t i = 0; i < n; ++i) {
    cand.at(i, i) = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && labels[j] == labels[i]) {
        pos.at(i, j) = 1.0;
        keep.at(i, 0) = 1.0;
      }
  }
  Var terms = nce_terms(cosine_logits(rows, tau), cand, pos);
  return sum(mul(terms, Var::constant(std::move(keep))));
}

}  // namespace disent
