#include "disent/gradcheck.hpp"

#include <cmath>

namespace disent {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h) {
  Tensor g(x.rows(), x.cols());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double orig = probe.at(i, j);
      probe.at(i, j) = orig + h;
      double up = f(probe);
      probe.at(i, j) = orig - h;
      double down = f(probe);
      probe.at(i, j) = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw DomainError("finite_diff_grad: non-finite evaluation at (" +
                          std::to_string(i) + "," + std::to_string(j) + ")");
      g.at(i, j) = (up - down) / (2.0 * h);
    }
  return g;
}

double max_rel_error(const Tensor& a, const Tensor& b, double floor) {
  require_same_shape("max_rel_error", a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      double x = a.at(i, j), y = b.at(i, j);
      double denom = std::abs(x) + std::abs(y);
      if (denom < floor) denom = floor;
      worst = std::max(worst, std::abs(x - y) / denom);
    }
  return worst;
}

}  // namespace disent
