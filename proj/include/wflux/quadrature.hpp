#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace wflux {

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendreRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Rules are cached per order; safe to call concurrently.
const GaussLegendreRule& gauss_legendre(std::size_t order);

/// Axis-aligned box [cx - hx, cx + hx] x [cy - hy, cy + hy].
struct Box {
  double cx;
  double cy;
  double hx;
  double hy;
};

/// Tensor-product Gauss-Legendre integral of f(x, y) over the box.
double integrate_box(const std::function<double(double, double)>& f, const Box& box, std::size_t order);

}  // namespace wflux
