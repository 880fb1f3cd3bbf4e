#include "wflux/quadrature.hpp"

#include <gsl/gsl_integration.h>

#include <map>
#include <memory>
#include <mutex>

#include "wflux/errors.hpp"

namespace wflux {

const GaussLegendreRule& gauss_legendre(std::size_t order) {
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<GaussLegendreRule>> cache;
  if (order == 0) throw ConfigError("Gauss-Legendre order must be positive");

  std::lock_guard lock(mutex);
  auto& slot = cache[order];
  if (!slot) {
    auto rule = std::make_unique<GaussLegendreRule>();
    gsl_integration_glfixed_table* table = gsl_integration_glfixed_table_alloc(order);
    if (table == nullptr) throw ConfigError("cannot allocate Gauss-Legendre table");
    rule->nodes.resize(order);
    rule->weights.resize(order);
    for (std::size_t i = 0; i < order; ++i) {
      gsl_integration_glfixed_point(-1.0, 1.0, i, &rule->nodes[i], &rule->weights[i], table);
    }
    gsl_integration_glfixed_table_free(table);
    slot = std::move(rule);
  }
  return *slot;
}

double integrate_box(const std::function<double(double, double)>& f, const Box& box, std::size_t order) {
  const auto& rule = gauss_legendre(order);
  double total = 0.0;
  for (std::size_t i = 0; i < order; ++i) {
    const double x = box.cx + box.hx * rule.nodes[i];
    double row = 0.0;
    for (std::size_t j = 0; j < order; ++j) {
      row += rule.weights[j] * f(x, box.cy + box.hy * rule.nodes[j]);
    }
    total += rule.weights[i] * row;
  }
  return total * box.hx * box.hy;
}

}  // namespace wflux
