#include "core/optimizer.hpp"

#include <cmath>

#include "core/error.hpp"

namespace harvsim::optimizer {

namespace {

// Cumulative exact-prefactor energy at every cycle count up to n_max. Built
// from the recurrence so c_min = 0 configurations work too.
std::vector<double> cumulative_energy(const pump::PumpParams& p, std::int32_t n_max) {
  const auto v = pump::vstore_recurrence(p, n_max);
  const double k = p.c_res * p.c_store / (2.0 * (p.c_res + p.c_store));
  std::vector<double> w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double dv = v[i] - p.v0;
    w[i] = k * dv * dv;
  }
  return w;
}

void check_window(const OptimizerConfig& cfg, std::int32_t n1, std::int32_t n2) {
  if (n1 < 0 || !(n1 < n2) || n2 > cfg.n_max)
    fail(errc::invalid_argument, "cycle window must satisfy 0 <= n1 < n2 <= n_max");
}

}  // namespace

void OptimizerConfig::validate() const {
  pump.validate();
  if (!(std::isfinite(w_switch) && w_switch >= 0.0))
    fail(errc::validation, "w_switch must be finite and >= 0");
  if (!(std::isfinite(t_cycle) && t_cycle > 0.0))
    fail(errc::validation, "t_cycle must be finite and > 0");
  if (n_max < 2) fail(errc::validation, "n_max must be >= 2");
}

double average_power(const OptimizerConfig& cfg, std::int32_t n1, std::int32_t n2) {
  cfg.validate();
  check_window(cfg, n1, n2);
  const auto w = cumulative_energy(cfg.pump, n2);
  return (w[static_cast<std::size_t>(n2)] - w[static_cast<std::size_t>(n1)] - cfg.w_switch) /
         (cfg.t_cycle * static_cast<double>(n2 - n1));
}

WindowOptimum optimize_window(const OptimizerConfig& cfg) {
  cfg.validate();
  const auto w = cumulative_energy(cfg.pump, cfg.n_max);

  WindowOptimum best;
  bool have = false;
  for (std::int32_t n1 = 0; n1 < cfg.n_max; ++n1) {
    for (std::int32_t n2 = n1 + 1; n2 <= cfg.n_max; ++n2) {
      const double p = (w[static_cast<std::size_t>(n2)] - w[static_cast<std::size_t>(n1)] -
                        cfg.w_switch) /
                       (cfg.t_cycle * static_cast<double>(n2 - n1));
      const std::int32_t width = n2 - n1;
      const bool better =
          !have || p > best.power ||
          (p == best.power &&
           (width < best.n2 - best.n1 || (width == best.n2 - best.n1 && n1 < best.n1)));
      if (better) {
        best.n1 = n1;
        best.n2 = n2;
        best.power = p;
        have = true;
      }
    }
  }

  const auto v = pump::vstore_recurrence(cfg.pump, best.n2);
  best.v1 = v[static_cast<std::size_t>(best.n1)];
  best.v2 = v[static_cast<std::size_t>(best.n2)];
  return best;
}

std::vector<SurfaceEntry> power_surface(const OptimizerConfig& cfg) {
  cfg.validate();
  const auto w = cumulative_energy(cfg.pump, cfg.n_max);
  std::vector<SurfaceEntry> out;
  out.reserve(static_cast<std::size_t>(cfg.n_max) * (cfg.n_max + 1) / 2);
  for (std::int32_t n1 = 0; n1 < cfg.n_max; ++n1) {
    for (std::int32_t n2 = n1 + 1; n2 <= cfg.n_max; ++n2) {
      const double p = (w[static_cast<std::size_t>(n2)] - w[static_cast<std::size_t>(n1)] -
                        cfg.w_switch) /
                       (cfg.t_cycle * static_cast<double>(n2 - n1));
      out.push_back({n1, n2, p});
    }
  }
  return out;
}

std::pair<double, double> thresholds_from_cycles(const pump::PumpParams& p, std::int32_t n1,
                                                 std::int32_t n2) {
  p.validate();
  if (n1 < 0 || !(n1 < n2)) fail(errc::invalid_argument, "need 0 <= n1 < n2");
  const auto v = pump::vstore_recurrence(p, n2);
  return {v[static_cast<std::size_t>(n1)], v[static_cast<std::size_t>(n2)]};
}

}  // namespace harvsim::optimizer
