#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "core/pump.hpp"

namespace harvsim::optimizer {

struct OptimizerConfig {
  pump::PumpParams pump;
  double w_switch = 1e-9;          // fixed energy cost charged once per flyback
  double t_cycle = 1.0 / 596.0;    // seconds per pump cycle
  std::int32_t n_max = 200;

  void validate() const;
};

struct WindowOptimum {
  std::int32_t n1 = 0;
  std::int32_t n2 = 0;
  double v1 = 0.0;     // store voltage after n1 cycles: the switch-off threshold
  double v2 = 0.0;     // store voltage after n2 cycles: the switch-on threshold
  double power = 0.0;  // W
};

// Net average power of running the pump from cycle n1 to n2 and paying
// w_switch for the flyback: (W(n2) - W(n1) - w_switch) / (t_cycle*(n2-n1)).
// May be negative when the switch cost exceeds the harvest of the window.
double average_power(const OptimizerConfig& cfg, std::int32_t n1, std::int32_t n2);

// Exhaustive scan over 0 <= n1 < n2 <= n_max. Ties on power prefer the
// narrower window, then the smaller n1, so results are order-independent.
WindowOptimum optimize_window(const OptimizerConfig& cfg);

struct SurfaceEntry {
  std::int32_t n1;
  std::int32_t n2;
  double power;
};

// The full (n1, n2) power surface, row-major in n1; n_max*(n_max+1)/2 rows.
std::vector<SurfaceEntry> power_surface(const OptimizerConfig& cfg);

// (v1, v2) hysteresis thresholds realizing a given cycle window.
std::pair<double, double> thresholds_from_cycles(const pump::PumpParams& p,
                                                 std::int32_t n1, std::int32_t n2);

}  // namespace harvsim::optimizer
