#pragma once

#include <string>
#include <utility>
#include <vector>

namespace harvsim::transducer {

// Motion-to-capacitance map of the transducer. Two flavors:
//  - analytic: symmetric triangular profile, c_max at x = 0 falling linearly
//    to c_min at |x| = x_span and clamped to c_min beyond;
//  - table: piecewise-linear (x, C) knots with strictly increasing x,
//    clamped to the end values outside the knot range.
// slope() is the one-sided derivative taken from the positive side, so it is
// finite everywhere including the profile kinks.
class CapacitanceProfile {
 public:
  // Defaults to the analytic profile at the stock parameters.
  CapacitanceProfile();

  static CapacitanceProfile analytic(double c_max, double c_min, double x_span);
  static CapacitanceProfile table(std::vector<std::pair<double, double>> knots);

  // CSV with "x,capacitance" rows; '#' comments and blank lines are skipped.
  static CapacitanceProfile table_from_csv(const std::string& path);

  double value(double x) const;
  double slope(double x) const;

  double c_min() const { return c_min_; }
  double c_max() const { return c_max_; }

  // True when the capacitance peak sits strictly inside the x-range, in
  // which case symmetric travel sweeps two full capacitance cycles per
  // mechanical period.
  bool interior_peak() const;

  bool is_analytic() const { return analytic_; }
  double x_span() const { return x_span_; }

 private:
  bool analytic_ = true;
  double c_max_ = 200e-12;
  double c_min_ = 200e-12 / 3.5;
  double x_span_ = 50e-6;
  std::vector<std::pair<double, double>> knots_;
};

// Force the field exerts on the proof mass at bias v_var; (1/2) v_var^2
// dC/dx, which always pulls toward higher capacitance.
double electrostatic_force(const CapacitanceProfile& profile, double x, double v_var);

struct MechParams {
  double mass = 46.0e-6;
  double stiffness = 152.6;
  double damping = 2.19e-3;
  double accel_amplitude = 10.0;
  double drive_freq = 298.0;

  void validate() const;
};

// Inertial drive m * a * sin(2 pi f t).
double external_force(const MechParams& m, double t);

double resonant_frequency_hz(const MechParams& m);

}  // namespace harvsim::transducer
