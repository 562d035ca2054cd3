#pragma once

#include <cstdint>
#include <vector>

namespace harvsim::pump {

// Capacitor network of the diode charge pump: a large reservoir c_res and a
// temporary store c_store bracket the variable capacitor, which swings
// between c_max and c_min once per pump cycle. All analysis in this module
// holds the reservoir voltage at v0.
struct PumpParams {
  double c_res = 1e-6;
  double c_store = 3.3e-9;
  double c_max = 200e-12;
  double c_min = 200e-12 / 3.5;
  double v0 = 5.0;

  // Enforces finite values, v0 > 0 and the ordering
  // c_res > c_store > c_max > c_min >= 0. c_min == 0 is legal for the
  // recurrence (the linear regime); the closed forms additionally need
  // c_min > 0 and say so themselves.
  void validate() const;
};

enum class VstoreLaw {
  corrected,   // decay base c_store / (c_store + c_min); consistent with the recurrence
  as_printed,  // decay base c_max / (c_store + c_max); kept for comparison plots
};

enum class VstoreSource { closed_form, recurrence };

enum class EnergyForm {
  exact,        // series prefactor c_res*c_store / (2*(c_res + c_store))
  approximate,  // c_store / 2, the c_res -> infinity limit
};

// Asymptotic store voltage v0 * c_max / c_min. Only needs c_min > 0; the
// degenerate c_max == c_min case legitimately returns v0.
double saturation_voltage(const PumpParams& p);

// Store voltage after n complete pump cycles, closed form.
double vstore_closed_form(const PumpParams& p, std::int64_t n,
                          VstoreLaw law = VstoreLaw::corrected);

// One ideal-diode pump cycle: the variable capacitor tops up to c_max * v0,
// then shares charge with the store at minimum capacitance.
double vstore_recurrence_step(const PumpParams& p, double v_prev);

// v[0] = v0 through v[n]; the independent oracle for the closed form.
std::vector<double> vstore_recurrence(const PumpParams& p, std::int64_t n);

// Energy banked between reservoir and store once the store has reached
// v_store_n, measured from the flat start at v0. Requires v_store_n >= v0.
double pump_energy_cumulative(const PumpParams& p, double v_store_n,
                              EnergyForm form = EnergyForm::exact);

// Harvest of cycle n alone (n >= 1), as the difference of cumulative
// energies. Computed in factored form so late, nearly-saturated cycles do
// not lose all significance to cancellation.
double pump_energy_per_cycle(const PumpParams& p, std::int64_t n,
                             VstoreSource source = VstoreSource::closed_form,
                             EnergyForm form = EnergyForm::exact);

struct PumpEntry {
  std::int64_t n;
  double v_store;
  double w_cum;
  double w_cycle;
};

// Recurrence-driven table for n = 0..n_max with exact-prefactor energies.
std::vector<PumpEntry> pump_series(const PumpParams& p, std::int64_t n_max);

// One pump cycle as a closed polygon in the (V, Q) plane of the variable
// capacitor, traversed clockwise: top-up corner at (v0, c_max*v0), isolated
// compression along Q = c_max*v0 up to the previous store voltage, charge
// sharing down the slope -c_store to (v_n, c_min*v_n), isolated expansion
// back to v0 and reservoir top-up along V = v0. Cycle 1 degenerates to a
// triangle because the compression leg has zero length.
struct QvVertex {
  double v;
  double q;
};

struct QvCycle {
  std::int64_t n = 0;
  std::vector<QvVertex> vertices;  // 3 for n == 1, else 4

  // Shoelace area, positive for the clockwise traversal above. Equals the
  // per-cycle harvest with the approximate prefactor (identically, via the
  // recurrence); the exact form differs by the factor c_res/(c_res+c_store).
  double area() const;
};

QvCycle qv_cycle(const PumpParams& p, std::int64_t n);

}  // namespace harvsim::pump
