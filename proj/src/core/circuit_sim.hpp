#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/pump.hpp"
#include "core/switch_ctrl.hpp"
#include "core/transducer.hpp"

namespace harvsim::sim {

enum class DiodeKind : std::uint8_t {
  // Complementarity switching with event localization. r_on == 0 merges the
  // adjoining nodes while conducting (charge-share losses accounted exactly
  // at connection events); r_on > 0 conducts through that resistance.
  ideal,
  // Shockley i(v) for the pump diodes and the freewheel forward drop. Stiff;
  // intended for short robustness runs, not the default analyses.
  exponential,
};

struct DiodeModel {
  DiodeKind kind = DiodeKind::ideal;
  double r_on = 0.0;
  double i_sat = 1e-12;
  double v_thermal = 0.02585;
  double ideality = 1.0;

  void validate() const;
};

enum class SimMode : std::uint8_t {
  coupled,                 // mechanical ODE drives C_var through the profile
  prescribed_capacitance,  // C_var(t) sweeps [c_min, c_max] sinusoidally at
                           // twice the drive frequency; mechanics skipped
};

struct IntegratorOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-9;  // also the voltage tolerance for event localization
  double max_step = 2e-5; // trace sampling interval and global step cap

  void validate() const;
};

struct SimConfig {
  SimMode mode = SimMode::coupled;
  pump::PumpParams pump;
  transducer::MechParams mech;
  transducer::CapacitanceProfile profile;
  double inductance = 2.5e-6;
  DiodeModel diode;
  switch_ctrl::Thresholds thresholds;
  double w_switch = 1e-9;         // per-flyback estimate reported by the audit
  double load_resistance = 0.0;   // across c_res; 0 disables the load
  double t_end = 0.5;
  IntegratorOptions integrator;

  void validate() const;
};

enum class EventType : std::uint8_t {
  none = 0,
  d1_on,
  d1_off,
  d2_on,
  d2_off,
  switch_on,
  switch_off,
  d3_off,    // freewheel current reached zero
  cvar_max,  // capacitance-cycle boundary (bookkeeping only)
  cvar_min,
};

const char* event_name(EventType e);

struct TraceRow {
  double t = 0.0;
  double x = 0.0;
  double v = 0.0;
  double q_var = 0.0;
  double c_var = 0.0;
  double v_var = 0.0;
  double v_store = 0.0;
  double v_res = 0.0;
  double i_l = 0.0;
  switch_ctrl::State sw = switch_ctrl::State::off;
  double f_elec = 0.0;
  EventType event = EventType::none;
  // Cumulative energies since t = 0.
  double w_mech_in = 0.0;
  double w_elec_stored = 0.0;  // field energy currently held (caps + inductor)
  double w_damp = 0.0;
  double w_diode = 0.0;
  double w_converted = 0.0;
};

struct Trace {
  std::vector<TraceRow> rows;
  SimConfig config;          // the resolved configuration that produced it
  double w_load = 0.0;       // cumulative load-resistor dissipation at t_end
  double w_switch_est = 0.0; // switch-on count * configured w_switch
  std::int32_t switch_on_count = 0;
};

// Sampled at the max_step grid, at every localized event (flagged by the
// event column), and densely while the flyback path carries current.
Trace simulate(const SimConfig& cfg);

// Continuous-state snapshot with the discrete topology spelled out; used to
// probe the vector field directly.
struct SimState {
  double t = 0.0;
  double x = 0.0;
  double v = 0.0;
  double q_var = 0.0;
  double v_store = 0.0;
  double v_res = 0.0;
  double i_l = 0.0;
  switch_ctrl::State sw = switch_ctrl::State::off;
  bool d1_on = false;
  bool d2_on = false;
  bool d3_on = false;
};

struct StateDerivatives {
  double dx = 0.0;
  double dv = 0.0;
  double dq_var = 0.0;
  double dv_store = 0.0;
  double dv_res = 0.0;
  double di_l = 0.0;
};

// Rejects inconsistent discrete states (d3 conducting while the switch is
// On, or a frozen inductor current that is not zero).
StateDerivatives derivatives(const SimState& s, const SimConfig& cfg);

struct EnergyAudit {
  double w_mech_in = 0.0;
  double w_kinetic = 0.0;  // change over the run
  double w_spring = 0.0;   // change over the run
  double w_damp = 0.0;
  double w_elec_stored = 0.0;  // change in field energy over the run
  double w_diode = 0.0;
  double w_load = 0.0;
  double w_switch_est = 0.0;   // informational; not part of the balance
  double residual = 0.0;       // |w_mech_in - storage changes - losses|
  double residual_rel = 0.0;
};

EnergyAudit energy_audit(const Trace& trace);

struct FlybackAmplitudes {
  std::int32_t flyback_index = 0;  // 1-based
  double amp_before = 0.0;  // peak |x| over 5 mechanical periods before switch-on
  double amp_after = 0.0;   // peak |x| over 5 mechanical periods after switch-off
};

std::vector<FlybackAmplitudes> amplitude_coupling_report(const Trace& trace);

// Spearman rank correlation between per-period mean V_store and per-period
// peak |x|, over whole mechanical periods from from_time to the trace end.
// NaN when fewer than three whole periods are available.
double vstore_amplitude_rank_correlation(const Trace& trace, double from_time);

// Converted-energy increments between consecutive capacitance-cycle
// boundaries (cvar_max events), and the store-voltage maximum within each.
std::vector<double> per_cycle_converted(const Trace& trace);
std::vector<double> per_cycle_vstore_max(const Trace& trace);

// Energy dissipated when two capacitors at different voltages are merged:
// (1/2) * c1*c2/(c1+c2) * (v1-v2)^2. The diode connection events use exactly
// this accounting.
double charge_share_loss(double c1, double c2, double v1, double v2);

}  // namespace harvsim::sim
