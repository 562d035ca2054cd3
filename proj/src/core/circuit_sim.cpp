#include "core/circuit_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "core/error.hpp"
#include "core/ode.hpp"
#include "core/textio.hpp"

namespace harvsim::sim {

namespace {

// State vector layout. Charges are the primary electrical states so that
// conservation is a property of the equations, not of the integrator.
enum : std::size_t {
  iX = 0,
  iV,
  iQvar,
  iQstore,
  iQres,
  iIl,
  iWmech,   // cumulative drive work
  iWdamp,   // cumulative damper dissipation
  iWconv,   // cumulative mechanical -> electrical conversion
  iWdres,   // cumulative resistive/junction diode dissipation
  iWload,   // cumulative load-resistor dissipation
  kDim,
};

using Y = std::array<double, kDim>;

enum class Fly : std::uint8_t { idle, on, freewheel };

struct Mode {
  bool d1 = false;
  bool d2 = false;
  Fly fly = Fly::idle;
};

std::string topology_name(const Mode& m, switch_ctrl::State sw) {
  std::string s = "d1=";
  s += m.d1 ? "on" : "off";
  s += " d2=";
  s += m.d2 ? "on" : "off";
  s += " switch=";
  s += sw == switch_ctrl::State::on ? "on" : "off";
  s += " flyback=";
  s += m.fly == Fly::idle ? "idle" : (m.fly == Fly::on ? "on" : "freewheel");
  return s;
}

// Monitored zero crossings. Every event fires when its function passes from
// strictly negative (at the last accepted point) to >= 0.
enum Ev : std::size_t {
  evD1On = 0,  // v_res - v_var
  evD1Off,     // -i_d1
  evD2On,      // v_var - v_store
  evD2Off,     // -i_d2
  evSwOn,      // v_store - v2        (controller Off)
  evSwOff,     // v1 - v_store        (controller On)
  evD3Off,     // -i_l                (freewheel)
  evXUp,       // x upward through 0  (capacitance maximum)
  evXDown,     // x downward through 0
  evVUp,       // v upward through 0  (capacitance minimum)
  evVDown,     // v downward through 0
  kNumEv,
};

constexpr double kInactive = -1.0;  // inactive events sit below zero forever

struct Eval {
  Y dydt{};
  double c_var = 0.0;
  double cdot = 0.0;
  double v_var = 0.0;
  double v_store = 0.0;
  double v_res = 0.0;
  double i_d1 = 0.0;
  double i_d2 = 0.0;
  double f_elec = 0.0;
};

class Engine {
 public:
  explicit Engine(const SimConfig& cfg)
      : cfg_(cfg),
        prescribed_(cfg.mode == SimMode::prescribed_capacitance),
        exponential_(cfg.diode.kind == DiodeKind::exponential),
        c_store_(cfg.pump.c_store),
        c_res_(cfg.pump.c_res),
        ind_(cfg.inductance) {
    const double c_series = c_store_ * c_res_ / (c_store_ + c_res_);
    fly_step_cap_ = 2.0 * std::numbers::pi * std::sqrt(ind_ * c_series) / 40.0;
    cap_omega_ = 2.0 * std::numbers::pi * (2.0 * cfg_.mech.drive_freq);
    const double v0 = cfg_.pump.v0;
    atol_ = {1e-4,                                      // x
             1e-1,                                      // v
             cfg_.profile.c_max() * v0,                 // q_var
             c_store_ * v0,                             // q_store
             c_res_ * v0,                               // q_res
             std::max(1e-3, v0 * std::sqrt(c_series / ind_)),  // i_l
             1e-6, 1e-6, 1e-6, 1e-6, 1e-6};             // energy integrals
    for (double& a : atol_) a *= cfg_.integrator.abs_tol;
  }

  Trace run();
  Eval eval(double t, const Y& y, const Mode& m) const;

 private:
  void capacitance(double t, double x, double v, double& c, double& cdot) const;
  double shockley(double dv) const;
  std::array<double, kNumEv> event_values(const Eval& e, const Y& y, const Mode& m,
                                          switch_ctrl::State sw) const;
  double event_tol(std::size_t ev) const;

  SimConfig cfg_;
  bool prescribed_;
  bool exponential_;
  double c_store_;
  double c_res_;
  double ind_;
  double fly_step_cap_ = 0.0;
  double cap_omega_ = 0.0;
  std::array<double, kDim> atol_{};
};

void Engine::capacitance(double t, double x, double v, double& c, double& cdot) const {
  if (prescribed_) {
    const double mid = 0.5 * (cfg_.profile.c_max() + cfg_.profile.c_min());
    const double amp = 0.5 * (cfg_.profile.c_max() - cfg_.profile.c_min());
    c = mid + amp * std::cos(cap_omega_ * t);
    cdot = -amp * cap_omega_ * std::sin(cap_omega_ * t);
  } else {
    c = cfg_.profile.value(x);
    cdot = cfg_.profile.slope(x) * v;
  }
}

double Engine::shockley(double dv) const {
  const double vt = cfg_.diode.ideality * cfg_.diode.v_thermal;
  const double arg = std::min(dv / vt, 600.0);
  return cfg_.diode.i_sat * std::expm1(arg);
}

Eval Engine::eval(double t, const Y& y, const Mode& m) const {
  Eval e;
  capacitance(t, y[iX], y[iV], e.c_var, e.cdot);
  e.v_var = y[iQvar] / e.c_var;
  e.v_store = y[iQstore] / c_store_;
  e.v_res = y[iQres] / c_res_;

  const double i_load = cfg_.load_resistance > 0.0 ? e.v_res / cfg_.load_resistance : 0.0;
  const double i_sw = m.fly == Fly::on ? y[iIl] : 0.0;
  const double i_ret = m.fly != Fly::idle ? y[iIl] : 0.0;

  double p_diode = 0.0;
  if (exponential_) {
    e.i_d1 = shockley(e.v_res - e.v_var);
    e.i_d2 = shockley(e.v_var - e.v_store);
    p_diode += e.i_d1 * (e.v_res - e.v_var) + e.i_d2 * (e.v_var - e.v_store);
  } else if (cfg_.diode.r_on > 0.0) {
    if (m.d1) {
      e.i_d1 = (e.v_res - e.v_var) / cfg_.diode.r_on;
      p_diode += e.i_d1 * (e.v_res - e.v_var);
    }
    if (m.d2) {
      e.i_d2 = (e.v_var - e.v_store) / cfg_.diode.r_on;
      p_diode += e.i_d2 * (e.v_var - e.v_store);
    }
  } else if (m.d1 || m.d2) {
    // Conducting ideal diodes pin the adjoining node voltages together; the
    // branch currents are whatever keeps the pinned voltages moving in
    // lockstep (the constraint derivative solved for the currents).
    const double c = e.c_var;
    const double drive = e.v_var * e.cdot / c;
    if (m.d1 && m.d2) {
      const double a11 = 1.0 / c + 1.0 / c_res_;
      const double a12 = -1.0 / c;
      const double a21 = 1.0 / c;
      const double a22 = -(1.0 / c + 1.0 / c_store_);
      const double r1 = drive + (i_ret - i_load) / c_res_;
      const double r2 = drive - i_sw / c_store_;
      const double det = a11 * a22 - a12 * a21;
      e.i_d1 = (r1 * a22 - a12 * r2) / det;
      e.i_d2 = (a11 * r2 - r1 * a21) / det;
    } else if (m.d2) {
      const double c_sv = c * c_store_ / (c + c_store_);
      e.i_d2 = c_sv * (i_sw / c_store_ - drive);
    } else {
      const double c_rv = c * c_res_ / (c + c_res_);
      e.i_d1 = c_rv * (drive + (i_ret - i_load) / c_res_);
    }
  }

  double di_l = 0.0;
  if (m.fly == Fly::on) {
    di_l = (e.v_store - e.v_res) / ind_;
  } else if (m.fly == Fly::freewheel) {
    double vx = 0.0;  // node between switch and inductor, clamped by D3
    if (exponential_) {
      const double vt = cfg_.diode.ideality * cfg_.diode.v_thermal;
      const double i = y[iIl];
      vx = i > 0.0 ? -vt * std::log1p(i / cfg_.diode.i_sat) : -vt * i / cfg_.diode.i_sat;
    } else if (cfg_.diode.r_on > 0.0) {
      vx = -y[iIl] * cfg_.diode.r_on;
    }
    di_l = (vx - e.v_res) / ind_;
    p_diode += -vx * y[iIl];
  }

  Y& d = e.dydt;
  d[iQvar] = e.i_d1 - e.i_d2;
  d[iQstore] = e.i_d2 - i_sw;
  d[iQres] = -e.i_d1 + i_ret - i_load;
  d[iIl] = di_l;

  double f_ext = 0.0;
  if (!prescribed_) {
    e.f_elec = electrostatic_force(cfg_.profile, y[iX], e.v_var);
    f_ext = external_force(cfg_.mech, t);
    d[iX] = y[iV];
    d[iV] = (f_ext - cfg_.mech.stiffness * y[iX] - cfg_.mech.damping * y[iV] + e.f_elec) /
            cfg_.mech.mass;
  }

  const double conv = -0.5 * e.v_var * e.v_var * e.cdot;
  d[iWconv] = conv;
  d[iWmech] = prescribed_ ? conv : f_ext * y[iV];
  d[iWdamp] = prescribed_ ? 0.0 : cfg_.mech.damping * y[iV] * y[iV];
  d[iWdres] = p_diode;
  d[iWload] = cfg_.load_resistance > 0.0 ? e.v_res * e.v_res / cfg_.load_resistance : 0.0;
  return e;
}

std::array<double, kNumEv> Engine::event_values(const Eval& e, const Y& y, const Mode& m,
                                                switch_ctrl::State sw) const {
  std::array<double, kNumEv> g;
  g.fill(kInactive);
  if (!exponential_) {
    if (!m.d1) g[evD1On] = e.v_res - e.v_var;
    if (m.d1) g[evD1Off] = -e.i_d1;
    if (!m.d2) g[evD2On] = e.v_var - e.v_store;
    if (m.d2) g[evD2Off] = -e.i_d2;
  }
  if (sw == switch_ctrl::State::off)
    g[evSwOn] = e.v_store - cfg_.thresholds.v2;
  else
    g[evSwOff] = cfg_.thresholds.v1 - e.v_store;
  if (m.fly == Fly::freewheel) g[evD3Off] = -y[iIl];
  if (!prescribed_) {
    g[evXUp] = y[iX];
    g[evXDown] = -y[iX];
    g[evVUp] = y[iV];
    g[evVDown] = -y[iV];
  }
  return g;
}

double Engine::event_tol(std::size_t ev) const {
  const double vt = cfg_.integrator.abs_tol;  // volts
  switch (ev) {
    case evD1On:
    case evD2On:
    case evSwOn:
    case evSwOff:
      return vt;
    case evD1Off:
    case evD2Off:
    case evD3Off:
      return std::max(1e-15, vt * 1e-3);  // amps
    default:
      return vt;  // meters / m s^-1 for the bookkeeping markers
  }
}

double field_energy(const Y& y, double c_var, double c_store, double c_res, double ind) {
  return 0.5 * y[iQvar] * y[iQvar] / c_var + 0.5 * y[iQstore] * y[iQstore] / c_store +
         0.5 * y[iQres] * y[iQres] / c_res + 0.5 * ind * y[iIl] * y[iIl];
}

TraceRow make_row(double t, const Y& y, const Eval& e, switch_ctrl::State sw, EventType event,
                  double w_jump, double c_store, double c_res, double ind) {
  TraceRow r;
  r.t = t;
  r.x = y[iX];
  r.v = y[iV];
  r.q_var = y[iQvar];
  r.c_var = e.c_var;
  r.v_var = e.v_var;
  r.v_store = e.v_store;
  r.v_res = e.v_res;
  r.i_l = y[iIl];
  r.sw = sw;
  r.f_elec = e.f_elec;
  r.event = event;
  r.w_mech_in = y[iWmech];
  r.w_elec_stored = field_energy(y, e.c_var, c_store, c_res, ind);
  r.w_damp = y[iWdamp];
  r.w_diode = y[iWdres] + w_jump;
  r.w_converted = y[iWconv];
  return r;
}

}  // namespace

const char* event_name(EventType e) {
  switch (e) {
    case EventType::none: return "";
    case EventType::d1_on: return "d1_on";
    case EventType::d1_off: return "d1_off";
    case EventType::d2_on: return "d2_on";
    case EventType::d2_off: return "d2_off";
    case EventType::switch_on: return "switch_on";
    case EventType::switch_off: return "switch_off";
    case EventType::d3_off: return "d3_off";
    case EventType::cvar_max: return "cvar_max";
    case EventType::cvar_min: return "cvar_min";
  }
  return "";
}

void DiodeModel::validate() const {
  if (!(std::isfinite(r_on) && r_on >= 0.0)) fail(errc::validation, "diode_r_on must be >= 0");
  if (!(std::isfinite(i_sat) && i_sat > 0.0)) fail(errc::validation, "diode_i_sat must be > 0");
  if (!(std::isfinite(v_thermal) && v_thermal > 0.0))
    fail(errc::validation, "diode_v_thermal must be > 0");
  if (!(std::isfinite(ideality) && ideality > 0.0))
    fail(errc::validation, "diode_ideality must be > 0");
}

void IntegratorOptions::validate() const {
  if (!(std::isfinite(rel_tol) && rel_tol > 0.0)) fail(errc::validation, "rel_tol must be > 0");
  if (!(std::isfinite(abs_tol) && abs_tol > 0.0)) fail(errc::validation, "abs_tol must be > 0");
  if (!(std::isfinite(max_step) && max_step > 0.0)) fail(errc::validation, "max_step must be > 0");
}

void SimConfig::validate() const {
  pump.validate();
  mech.validate();
  diode.validate();
  thresholds.validate();
  integrator.validate();
  if (!(std::isfinite(inductance) && inductance > 0.0))
    fail(errc::validation, "inductance must be > 0");
  if (!(std::isfinite(w_switch) && w_switch >= 0.0))
    fail(errc::validation, "w_switch must be >= 0");
  if (!(std::isfinite(load_resistance) && load_resistance >= 0.0))
    fail(errc::validation, "load_resistance must be >= 0 (0 disables the load)");
  if (!(std::isfinite(t_end) && t_end >= 0.0)) fail(errc::validation, "t_end must be >= 0");
}

double charge_share_loss(double c1, double c2, double v1, double v2) {
  const double dv = v1 - v2;
  return 0.5 * (c1 * c2 / (c1 + c2)) * dv * dv;
}

Trace Engine::run() {
  Trace trace;
  trace.config = cfg_;

  Y y{};
  const double v0 = cfg_.pump.v0;
  {
    double c0 = 0.0, cd0 = 0.0;
    capacitance(0.0, 0.0, 0.0, c0, cd0);
    y[iQvar] = c0 * v0;
  }
  y[iQstore] = c_store_ * v0;
  y[iQres] = c_res_ * v0;

  Mode mode;
  // Startup rule: the controller sees the initial store voltage once, so a
  // band that already lies at or below v0 starts with the switch closed.
  switch_ctrl::State ctrl = switch_ctrl::step(switch_ctrl::State::off, v0, cfg_.thresholds);
  if (ctrl == switch_ctrl::State::on) {
    mode.fly = Fly::on;
    ++trace.switch_on_count;
  }

  double t = 0.0;
  double w_jump = 0.0;  // connection charge-sharing losses + clamp losses

  Eval e0 = eval(t, y, mode);
  // Runs begin at a capacitance maximum; marking it keeps the per-cycle
  // windows uniform.
  trace.rows.push_back(make_row(t, y, e0, ctrl, EventType::cvar_max, w_jump, c_store_, c_res_,
                                ind_));
  if (cfg_.t_end == 0.0) {
    trace.w_switch_est = trace.switch_on_count * cfg_.w_switch;
    return trace;
  }

  const double max_step = cfg_.integrator.max_step;
  const double rel_tol = cfg_.integrator.rel_tol;

  Y k[7];
  e0 = eval(t, y, mode);
  k[0] = e0.dydt;
  auto g_prev = event_values(e0, y, mode, ctrl);

  double h = std::min({max_step, cfg_.t_end, 1e-7});
  std::int64_t grid_idx = 1;
  std::int64_t capext_idx = 1;  // prescribed-mode extremum counter
  const double capext_half = prescribed_ ? 0.5 / (2.0 * cfg_.mech.drive_freq) : 0.0;

  const auto dt_floor = [](double at) {
    return std::max(1e-18, 8.0 * std::numeric_limits<double>::epsilon() * std::max(at, 1e-6));
  };

  // Applies one discrete transition at time `at`; returns the row to log.
  const auto apply_event = [&](std::size_t ev, double at, Y& yy) -> EventType {
    switch (ev) {
      case evD1On: {
        const double c = eval(at, yy, mode).c_var;
        const double v_var = yy[iQvar] / c;
        const double v_res = yy[iQres] / c_res_;
        if (cfg_.diode.r_on == 0.0) {
          w_jump += charge_share_loss(c, c_res_, v_var, v_res);
          const double v_common = (yy[iQvar] + yy[iQres]) / (c + c_res_);
          yy[iQvar] = c * v_common;
          yy[iQres] = c_res_ * v_common;
        }
        mode.d1 = true;
        return EventType::d1_on;
      }
      case evD1Off:
        mode.d1 = false;
        return EventType::d1_off;
      case evD2On: {
        const double c = eval(at, yy, mode).c_var;
        const double v_var = yy[iQvar] / c;
        const double v_store = yy[iQstore] / c_store_;
        if (cfg_.diode.r_on == 0.0) {
          w_jump += charge_share_loss(c, c_store_, v_var, v_store);
          const double v_common = (yy[iQvar] + yy[iQstore]) / (c + c_store_);
          yy[iQvar] = c * v_common;
          yy[iQstore] = c_store_ * v_common;
        }
        mode.d2 = true;
        return EventType::d2_on;
      }
      case evD2Off:
        mode.d2 = false;
        return EventType::d2_off;
      case evSwOn: {
        const double v_store = yy[iQstore] / c_store_;
        ctrl = switch_ctrl::step(ctrl, std::max(v_store, cfg_.thresholds.v2), cfg_.thresholds);
        mode.fly = Fly::on;  // D3 unclamps: the switch pins its node high
        ++trace.switch_on_count;
        return EventType::switch_on;
      }
      case evSwOff: {
        const double v_store = yy[iQstore] / c_store_;
        ctrl = switch_ctrl::step(ctrl, std::min(v_store, cfg_.thresholds.v1), cfg_.thresholds);
        if (yy[iIl] > 0.0) {
          mode.fly = Fly::freewheel;
        } else {
          // Opening against non-positive inductor current: the leftover
          // field energy has nowhere to go and is booked as a loss.
          w_jump += 0.5 * ind_ * yy[iIl] * yy[iIl];
          yy[iIl] = 0.0;
          mode.fly = Fly::idle;
        }
        return EventType::switch_off;
      }
      case evD3Off:
        w_jump += 0.5 * ind_ * yy[iIl] * yy[iIl];  // residual within tolerance
        yy[iIl] = 0.0;
        mode.fly = Fly::idle;
        return EventType::d3_off;
      case evXUp:
      case evXDown:
        return EventType::cvar_max;
      case evVUp:
      case evVDown:
        return EventType::cvar_min;
      default:
        return EventType::none;
    }
  };

  // Complementarity sweep after any state change: engage an off diode whose
  // forward voltage is non-negative and whose would-be current is positive,
  // drop a conducting diode whose current went negative, and follow the
  // controller if a jump moved the store voltage across a threshold.
  const auto settle_cascade = [&](double at, Y& yy, std::vector<EventType>& extra) {
    for (int pass = 0; pass < 8; ++pass) {
      const Eval ee = eval(at, yy, mode);
      bool changed = false;
      if (!exponential_ && cfg_.diode.r_on == 0.0) {
        if (!mode.d2 && ee.v_var - ee.v_store >= 0.0) {
          Mode probe = mode;
          probe.d2 = true;
          Y yp = yy;
          const double v_common = (yp[iQvar] + yp[iQstore]) / (ee.c_var + c_store_);
          yp[iQvar] = ee.c_var * v_common;
          yp[iQstore] = c_store_ * v_common;
          if (eval(at, yp, probe).i_d2 > 0.0) {
            extra.push_back(apply_event(evD2On, at, yy));
            changed = true;
          }
        }
        if (!changed && !mode.d1 && ee.v_res - ee.v_var >= 0.0) {
          Mode probe = mode;
          probe.d1 = true;
          Y yp = yy;
          const double v_common = (yp[iQvar] + yp[iQres]) / (ee.c_var + c_res_);
          yp[iQvar] = ee.c_var * v_common;
          yp[iQres] = c_res_ * v_common;
          if (eval(at, yp, probe).i_d1 > 0.0) {
            extra.push_back(apply_event(evD1On, at, yy));
            changed = true;
          }
        }
        if (!changed && mode.d2 && ee.i_d2 < 0.0) {
          extra.push_back(apply_event(evD2Off, at, yy));
          changed = true;
        }
        if (!changed && mode.d1 && ee.i_d1 < 0.0) {
          extra.push_back(apply_event(evD1Off, at, yy));
          changed = true;
        }
      }
      if (!changed) {
        const double v_store = yy[iQstore] / c_store_;
        if (ctrl == switch_ctrl::State::off && v_store >= cfg_.thresholds.v2) {
          extra.push_back(apply_event(evSwOn, at, yy));
          changed = true;
        } else if (ctrl == switch_ctrl::State::on && v_store <= cfg_.thresholds.v1) {
          extra.push_back(apply_event(evSwOff, at, yy));
          changed = true;
        }
      }
      if (!changed && mode.fly == Fly::freewheel && yy[iIl] <= 0.0) {
        extra.push_back(apply_event(evD3Off, at, yy));
        changed = true;
      }
      if (!changed) return;
    }
    fail(errc::numeric, "discrete transitions did not settle at t = " + textio::sci9(at) +
                            "; topology: " + topology_name(mode, ctrl));
  };

  const auto emit_row = [&](double at, const Y& yy, EventType event) {
    const Eval ee = eval(at, yy, mode);
    if (!trace.rows.empty() && trace.rows.back().t == at && event == EventType::none) return;
    trace.rows.push_back(make_row(at, yy, ee, ctrl, event, w_jump, c_store_, c_res_, ind_));
  };

  int reject_streak = 0;
  while (t < cfg_.t_end) {
    // Step caps: the output grid, prescribed extremum instants and t_end are
    // hard boundaries; fast flyback topologies and resistive conduction get
    // their own stability caps.
    double t_stop = std::min(cfg_.t_end, static_cast<double>(grid_idx) * max_step);
    bool stop_is_capext = false;
    if (prescribed_) {
      const double t_ext = static_cast<double>(capext_idx) * capext_half;
      if (t_ext <= t_stop + 1e-30) {
        t_stop = std::min(t_stop, t_ext);
        stop_is_capext = t_ext <= t_stop;
      }
    }
    h = std::min(h, max_step);
    if (mode.fly != Fly::idle) h = std::min(h, fly_step_cap_);
    if (!exponential_ && cfg_.diode.r_on > 0.0 && (mode.d1 || mode.d2)) {
      const Eval enow = eval(t, y, mode);
      const double c_small = std::min(enow.c_var, c_store_);
      h = std::min(h, std::max(2.5 * cfg_.diode.r_on * c_small, dt_floor(t)));
    }
    bool landed = false;
    if (t + h >= t_stop) {
      h = t_stop - t;
      landed = true;
    }
    if (h <= 0.0) {  // already at the boundary (can happen after events)
      if (landed) {
        if (stop_is_capext && t_stop < cfg_.t_end) {
          emit_row(t, y, capext_idx % 2 == 0 ? EventType::cvar_max : EventType::cvar_min);
          ++capext_idx;
        }
        if (t >= cfg_.t_end) break;
        h = dt_floor(t);
        continue;
      }
      h = dt_floor(t);
      continue;
    }

    Y y_new, err;
    dopri5_step(
        [&](double tt, const Y& yy, Y& dy) { dy = eval(tt, yy, mode).dydt; }, t, y, h, k, y_new,
        err);
    const double en = ode::error_norm(err, y, y_new, atol_, rel_tol);
    if (!(en <= 1.0)) {
      const double fac = std::isfinite(en) ? std::max(0.2, 0.9 * std::pow(en, -0.2)) : 0.1;
      h *= fac;
      if (h < dt_floor(t))
        fail(errc::numeric, "step size underflow at t = " + textio::sci9(t) +
                                "; topology: " + topology_name(mode, ctrl) +
                                "; the requested tolerances cannot be met");
      if (++reject_streak > 10000)
        fail(errc::numeric, "integrator stalled at t = " + textio::sci9(t) +
                                "; topology: " + topology_name(mode, ctrl));
      continue;
    }
    reject_streak = 0;

    Eval e_end = eval(t + h, y_new, mode);
    auto g_end = event_values(e_end, y_new, mode, ctrl);
    bool any_fired = false;
    for (std::size_t i = 0; i < kNumEv; ++i)
      if (g_prev[i] < 0.0 && g_end[i] >= 0.0) any_fired = true;

    if (!any_fired) {
      const double t_new = landed ? t_stop : t + h;
      t = t_new;
      y = y_new;
      k[0] = k[6];
      g_prev = g_end;

      std::vector<EventType> extra;
      settle_cascade(t, y, extra);  // catches grazing contacts missed by arming
      if (!extra.empty()) {
        for (EventType et : extra) emit_row(t, y, et);
        const Eval ef = eval(t, y, mode);
        k[0] = ef.dydt;
        g_prev = event_values(ef, y, mode, ctrl);
      }

      if (landed && stop_is_capext && t < cfg_.t_end) {
        emit_row(t, y, capext_idx % 2 == 0 ? EventType::cvar_max : EventType::cvar_min);
        ++capext_idx;
      } else if (landed && t >= static_cast<double>(grid_idx) * max_step) {
        emit_row(t, y, EventType::none);
        ++grid_idx;
      } else if (mode.fly != Fly::idle) {
        emit_row(t, y, EventType::none);  // dense sampling through the flyback
      }
      if (t >= cfg_.t_end) emit_row(t, y, EventType::none);
      h *= ode::next_step_factor(en);
      continue;
    }

    // Locate the earliest crossing by shrinking a bracket in step fraction.
    // lo always has every armed event negative; hi has at least one fired.
    double lo = 0.0, hi = 1.0;
    auto g_lo = g_prev;
    auto g_hi = g_end;
    Y y_hi = y_new;
    const double h_full = h;
    bool collapsed = false;
    for (int iter = 0;; ++iter) {
      if (iter > 80)
        fail(errc::numeric, "event bracket did not converge near t = " + textio::sci9(t) +
                                "; topology: " + topology_name(mode, ctrl));
      bool within_tol = true;
      for (std::size_t i = 0; i < kNumEv; ++i)
        if (g_lo[i] < 0.0 && g_hi[i] >= 0.0 && g_hi[i] > event_tol(i)) within_tol = false;
      if (within_tol) break;
      if ((hi - lo) * h_full < dt_floor(t) || hi - lo < 1e-13) {
        collapsed = true;
        break;
      }
      double prop = hi;
      for (std::size_t i = 0; i < kNumEv; ++i)
        if (g_lo[i] < 0.0 && g_hi[i] >= 0.0)
          prop = std::min(prop, lo + (hi - lo) * (-g_lo[i]) / (g_hi[i] - g_lo[i]));
      prop = std::clamp(prop, lo + 0.02 * (hi - lo), hi - 0.02 * (hi - lo));
      Y k_probe[7];
      k_probe[0] = k[0];
      Y y_probe, err_probe;
      dopri5_step(
          [&](double tt, const Y& yy, Y& dy) { dy = eval(tt, yy, mode).dydt; }, t, y,
          h_full * prop, k_probe, y_probe, err_probe);
      const Eval e_probe = eval(t + h_full * prop, y_probe, mode);
      const auto g_probe = event_values(e_probe, y_probe, mode, ctrl);
      bool probe_fired = false;
      for (std::size_t i = 0; i < kNumEv; ++i)
        if (g_lo[i] < 0.0 && g_probe[i] >= 0.0) probe_fired = true;
      if (probe_fired) {
        hi = prop;
        g_hi = g_probe;
        y_hi = y_probe;
      } else {
        lo = prop;
        g_lo = g_probe;
      }
    }

    // Re-run the step onto the crossing so the committed state is a genuine
    // integrator state, then fire everything that crossed.
    if (hi < 1.0) {
      Y k_fin[7];
      k_fin[0] = k[0];
      Y err_fin;
      dopri5_step(
          [&](double tt, const Y& yy, Y& dy) { dy = eval(tt, yy, mode).dydt; }, t, y,
          h_full * hi, k_fin, y_hi, err_fin);
    }
    const double t_ev = t + h_full * hi;
    t = t_ev;
    y = y_hi;
    const Eval e_at = eval(t, y, mode);
    const auto g_at = event_values(e_at, y, mode, ctrl);
    std::vector<EventType> fired_rows;
    for (std::size_t i = 0; i < kNumEv; ++i) {
      const bool crossed = g_prev[i] < 0.0 && (g_at[i] >= 0.0 || (collapsed && g_hi[i] >= 0.0));
      if (!crossed) continue;
      // Turn-on events must also pass the complementarity check: a grazing
      // contact whose would-be current is not positive is not a turn-on.
      if ((i == evD1On || i == evD2On) && cfg_.diode.r_on == 0.0) {
        Mode probe = mode;
        Y yp = y;
        if (i == evD1On) {
          probe.d1 = true;
          const double v_common = (yp[iQvar] + yp[iQres]) / (e_at.c_var + c_res_);
          yp[iQvar] = e_at.c_var * v_common;
          yp[iQres] = c_res_ * v_common;
          if (!(eval(t, yp, probe).i_d1 > 0.0)) continue;
        } else {
          probe.d2 = true;
          const double v_common = (yp[iQvar] + yp[iQstore]) / (e_at.c_var + c_store_);
          yp[iQvar] = e_at.c_var * v_common;
          yp[iQstore] = c_store_ * v_common;
          if (!(eval(t, yp, probe).i_d2 > 0.0)) continue;
        }
      }
      fired_rows.push_back(apply_event(i, t, y));
    }
    settle_cascade(t, y, fired_rows);
    for (EventType et : fired_rows) emit_row(t, y, et);

    const Eval ef = eval(t, y, mode);
    k[0] = ef.dydt;
    g_prev = event_values(ef, y, mode, ctrl);
    h = h_full;  // the controller's suggestion still applies after the event
  }

  trace.w_load = y[iWload];
  trace.w_switch_est = trace.switch_on_count * cfg_.w_switch;
  return trace;
}

Trace simulate(const SimConfig& cfg) {
  cfg.validate();
  Engine engine(cfg);
  return engine.run();
}

StateDerivatives derivatives(const SimState& s, const SimConfig& cfg) {
  cfg.validate();
  if (s.d3_on && s.sw == switch_ctrl::State::on)
    fail(errc::invalid_argument, "inconsistent discrete state: d3 conducting while the switch is On");
  if (s.sw == switch_ctrl::State::off && !s.d3_on && s.i_l != 0.0)
    fail(errc::invalid_argument,
         "inconsistent discrete state: i_l must be 0 while the flyback path is open");

  Engine engine(cfg);
  Y y{};
  y[iX] = s.x;
  y[iV] = s.v;
  y[iQvar] = s.q_var;
  y[iQstore] = cfg.pump.c_store * s.v_store;
  y[iQres] = cfg.pump.c_res * s.v_res;
  y[iIl] = s.i_l;
  Mode m;
  m.d1 = s.d1_on;
  m.d2 = s.d2_on;
  m.fly = s.sw == switch_ctrl::State::on ? Fly::on : (s.d3_on ? Fly::freewheel : Fly::idle);
  const Eval e = engine.eval(s.t, y, m);
  StateDerivatives d;
  d.dx = e.dydt[iX];
  d.dv = e.dydt[iV];
  d.dq_var = e.dydt[iQvar];
  d.dv_store = e.dydt[iQstore] / cfg.pump.c_store;
  d.dv_res = e.dydt[iQres] / cfg.pump.c_res;
  d.di_l = e.dydt[iIl];
  return d;
}

EnergyAudit energy_audit(const Trace& trace) {
  EnergyAudit a;
  if (trace.rows.empty()) return a;
  const TraceRow& first = trace.rows.front();
  const TraceRow& last = trace.rows.back();
  const auto& mech = trace.config.mech;

  a.w_mech_in = last.w_mech_in;
  a.w_kinetic = 0.5 * mech.mass * (last.v * last.v - first.v * first.v);
  a.w_spring = 0.5 * mech.stiffness * (last.x * last.x - first.x * first.x);
  a.w_damp = last.w_damp;
  a.w_elec_stored = last.w_elec_stored - first.w_elec_stored;
  a.w_diode = last.w_diode;
  a.w_load = trace.w_load;
  a.w_switch_est = trace.w_switch_est;
  a.residual = std::abs(a.w_mech_in - a.w_kinetic - a.w_spring - a.w_elec_stored - a.w_damp -
                        a.w_diode - a.w_load);
  const double scale = std::max({std::abs(a.w_mech_in), std::abs(a.w_elec_stored), 1e-30});
  a.residual_rel = a.residual / scale;
  return a;
}

std::vector<FlybackAmplitudes> amplitude_coupling_report(const Trace& trace) {
  std::vector<FlybackAmplitudes> out;
  const double period = 1.0 / trace.config.mech.drive_freq;
  const auto& rows = trace.rows;

  std::size_t i = 0;
  std::int32_t index = 0;
  while (i < rows.size()) {
    if (rows[i].event != EventType::switch_on) {
      ++i;
      continue;
    }
    const double t_on = rows[i].t;
    std::size_t j = i + 1;
    while (j < rows.size() && rows[j].event != EventType::switch_off) ++j;
    if (j == rows.size()) break;  // run ended mid-flyback
    const double t_off = rows[j].t;

    FlybackAmplitudes fa;
    fa.flyback_index = ++index;
    const double lo = t_on - 5.0 * period;
    for (const TraceRow& r : rows) {
      if (r.t >= lo && r.t < t_on) fa.amp_before = std::max(fa.amp_before, std::abs(r.x));
      if (r.t > t_off && r.t <= t_off + 5.0 * period)
        fa.amp_after = std::max(fa.amp_after, std::abs(r.x));
    }
    out.push_back(fa);
    i = j + 1;
  }
  return out;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank for ties
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double vstore_amplitude_rank_correlation(const Trace& trace, double from_time) {
  const double period = 1.0 / trace.config.mech.drive_freq;
  if (trace.rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double t_last = trace.rows.back().t;

  std::vector<double> mean_v, peak_x;
  std::size_t row = 0;
  for (double w0 = from_time; w0 + period <= t_last; w0 += period) {
    while (row < trace.rows.size() && trace.rows[row].t < w0) ++row;
    double sum = 0.0, amp = 0.0;
    std::size_t count = 0, r = row;
    for (; r < trace.rows.size() && trace.rows[r].t < w0 + period; ++r) {
      sum += trace.rows[r].v_store;
      amp = std::max(amp, std::abs(trace.rows[r].x));
      ++count;
    }
    if (count == 0) continue;
    mean_v.push_back(sum / static_cast<double>(count));
    peak_x.push_back(amp);
  }
  if (mean_v.size() < 3) return std::numeric_limits<double>::quiet_NaN();
  return pearson(ranks(mean_v), ranks(peak_x));
}

std::vector<double> per_cycle_converted(const Trace& trace) {
  std::vector<double> out;
  bool have_prev = false;
  double prev = 0.0;
  for (const TraceRow& r : trace.rows) {
    if (r.event != EventType::cvar_max) continue;
    if (have_prev) out.push_back(r.w_converted - prev);
    prev = r.w_converted;
    have_prev = true;
  }
  return out;
}

std::vector<double> per_cycle_vstore_max(const Trace& trace) {
  std::vector<double> out;
  bool in_cycle = false;
  double peak = 0.0;
  for (const TraceRow& r : trace.rows) {
    if (in_cycle) peak = std::max(peak, r.v_store);
    if (r.event == EventType::cvar_max) {
      if (in_cycle) out.push_back(peak);
      in_cycle = true;
      peak = r.v_store;
    }
  }
  return out;
}

}  // namespace harvsim::sim
