#include "core/pump.hpp"

#include <cmath>
#include <string>

#include "core/error.hpp"
#include "core/textio.hpp"

namespace harvsim::pump {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) fail(errc::validation, msg);
}

double energy_prefactor(const PumpParams& p, EnergyForm form) {
  if (form == EnergyForm::approximate) return p.c_store / 2.0;
  return p.c_res * p.c_store / (2.0 * (p.c_res + p.c_store));
}

void require_cmin_positive(const PumpParams& p, const char* who) {
  if (!(p.c_min > 0.0))
    fail(errc::validation, std::string(who) + " requires c_min > 0 (got " +
                               textio::sci9(p.c_min) + "); use the recurrence for c_min = 0");
}

}  // namespace

void PumpParams::validate() const {
  require(std::isfinite(c_res) && std::isfinite(c_store) && std::isfinite(c_max) &&
              std::isfinite(c_min) && std::isfinite(v0),
          "pump parameters must be finite");
  require(c_min >= 0.0, "c_min must be >= 0 (got " + textio::sci9(c_min) + ")");
  require(c_max > c_min, "c_max must exceed c_min");
  require(c_store > c_max, "c_store must exceed c_max");
  require(c_res > c_store, "c_res must exceed c_store");
  require(v0 > 0.0, "v0 must be > 0 (got " + textio::sci9(v0) + ")");
}

double saturation_voltage(const PumpParams& p) {
  require_cmin_positive(p, "saturation_voltage");
  return p.v0 * p.c_max / p.c_min;
}

double vstore_closed_form(const PumpParams& p, std::int64_t n, VstoreLaw law) {
  p.validate();
  require_cmin_positive(p, "vstore_closed_form");
  if (n < 0) fail(errc::invalid_argument, "cycle index must be >= 0");
  const double ratio = p.c_max / p.c_min;
  const double base = law == VstoreLaw::corrected ? p.c_store / (p.c_store + p.c_min)
                                                  : p.c_max / (p.c_store + p.c_max);
  return p.v0 * ((1.0 - ratio) * std::pow(base, static_cast<double>(n)) + ratio);
}

double vstore_recurrence_step(const PumpParams& p, double v_prev) {
  return (p.c_max * p.v0 + p.c_store * v_prev) / (p.c_min + p.c_store);
}

std::vector<double> vstore_recurrence(const PumpParams& p, std::int64_t n) {
  p.validate();
  if (n < 0) fail(errc::invalid_argument, "cycle count must be >= 0");
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(n) + 1);
  v.push_back(p.v0);
  for (std::int64_t i = 0; i < n; ++i) v.push_back(vstore_recurrence_step(p, v.back()));
  return v;
}

double pump_energy_cumulative(const PumpParams& p, double v_store_n, EnergyForm form) {
  p.validate();
  if (!(v_store_n >= p.v0))
    fail(errc::invalid_argument, "v_store_n must be >= v0; the pump only charges upward");
  const double dv = v_store_n - p.v0;
  return energy_prefactor(p, form) * dv * dv;
}

double pump_energy_per_cycle(const PumpParams& p, std::int64_t n, VstoreSource source,
                             EnergyForm form) {
  p.validate();
  if (n < 1) fail(errc::invalid_argument, "per-cycle energy needs a cycle index n >= 1");
  double v_prev = 0.0, v_n = 0.0;
  if (source == VstoreSource::closed_form) {
    v_prev = vstore_closed_form(p, n - 1);
    v_n = vstore_closed_form(p, n);
  } else {
    const auto v = vstore_recurrence(p, n);
    v_prev = v[static_cast<std::size_t>(n) - 1];
    v_n = v[static_cast<std::size_t>(n)];
  }
  // (v_n - v0)^2 - (v_prev - v0)^2, factored.
  return energy_prefactor(p, form) * (v_n - v_prev) * (v_n + v_prev - 2.0 * p.v0);
}

std::vector<PumpEntry> pump_series(const PumpParams& p, std::int64_t n_max) {
  p.validate();
  if (n_max < 0) fail(errc::invalid_argument, "n_max must be >= 0");
  const double k = energy_prefactor(p, EnergyForm::exact);
  const auto v = vstore_recurrence(p, n_max);
  std::vector<PumpEntry> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double dv = v[i] - p.v0;
    PumpEntry e{static_cast<std::int64_t>(i), v[i], k * dv * dv, 0.0};
    if (i > 0) e.w_cycle = k * (v[i] - v[i - 1]) * (v[i] + v[i - 1] - 2.0 * p.v0);
    out.push_back(e);
  }
  return out;
}

double QvCycle::area() const {
  double twice = 0.0;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const QvVertex& a = vertices[i];
    const QvVertex& b = vertices[(i + 1) % vertices.size()];
    twice += a.v * b.q - b.v * a.q;
  }
  return -0.5 * twice;  // clockwise traversal -> positive area
}

QvCycle qv_cycle(const PumpParams& p, std::int64_t n) {
  p.validate();
  require_cmin_positive(p, "qv_cycle");
  if (n < 1) fail(errc::invalid_argument, "qv_cycle needs a cycle index n >= 1");
  const double v_prev = vstore_closed_form(p, n - 1);
  const double v_n = vstore_closed_form(p, n);
  const double q_top = p.c_max * p.v0;
  const double q_bot = p.c_min * v_n;

  QvCycle cycle;
  cycle.n = n;
  cycle.vertices.push_back({p.v0, q_top});
  if (n > 1) cycle.vertices.push_back({v_prev, q_top});
  cycle.vertices.push_back({v_n, q_bot});
  cycle.vertices.push_back({p.v0, q_bot});
  return cycle;
}

}  // namespace harvsim::pump
