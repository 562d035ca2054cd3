#include "core/transducer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "core/error.hpp"
#include "core/textio.hpp"

namespace harvsim::transducer {

CapacitanceProfile::CapacitanceProfile() = default;

CapacitanceProfile CapacitanceProfile::analytic(double c_max, double c_min, double x_span) {
  if (!(std::isfinite(c_max) && std::isfinite(c_min) && std::isfinite(x_span)))
    fail(errc::validation, "profile parameters must be finite");
  if (!(c_min >= 0.0)) fail(errc::validation, "profile c_min must be >= 0");
  if (!(c_max > c_min)) fail(errc::validation, "profile c_max must exceed c_min");
  if (!(x_span > 0.0)) fail(errc::validation, "x_span must be > 0");
  CapacitanceProfile p;
  p.analytic_ = true;
  p.c_max_ = c_max;
  p.c_min_ = c_min;
  p.x_span_ = x_span;
  return p;
}

CapacitanceProfile CapacitanceProfile::table(std::vector<std::pair<double, double>> knots) {
  if (knots.size() < 2) fail(errc::validation, "profile table needs at least 2 knots");
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (!(std::isfinite(knots[i].first) && std::isfinite(knots[i].second)))
      fail(errc::validation, "profile table entries must be finite");
    if (!(knots[i].second > 0.0))
      fail(errc::validation, "profile table capacitance must be > 0 at every knot");
    if (i > 0 && !(knots[i].first > knots[i - 1].first))
      fail(errc::validation, "profile table x values must be strictly increasing");
  }
  CapacitanceProfile p;
  p.analytic_ = false;
  p.knots_ = std::move(knots);
  auto [lo, hi] = std::minmax_element(
      p.knots_.begin(), p.knots_.end(),
      [](const auto& a, const auto& b) { return a.second < b.second; });
  p.c_min_ = lo->second;
  p.c_max_ = hi->second;
  p.x_span_ = std::max(std::abs(p.knots_.front().first), std::abs(p.knots_.back().first));
  return p;
}

CapacitanceProfile CapacitanceProfile::table_from_csv(const std::string& path) {
  const std::string text = textio::read_file(path);
  std::istringstream in(text);
  std::vector<std::pair<double, double>> knots;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = textio::trim(line);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      fail(errc::parse, path + ":" + std::to_string(lineno) + ": expected 'x,capacitance'");
    const std::string where = path + ":" + std::to_string(lineno);
    const double x = textio::parse_double(line.substr(0, comma), where);
    const double c = textio::parse_double(line.substr(comma + 1), where);
    knots.emplace_back(x, c);
  }
  if (knots.empty()) fail(errc::validation, path + ": profile table is empty");
  return table(std::move(knots));
}

double CapacitanceProfile::value(double x) const {
  if (analytic_) {
    const double frac = std::min(std::abs(x) / x_span_, 1.0);
    return c_max_ - (c_max_ - c_min_) * frac;
  }
  if (x <= knots_.front().first) return knots_.front().second;
  if (x >= knots_.back().first) return knots_.back().second;
  auto it = std::upper_bound(knots_.begin(), knots_.end(), x,
                             [](double v, const auto& k) { return v < k.first; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double t = (x - lo.first) / (hi.first - lo.first);
  return lo.second + t * (hi.second - lo.second);
}

double CapacitanceProfile::slope(double x) const {
  if (analytic_) {
    const double k = (c_max_ - c_min_) / x_span_;
    if (x >= x_span_ || x < -x_span_) return 0.0;
    return x >= 0.0 ? -k : k;
  }
  if (x < knots_.front().first || x >= knots_.back().first) return 0.0;
  auto it = std::upper_bound(knots_.begin(), knots_.end(), x,
                             [](double v, const auto& k) { return v < k.first; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  return (hi.second - lo.second) / (hi.first - lo.first);
}

bool CapacitanceProfile::interior_peak() const {
  if (analytic_) return true;
  const auto peak = std::max_element(
      knots_.begin(), knots_.end(),
      [](const auto& a, const auto& b) { return a.second < b.second; });
  return peak != knots_.begin() && peak != knots_.end() - 1;
}

double electrostatic_force(const CapacitanceProfile& profile, double x, double v_var) {
  return 0.5 * v_var * v_var * profile.slope(x);
}

void MechParams::validate() const {
  const auto positive = [](double v, const char* name) {
    if (!(std::isfinite(v) && v > 0.0))
      fail(errc::validation, std::string(name) + " must be finite and > 0");
  };
  positive(mass, "mass");
  positive(stiffness, "stiffness");
  positive(damping, "damping");
  positive(accel_amplitude, "accel_amplitude");
  positive(drive_freq, "drive_freq");
}

double external_force(const MechParams& m, double t) {
  return m.mass * m.accel_amplitude * std::sin(2.0 * std::numbers::pi * m.drive_freq * t);
}

double resonant_frequency_hz(const MechParams& m) {
  return std::sqrt(m.stiffness / m.mass) / (2.0 * std::numbers::pi);
}

}  // namespace harvsim::transducer
