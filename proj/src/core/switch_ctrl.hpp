#pragma once

#include <cmath>
#include <cstdint>

#include "core/error.hpp"

namespace harvsim::switch_ctrl {

enum class State : std::uint8_t { off = 0, on = 1 };

// Hysteresis band for the flyback switch. v2 may be +inf to disable the
// switch entirely.
struct Thresholds {
  double v1 = 6.5;
  double v2 = 13.0;

  void validate() const {
    if (std::isnan(v1) || std::isnan(v2)) fail(errc::validation, "thresholds must not be NaN");
    if (!(v1 > 0.0)) fail(errc::validation, "v1 must be > 0");
    if (!(v1 < v2)) fail(errc::validation, "thresholds need v1 < v2");
  }
};

// Pure transition function. The controller observes only the store voltage:
// Off turns On at v_store >= v2, On turns Off at v_store <= v1, both
// inclusive; anywhere inside the band the state is held.
constexpr State step(State s, double v_store, const Thresholds& th) {
  if (s == State::off) return v_store >= th.v2 ? State::on : State::off;
  return v_store <= th.v1 ? State::off : State::on;
}

}  // namespace harvsim::switch_ctrl
