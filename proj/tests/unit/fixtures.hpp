#pragma once

#include "spinchill/model.hpp"

#include <cmath>

namespace spinchill::testing {

// Continuous-cooling parameters: 2g = 2pi x 6.8 kHz, membrane at 1.957 MHz.
inline CoupledSystem cooling_system(double tau = 15e-9)
{
    CoupledSystem s;
    s.membrane = {from_hz(1.957e6), from_hz(262.0), 2.0e4};
    s.spin = {from_hz(1.957e6), from_hz(2.2e3), 0.0};
    s.g = from_hz(3.4e3);
    s.tau = tau;
    s.eta_sq = 0.8;
    return s;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace spinchill::testing
