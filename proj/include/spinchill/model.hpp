#pragma once

#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace spinchill {

// CODATA 2018 exact values.
inline constexpr double kHbar = 1.054571817e-34;     // J s
inline constexpr double kBoltzmann = 1.380649e-23;   // J / K
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Converts a frequency quoted in Hz to angular units (rad/s).
constexpr double from_hz(double hz) { return kTwoPi * hz; }
/// Converts an angular frequency (rad/s) back to Hz.
constexpr double to_hz(double omega) { return omega / kTwoPi; }

/// One damped harmonic oscillator coupled to a thermal bath.
/// All rates are angular (rad/s); gamma is the energy damping rate.
struct OscillatorParams {
    double omega = 0.0;
    double gamma = 0.0;
    double n_bath = 0.0;

    /// omega / gamma; infinite for an undamped oscillator.
    double quality_factor() const;

    bool operator==(const OscillatorParams&) const = default;
};

/// Membrane and spin oscillators joined by the delayed light-mediated coupling.
struct CoupledSystem {
    OscillatorParams membrane;
    OscillatorParams spin;
    double g = 0.0;             // coupling rate, rad/s
    double tau = 0.0;           // propagation delay, s
    double eta_sq = 0.8;        // optical power transmission between spin and membrane
    double gamma_meas_m = 0.0;  // measurement rate of the membrane, rad/s
    double gamma_meas_s = 0.0;  // measurement rate of the spin, rad/s

    /// delta = Omega_s - Omega_m; may be negative.
    double detuning() const { return spin.omega - membrane.omega; }

    bool operator==(const CoupledSystem&) const = default;
};

enum class ViolationCode {
    NonFinite,
    OmegaNotPositive,
    GammaNegative,
    NBathNegative,
    CouplingNegative,
    DelayNegative,
    EtaSqOutOfRange,
    MeasurementRateNegative,
    CalibrationNotPositive,
    ZeroPointMismatch,
};

std::string_view to_string(ViolationCode code);

struct Violation {
    ViolationCode code;
    std::string field;    // dotted path, e.g. "membrane.gamma"
    std::string message;  // human-readable, e.g. "gamma negative"
};

/// Lists every violated invariant; an empty result means the system is valid.
std::vector<Violation> validate(const CoupledSystem& system);

/// Bose-Einstein occupation 1 / (exp(hbar omega / k_B T) - 1); zero at T = 0.
double thermal_occupation(double temperature, double omega);

/// Detector and ensemble constants used to convert raw signals into occupations.
struct CalibrationParams {
    double alpha1 = 0.0;   // vector polarizability per atom, rad
    double n_atoms = 0.0;
    double kappa = 0.0;    // cavity linewidth, rad/s
    double g0 = 0.0;       // vacuum optomechanical coupling, rad/s
    double eta_c = 1.0;    // cavity coupling efficiency
    double v0 = 0.0;       // homodyne fringe amplitude, V
    std::optional<double> x_zpf;  // m
    std::optional<double> m_eff;  // kg
};

/// Checks positivity and, when both are supplied, x_zpf = sqrt(hbar / (2 m_eff omega_m))
/// to relative tolerance 1e-9.
std::vector<Violation> validate(const CalibrationParams& calib, double omega_m);

/// An occupation converted from a measured signal. Readings below the ground
/// state are returned unclamped and flagged.
struct CalibratedOccupation {
    double value = 0.0;
    bool sub_ground = false;
};

/// n_s + 1/2 = 2 theta^2 / (alpha1^2 N_a).
CalibratedOccupation spin_occupation_from_faraday(double theta_bar, const CalibrationParams& calib);

/// n_m + 1/2 = (v_rms / (eta_c V0))^2 (kappa / 2 g0)^2, with v_rms already
/// corrected for impedance mismatch.
CalibratedOccupation membrane_occupation_from_voltage(double v_rms, const CalibrationParams& calib);

}  // namespace spinchill
