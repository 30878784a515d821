#include "spinchill/model.hpp"

#include <cmath>
#include <limits>

namespace spinchill {

double OscillatorParams::quality_factor() const
{
    if (gamma == 0.0)
        return std::numeric_limits<double>::infinity();
    return omega / gamma;
}

std::string_view to_string(ViolationCode code)
{
    switch (code) {
    case ViolationCode::NonFinite: return "non_finite";
    case ViolationCode::OmegaNotPositive: return "omega_not_positive";
    case ViolationCode::GammaNegative: return "gamma_negative";
    case ViolationCode::NBathNegative: return "n_bath_negative";
    case ViolationCode::CouplingNegative: return "coupling_negative";
    case ViolationCode::DelayNegative: return "delay_negative";
    case ViolationCode::EtaSqOutOfRange: return "eta_sq_out_of_range";
    case ViolationCode::MeasurementRateNegative: return "measurement_rate_negative";
    case ViolationCode::CalibrationNotPositive: return "calibration_not_positive";
    case ViolationCode::ZeroPointMismatch: return "zero_point_mismatch";
    }
    return "unknown";
}

namespace {

void check_oscillator(const OscillatorParams& osc, const std::string& prefix,
                      std::vector<Violation>& out)
{
    auto field = [&](const char* name) { return prefix + "." + name; };
    if (!std::isfinite(osc.omega) || !std::isfinite(osc.gamma) || !std::isfinite(osc.n_bath))
        out.push_back({ViolationCode::NonFinite, prefix, "non-finite parameter"});
    if (!(osc.omega > 0.0))
        out.push_back({ViolationCode::OmegaNotPositive, field("omega"), "omega not positive"});
    if (osc.gamma < 0.0)
        out.push_back({ViolationCode::GammaNegative, field("gamma"), "gamma negative"});
    if (osc.n_bath < 0.0)
        out.push_back({ViolationCode::NBathNegative, field("n_bath"), "n_bath negative"});
}

}  // namespace

std::vector<Violation> validate(const CoupledSystem& system)
{
    std::vector<Violation> out;
    check_oscillator(system.membrane, "membrane", out);
    check_oscillator(system.spin, "spin", out);

    for (double v : {system.g, system.tau, system.eta_sq, system.gamma_meas_m, system.gamma_meas_s}) {
        if (!std::isfinite(v)) {
            out.push_back({ViolationCode::NonFinite, "system", "non-finite parameter"});
            break;
        }
    }
    if (system.g < 0.0)
        out.push_back({ViolationCode::CouplingNegative, "g", "g negative"});
    if (system.tau < 0.0)
        out.push_back({ViolationCode::DelayNegative, "tau", "tau negative"});
    if (!(system.eta_sq > 0.0 && system.eta_sq <= 1.0))
        out.push_back({ViolationCode::EtaSqOutOfRange, "eta_sq", "eta_sq out of range"});
    if (system.gamma_meas_m < 0.0)
        out.push_back({ViolationCode::MeasurementRateNegative, "gamma_meas_m", "measurement rate negative"});
    if (system.gamma_meas_s < 0.0)
        out.push_back({ViolationCode::MeasurementRateNegative, "gamma_meas_s", "measurement rate negative"});
    return out;
}

double thermal_occupation(double temperature, double omega)
{
    if (temperature <= 0.0)
        return 0.0;
    const double x = kHbar * omega / (kBoltzmann * temperature);
    return 1.0 / std::expm1(x);
}

std::vector<Violation> validate(const CalibrationParams& calib, double omega_m)
{
    std::vector<Violation> out;
    auto positive = [&](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            out.push_back({ViolationCode::CalibrationNotPositive, name, std::string(name) + " not positive"});
    };
    positive(calib.alpha1, "alpha1");
    positive(calib.n_atoms, "n_atoms");
    positive(calib.kappa, "kappa");
    positive(calib.g0, "g0");
    positive(calib.v0, "v0");
    if (!(calib.eta_c > 0.0 && calib.eta_c <= 1.0))
        out.push_back({ViolationCode::CalibrationNotPositive, "eta_c", "eta_c out of range"});

    if (calib.x_zpf && calib.m_eff) {
        const double expected = std::sqrt(kHbar / (2.0 * *calib.m_eff * omega_m));
        if (std::abs(*calib.x_zpf - expected) > 1e-9 * expected)
            out.push_back({ViolationCode::ZeroPointMismatch, "x_zpf",
                           "x_zpf inconsistent with m_eff and omega_m"});
    }
    return out;
}

CalibratedOccupation spin_occupation_from_faraday(double theta_bar, const CalibrationParams& calib)
{
    const double n = 2.0 * theta_bar * theta_bar / (calib.alpha1 * calib.alpha1 * calib.n_atoms) - 0.5;
    return {n, n < 0.0};
}

CalibratedOccupation membrane_occupation_from_voltage(double v_rms, const CalibrationParams& calib)
{
    const double ratio = (v_rms / (calib.eta_c * calib.v0)) * (calib.kappa / (2.0 * calib.g0));
    const double n = ratio * ratio - 0.5;
    return {n, n < 0.0};
}

}  // namespace spinchill
