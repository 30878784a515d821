#include "spinchill/dynamics.hpp"

#include "spinchill/expm.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace spinchill {

namespace {

constexpr double kRwaLimit = 0.1;

void check_rwa(const CoupledSystem& system, double gamma_s, double delta, std::vector<std::string>& warnings)
{
    const double tau = system.tau;
    auto warn = [&](const char* what, double ratio) {
        std::ostringstream os;
        os << what << " (ratio " << ratio << ")";
        warnings.push_back(os.str());
    };
    if (tau * system.g > kRwaLimit)
        warn("delay not small against 1/g", tau * system.g);
    if (tau * gamma_s > kRwaLimit)
        warn("delay not small against 1/gamma_s", tau * gamma_s);
    if (tau * std::abs(delta) > kRwaLimit)
        warn("delay not small against 1/|delta|", tau * std::abs(delta));

    const double omega_m = system.membrane.omega;
    const double fastest = std::max({system.g, gamma_s, system.membrane.gamma, std::abs(delta)});
    if (fastest > kRwaLimit * omega_m)
        warn("rates not small against Omega_m", fastest / omega_m);
}

}  // namespace

DynamicalMatrix build_matrix(const CoupledSystem& system, const std::optional<SpinOverride>& overrides)
{
    const double gamma_m = system.membrane.gamma;
    const double gamma_s = overrides ? overrides->gamma_s : system.spin.gamma;
    const double omega_s = overrides ? overrides->omega_s : system.spin.omega;
    const double omega_m = system.membrane.omega;
    const double delta = omega_s - omega_m;
    const double g = system.g;
    const double phase = omega_m * system.tau;

    for (double v : {gamma_m, gamma_s, omega_s, omega_m, g, phase}) {
        if (!std::isfinite(v))
            throw std::invalid_argument("build_matrix: non-finite parameter");
    }

    const double gs = g * std::sin(phase);
    const double gc = g * std::cos(phase);

    DynamicalMatrix out;
    // clang-format off
    out.m << gamma_m / 2, 0.0,         -gs,          -gc,
             0.0,         gamma_m / 2,  gc,          -gs,
             -gs,         -gc,          gamma_s / 2, -delta,
             gc,          -gs,          delta,       gamma_s / 2;
    // clang-format on
    out.built_from = {gamma_m, gamma_s, g, delta, phase, omega_m};
    check_rwa(system, gamma_s, delta, out.warnings);
    return out;
}

Mat4 step_propagator(const DynamicalMatrix& matrix, double dt)
{
    if (dt < 0.0)
        throw std::invalid_argument("step_propagator: negative time step");
    if (dt == 0.0)
        return Mat4::Identity();
    return expm(Mat4(-matrix.m * dt));
}

std::array<std::complex<double>, 4> eigenvalues(const DynamicalMatrix& matrix)
{
    Eigen::EigenSolver<Mat4> solver(-matrix.m, false);
    std::array<std::complex<double>, 4> ev;
    for (int i = 0; i < 4; ++i)
        ev[static_cast<std::size_t>(i)] = solver.eigenvalues()[i];

    // Conjugate pairs can carry real parts that differ in the last bits, so
    // real parts are compared with a tolerance scaled to the spectrum.
    double scale = 0.0;
    for (const auto& z : ev)
        scale = std::max(scale, std::abs(z));
    const double tol = 1e-12 * std::max(scale, 1e-300);
    std::sort(ev.begin(), ev.end(), [tol](const auto& a, const auto& b) {
        if (std::abs(a.real() - b.real()) > tol)
            return a.real() > b.real();
        return a.imag() > b.imag();
    });
    return ev;
}

CharPoly char_poly(const CoupledSystem& system, int order)
{
    if (order < 1 || order > kMaxExpansionOrder)
        throw std::invalid_argument("char_poly: expansion order must be in [1, 6]");

    const double om = system.membrane.omega;
    const double os = system.spin.omega;
    const double gm = system.membrane.gamma;
    const double gs = system.spin.gamma;

    // (s^2 + gm s + om^2)(s^2 + gs s + os^2), ascending powers.
    const std::array<double, 3> pm{om * om, gm, 1.0};
    const std::array<double, 3> ps{os * os, gs, 1.0};

    CharPoly poly;
    poly.expansion_order = order;
    poly.coefficients.assign(static_cast<std::size_t>(std::max(4, order) + 1), 0.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            poly.coefficients[i + j] += pm[i] * ps[j];

    // exp(-2 s tau) ~ sum_k (-2 tau)^k s^k / k!
    const double coupling = 4.0 * system.g * system.g * om * os;
    double term = 1.0;
    for (int k = 0; k <= order; ++k) {
        if (k > 0)
            term *= -2.0 * system.tau / k;
        poly.coefficients[static_cast<std::size_t>(k)] -= coupling * term;
    }
    return poly;
}

std::complex<double> characteristic_function(const CoupledSystem& system, std::complex<double> s)
{
    const double om = system.membrane.omega;
    const double os = system.spin.omega;
    const auto pm = s * s + system.membrane.gamma * s + om * om;
    const auto ps = s * s + system.spin.gamma * s + os * os;
    return pm * ps - 4.0 * system.g * system.g * om * os * std::exp(-2.0 * s * system.tau);
}

}  // namespace spinchill
