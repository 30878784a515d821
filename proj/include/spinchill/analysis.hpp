#pragma once

#include "spinchill/dynamics.hpp"
#include "spinchill/model.hpp"
#include "spinchill/simulator.hpp"

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

namespace spinchill {

/// Weak-coupling view of the spin as an extra damping and stiffness on the membrane.
struct CoolingPrediction {
    double gamma_sym = 0.0;        // rad/s, may be negative
    double domega_shift_sq = 0.0;  // rad^2/s^2
    /// n_bath gamma_m / (gamma_m + gamma_sym); empty when gamma_m + gamma_sym <= 0.
    std::optional<double> n_ss_asymptotic;
    bool full_formula = false;
};

/// Rate and shift from chi_m,eff at omega = Omega_m, keeping the (Omega_s^2 - Omega_m^2) structure.
CoolingPrediction sympathetic_rate_full(const CoupledSystem& system);

/// Near-resonant form:
///   gamma_sym = 4 g^2 / (4 delta^2 + gamma_s^2) [gamma_s cos 2 Omega_m tau + 2 delta sin 2 Omega_m tau]
CoolingPrediction sympathetic_rate_simplified(const CoupledSystem& system);

struct AsymptoticOccupation {
    double value = 0.0;  // +inf when diverging
    bool diverges = false;
};

/// n_bath gamma_m / (gamma_m + gamma_sym) with the near-resonant gamma_sym.
AsymptoticOccupation steady_state_asymptotic(const CoupledSystem& system);

struct LyapunovSteadyState {
    Mat4 covariance = Mat4::Zero();
    double n_membrane = 0.0;
    double n_spin = 0.0;
    double residual = 0.0;  // ||M S + S M^T - D|| / ||D||
};

/// Stationary covariance of the rotating-frame dynamics, M S + S M^T = D, with the
/// simulator's diffusion matrix. Throws InstabilityError when -M has an eigenvalue
/// with non-negative real part, NumericalError when the residual exceeds 1e-10 ||D||.
LyapunovSteadyState steady_state_lyapunov(const CoupledSystem& system, const NoiseSpec& noise,
                                          const std::optional<SpinOverride>& overrides = std::nullopt);

struct StabilityVerdict {
    int order = 4;
    int degree = 4;
    std::vector<double> minors;  // leading principal minors of the scaled Hurwitz matrix
    bool coefficients_positive = false;
    bool stable = false;         // Hurwitz verdict
    double max_root_real = 0.0;  // rad/s, largest real part among polynomial roots
    bool agreement = true;       // stable == (max_root_real < 0)
};

/// Routh-Hurwitz test of the Taylor-expanded delayed characteristic polynomial, with a
/// companion-matrix root cross-check. Throws NumericalError for a vanishing polynomial.
StabilityVerdict stability(const CoupledSystem& system, int order = 4);

/// Hurwitz matrix H_ij = a_(n - 2j + i) (1-based) of a polynomial given in ascending powers.
Eigen::MatrixXd hurwitz_matrix(const std::vector<double>& coefficients);

/// Roots of a polynomial in ascending powers (companion matrix plus Newton polishing).
std::vector<std::complex<double>> polynomial_roots(const std::vector<double>& coefficients);

struct StabilityMapSpec {
    CoupledSystem base;
    std::vector<double> deltas;    // rad/s, Omega_s = Omega_m + delta
    std::vector<double> gamma_s;   // rad/s, ascending
    std::vector<double> taus;      // s
    int order = 4;
    int threads = 0;
    double boundary_tolerance = 1e-3;  // relative, in gamma_s
};

struct StabilityPlane {
    double tau = 0.0;
    /// Row-major [delta][gamma_s].
    std::vector<std::uint8_t> stable;
    std::vector<std::uint8_t> roots_stable;
    /// Smallest gamma_s above which the point turns stable, per delta; empty when the
    /// scanned column never changes verdict from unstable to stable.
    std::vector<std::optional<double>> boundary;
    /// Number of stable -> unstable flips with increasing gamma_s, per delta.
    std::vector<int> reentrant_flips;
    std::size_t disagreements = 0;

    std::size_t stable_count() const;
};

struct StabilityMap {
    std::vector<double> deltas;
    std::vector<double> gamma_s;
    std::vector<StabilityPlane> planes;

    bool stable(std::size_t plane, std::size_t i_delta, std::size_t j_gamma) const
    {
        return planes[plane].stable[i_delta * gamma_s.size() + j_gamma] != 0;
    }
};

/// Hurwitz verdicts on the (delta, gamma_s) grid for every delay, plus the stability
/// boundary in gamma_s at each delta located by bisection.
StabilityMap stability_map(const StabilityMapSpec& spec);

}  // namespace spinchill
