#pragma once

#include "spinchill/model.hpp"

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <optional>
#include <string>
#include <vector>

namespace spinchill {

using Mat4 = Eigen::Matrix4d;
using Vec4 = Eigen::Vector4d;

/// Segment-level replacement of the spin damping and frequency (pulse schedules).
struct SpinOverride {
    double gamma_s = 0.0;
    double omega_s = 0.0;
};

/// Rotating-frame drift matrix M (dx/dt = -M x + noise), state ordered
/// (X~_m, P~_m, X~_s, P~_s), frame rotating at Omega_m.
struct DynamicalMatrix {
    struct Source {
        double gamma_m = 0.0;
        double gamma_s = 0.0;
        double g = 0.0;
        double delta = 0.0;
        double phase = 0.0;    // Omega_m * tau
        double omega_m = 0.0;  // frame rotation frequency
    };

    Mat4 m = Mat4::Zero();
    Source built_from;
    /// Conditions under which the rotating-wave / small-delay reduction degrades.
    std::vector<std::string> warnings;
};

/// Builds M from the coupled system. The coupling entries use Omega_m * tau in
/// both the membrane and the spin rows.
DynamicalMatrix build_matrix(const CoupledSystem& system,
                             const std::optional<SpinOverride>& overrides = std::nullopt);

/// exp(-M dt).
Mat4 step_propagator(const DynamicalMatrix& matrix, double dt);

/// Eigenvalues of -M sorted by real part (descending), ties broken by
/// imaginary part (descending).
std::array<std::complex<double>, 4> eigenvalues(const DynamicalMatrix& matrix);

/// Coefficients of the delayed characteristic polynomial after replacing
/// exp(-2 s tau) by its Taylor polynomial of the given order.
struct CharPoly {
    std::vector<double> coefficients;  // coefficients[k] multiplies s^k
    int expansion_order = 1;

    int degree() const { return static_cast<int>(coefficients.size()) - 1; }
    double a(int k) const
    {
        return (k >= 0 && k <= degree()) ? coefficients[static_cast<std::size_t>(k)] : 0.0;
    }
};

inline constexpr int kMaxExpansionOrder = 6;

/// (s^2 + gamma_m s + Omega_m^2)(s^2 + gamma_s s + Omega_s^2)
///   - 4 g^2 Omega_m Omega_s T_order(-2 s tau).
/// Degree is max(4, order). Throws std::invalid_argument for order outside [1, 6].
CharPoly char_poly(const CoupledSystem& system, int order);

/// The exact (untruncated) characteristic function evaluated at complex s.
std::complex<double> characteristic_function(const CoupledSystem& system, std::complex<double> s);

}  // namespace spinchill
