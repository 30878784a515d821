#include "spinchill/analysis.hpp"

#include "spinchill/errors.hpp"
#include "spinchill/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace spinchill {

namespace {

std::optional<double> asymptotic_occupation(const CoupledSystem& system, double gamma_sym)
{
    const double total = system.membrane.gamma + gamma_sym;
    if (!(total > 0.0))
        return std::nullopt;
    return system.membrane.n_bath * system.membrane.gamma / total;
}

}  // namespace

CoolingPrediction sympathetic_rate_full(const CoupledSystem& system)
{
    const double om = system.membrane.omega;
    const double os = system.spin.omega;
    const double gs = system.spin.gamma;
    const double g = system.g;
    const double split = (os - om) * (os + om);  // Omega_s^2 - Omega_m^2
    const double phase = 2.0 * om * system.tau;
    const double c = std::cos(phase);
    const double s = std::sin(phase);

    const double prefactor = 4.0 * g * g * om * os / (split * split + (om * gs) * (om * gs));
    CoolingPrediction out;
    out.full_formula = true;
    out.gamma_sym = prefactor * (gs * c + split / om * s);
    out.domega_shift_sq = prefactor * (split * c - om * gs * s);
    out.n_ss_asymptotic = asymptotic_occupation(system, out.gamma_sym);
    return out;
}

CoolingPrediction sympathetic_rate_simplified(const CoupledSystem& system)
{
    const double delta = system.detuning();
    const double gs = system.spin.gamma;
    const double g = system.g;
    const double phase = 2.0 * system.membrane.omega * system.tau;
    const double c = std::cos(phase);
    const double s = std::sin(phase);

    const double prefactor = 4.0 * g * g / (4.0 * delta * delta + gs * gs);
    CoolingPrediction out;
    out.gamma_sym = prefactor * (gs * c + 2.0 * delta * s);
    out.domega_shift_sq = prefactor * system.membrane.omega * (2.0 * delta * c - gs * s);
    out.n_ss_asymptotic = asymptotic_occupation(system, out.gamma_sym);
    return out;
}

AsymptoticOccupation steady_state_asymptotic(const CoupledSystem& system)
{
    const auto rate = sympathetic_rate_simplified(system);
    if (!rate.n_ss_asymptotic)
        return {std::numeric_limits<double>::infinity(), true};
    return {*rate.n_ss_asymptotic, false};
}

LyapunovSteadyState steady_state_lyapunov(const CoupledSystem& system, const NoiseSpec& noise,
                                          const std::optional<SpinOverride>& overrides)
{
    const auto matrix = build_matrix(system, overrides);
    const auto ev = eigenvalues(matrix);
    if (ev[0].real() >= 0.0) {
        std::ostringstream os;
        os << "steady state refused: dynamics unstable, eigenvalues of -M (Hz):";
        for (const auto& z : ev)
            os << " (" << to_hz(z.real()) << (z.imag() < 0 ? " - " : " + ") << std::abs(to_hz(z.imag())) << "i)";
        throw InstabilityError(os.str(), ev[0].real());
    }

    const Mat4& m = matrix.m;
    const Mat4 d = diffusion_matrix(matrix, noise);

    // Column-major vec: vec(M S + S M^T) = (I (x) M + M (x) I) vec(S).
    Eigen::Matrix<double, 16, 16> k = Eigen::Matrix<double, 16, 16>::Zero();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            for (int l = 0; l < 4; ++l) {
                k(i + 4 * j, l + 4 * j) += m(i, l);
                k(i + 4 * j, i + 4 * l) += m(j, l);
            }
    const Eigen::Matrix<double, 16, 1> rhs = Eigen::Map<const Eigen::Matrix<double, 16, 1>>(d.data());
    const Eigen::Matrix<double, 16, 1> sol = k.fullPivLu().solve(rhs);

    LyapunovSteadyState out;
    out.covariance = Eigen::Map<const Mat4>(sol.data());
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    const double dnorm = d.norm();
    const double rnorm = (m * out.covariance + out.covariance * m.transpose() - d).norm();
    out.residual = dnorm > 0.0 ? rnorm / dnorm : rnorm;
    if (out.residual > 1e-10)
        throw NumericalError("Lyapunov solve residual too large: " + std::to_string(out.residual));

    out.n_membrane = 0.5 * (out.covariance(0, 0) + out.covariance(1, 1)) - 0.5;
    out.n_spin = 0.5 * (out.covariance(2, 2) + out.covariance(3, 3)) - 0.5;
    return out;
}

Eigen::MatrixXd hurwitz_matrix(const std::vector<double>& a)
{
    const int n = static_cast<int>(a.size()) - 1;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(std::max(n, 0), std::max(n, 0));
    for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= n; ++j) {
            const int k = n - 2 * j + i;
            if (k >= 0 && k <= n)
                h(i - 1, j - 1) = a[static_cast<std::size_t>(k)];
        }
    return h;
}

namespace {

using LongMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LongComplex = std::complex<long double>;

std::vector<double> trimmed(std::vector<double> a)
{
    while (!a.empty() && a.back() == 0.0)
        a.pop_back();
    return a;
}

LongComplex horner(const std::vector<long double>& b, LongComplex z, LongComplex& derivative)
{
    LongComplex p = 0.0L;
    derivative = 0.0L;
    for (auto it = b.rbegin(); it != b.rend(); ++it) {
        derivative = derivative * z + p;
        p = p * z + *it;
    }
    return p;
}

long double determinant(LongMatrix a)
{
    const auto n = a.rows();
    long double det = 1.0L;
    for (Eigen::Index c = 0; c < n; ++c) {
        Eigen::Index pivot = c;
        for (Eigen::Index r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(pivot, c)))
                pivot = r;
        if (a(pivot, c) == 0.0L)
            return 0.0L;
        if (pivot != c) {
            a.row(pivot).swap(a.row(c));
            det = -det;
        }
        det *= a(c, c);
        for (Eigen::Index r = c + 1; r < n; ++r) {
            const long double f = a(r, c) / a(c, c);
            a.row(r).tail(n - c) -= f * a.row(c).tail(n - c);
        }
    }
    return det;
}

}  // namespace

std::vector<std::complex<double>> polynomial_roots(const std::vector<double>& coefficients)
{
    const auto a = trimmed(coefficients);
    if (a.size() < 2)
        return {};
    const int n = static_cast<int>(a.size()) - 1;

    // Rescale s = rho z so the roots of the monic polynomial in z have unit geometric mean.
    long double rho = 1.0L;
    if (a.front() != 0.0)
        rho = std::pow(std::abs(static_cast<long double>(a.front()) / a.back()), 1.0L / n);
    std::vector<long double> b(a.size());
    for (int k = 0; k <= n; ++k)
        b[static_cast<std::size_t>(k)] = a[static_cast<std::size_t>(k)] * std::pow(rho, k - n) / a.back();

    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i)
        companion(i, i - 1) = 1.0;
    for (int i = 0; i < n; ++i)
        companion(i, n - 1) = -static_cast<double>(b[static_cast<std::size_t>(i)]);
    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);

    std::vector<std::complex<double>> roots;
    roots.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        LongComplex z(solver.eigenvalues()[i].real(), solver.eigenvalues()[i].imag());
        LongComplex dp;
        long double best = std::abs(horner(b, z, dp));
        for (int it = 0; it < 8 && best > 0.0L; ++it) {
            if (dp == LongComplex(0.0L))
                break;
            const LongComplex trial = z - horner(b, z, dp) / dp;
            LongComplex dtrial;
            const long double value = std::abs(horner(b, trial, dtrial));
            if (!(value < best))
                break;
            z = trial;
            best = value;
            horner(b, z, dp);
        }
        roots.emplace_back(static_cast<double>(z.real() * rho), static_cast<double>(z.imag() * rho));
    }
    return roots;
}

StabilityVerdict stability(const CoupledSystem& system, int order)
{
    const auto poly = char_poly(system, order);
    const auto a = trimmed(poly.coefficients);
    if (a.size() < 2)
        throw NumericalError("stability: degenerate characteristic polynomial");
    const int n = static_cast<int>(a.size()) - 1;

    // Monic in the dimensionless variable s / Omega_m (sign of the top coefficient kept).
    const long double scale = system.membrane.omega;
    const long double top = std::abs(static_cast<long double>(a.back()));
    std::vector<long double> b(a.size());
    bool positive = true;
    for (int k = 0; k <= n; ++k) {
        b[static_cast<std::size_t>(k)] = a[static_cast<std::size_t>(k)] * std::pow(scale, k - n) / top;
        positive = positive && b[static_cast<std::size_t>(k)] > 0.0L;
    }

    LongMatrix h = LongMatrix::Zero(n, n);
    for (int i = 1; i <= n; ++i)
        for (int j = 1; j <= n; ++j) {
            const int k = n - 2 * j + i;
            if (k >= 0 && k <= n)
                h(i - 1, j - 1) = b[static_cast<std::size_t>(k)];
        }

    StabilityVerdict out;
    out.order = order;
    out.degree = n;
    out.coefficients_positive = positive;
    bool minors_positive = true;
    for (int k = 1; k <= n; ++k) {
        const long double minor = determinant(h.topLeftCorner(k, k));
        out.minors.push_back(static_cast<double>(minor));
        minors_positive = minors_positive && minor > 0.0L;
    }
    out.stable = positive && minors_positive;

    out.max_root_real = -std::numeric_limits<double>::infinity();
    for (const auto& r : polynomial_roots(a))
        out.max_root_real = std::max(out.max_root_real, r.real());
    out.agreement = out.stable == (out.max_root_real < 0.0);
    return out;
}

std::size_t StabilityPlane::stable_count() const
{
    return static_cast<std::size_t>(std::count(stable.begin(), stable.end(), std::uint8_t{1}));
}

namespace {

CoupledSystem grid_point(const CoupledSystem& base, double delta, double gamma_s, double tau)
{
    CoupledSystem sys = base;
    sys.spin.omega = base.membrane.omega + delta;
    sys.spin.gamma = gamma_s;
    sys.tau = tau;
    return sys;
}

}  // namespace

StabilityMap stability_map(const StabilityMapSpec& spec)
{
    if (spec.deltas.empty() || spec.gamma_s.empty() || spec.taus.empty())
        throw std::invalid_argument("stability_map: empty grid");
    if (!std::is_sorted(spec.gamma_s.begin(), spec.gamma_s.end()))
        throw std::invalid_argument("stability_map: gamma_s grid must be ascending");

    const std::size_t nd = spec.deltas.size();
    const std::size_t ng = spec.gamma_s.size();
    const std::size_t per_plane = nd * ng;

    StabilityMap out;
    out.deltas = spec.deltas;
    out.gamma_s = spec.gamma_s;
    out.planes.resize(spec.taus.size());
    for (std::size_t p = 0; p < spec.taus.size(); ++p) {
        auto& plane = out.planes[p];
        plane.tau = spec.taus[p];
        plane.stable.assign(per_plane, 0);
        plane.roots_stable.assign(per_plane, 0);
        plane.boundary.assign(nd, std::nullopt);
        plane.reentrant_flips.assign(nd, 0);
    }

    parallel_for(per_plane * spec.taus.size(), spec.threads, [&](std::size_t idx) {
        const std::size_t p = idx / per_plane;
        const std::size_t cell = idx % per_plane;
        const auto sys = grid_point(spec.base, spec.deltas[cell / ng], spec.gamma_s[cell % ng], spec.taus[p]);
        const auto verdict = stability(sys, spec.order);
        out.planes[p].stable[cell] = verdict.stable ? 1 : 0;
        out.planes[p].roots_stable[cell] = verdict.max_root_real < 0.0 ? 1 : 0;
    });

    parallel_for(nd * spec.taus.size(), spec.threads, [&](std::size_t idx) {
        const std::size_t p = idx / nd;
        const std::size_t i = idx % nd;
        auto& plane = out.planes[p];
        const std::uint8_t* col = plane.stable.data() + i * ng;
        for (std::size_t j = 1; j < ng; ++j) {
            if (col[j - 1] && !col[j])
                ++plane.reentrant_flips[i];
            if (plane.boundary[i] || col[j - 1] || !col[j])
                continue;
            double lo = spec.gamma_s[j - 1];
            double hi = spec.gamma_s[j];
            while (hi - lo > spec.boundary_tolerance * hi) {
                const double mid = 0.5 * (lo + hi);
                const auto sys = grid_point(spec.base, spec.deltas[i], mid, plane.tau);
                (stability(sys, spec.order).stable ? hi : lo) = mid;
            }
            plane.boundary[i] = 0.5 * (lo + hi);
        }
    });

    for (auto& plane : out.planes)
        for (std::size_t c = 0; c < per_plane; ++c)
            plane.disagreements += plane.stable[c] != plane.roots_stable[c] ? 1 : 0;
    return out;
}

}  // namespace spinchill
