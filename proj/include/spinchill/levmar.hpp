#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace spinchill {

struct LmOptions {
    int max_iterations = 500;
    double xtol = 1e-8;   // relative step, in Marquardt-scaled coordinates
    double ftol = 1e-10;  // relative cost reduction
    double initial_damping = 1e-3;
    double max_damping = 1e16;
};

enum class LmStatus { StepConverged, CostConverged, MaxIterations, DampingExhausted, NonFinite };

inline const char* to_string(LmStatus status)
{
    switch (status) {
    case LmStatus::StepConverged: return "step converged";
    case LmStatus::CostConverged: return "cost converged";
    case LmStatus::MaxIterations: return "max iterations";
    case LmStatus::DampingExhausted: return "damping exhausted";
    case LmStatus::NonFinite: return "non-finite residual";
    }
    return "?";
}

struct LmResult {
    Eigen::VectorXd x;
    Eigen::VectorXd residual;
    Eigen::MatrixXd jacobian;  // at x
    double cost = 0.0;         // 0.5 ||r||^2
    int iterations = 0;
    LmStatus status = LmStatus::MaxIterations;
    std::vector<double> cost_history;  // cost after every accepted step, starting at x0

    bool converged() const { return status == LmStatus::StepConverged || status == LmStatus::CostConverged; }
};

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Forward-difference Jacobian with per-component step sqrt(eps) (|x_i| + typical_i).
inline Eigen::MatrixXd numeric_jacobian(const ResidualFn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& typical,
                                        bool central = true)
{
    const Eigen::VectorXd r0 = f(x);
    Eigen::MatrixXd j(r0.size(), x.size());
    const double eps = central ? std::cbrt(std::numeric_limits<double>::epsilon())
                              : std::sqrt(std::numeric_limits<double>::epsilon());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = eps * (std::abs(x[i]) + typical[i]);
        Eigen::VectorXd xp = x;
        xp[i] += h;
        if (central) {
            Eigen::VectorXd xm = x;
            xm[i] -= h;
            j.col(i) = (f(xp) - f(xm)) / (2.0 * h);
        } else {
            j.col(i) = (f(xp) - r0) / h;
        }
    }
    return j;
}

/// Central differences at steps h and h/2 combined by Richardson extrapolation (error O(h^4)).
inline Eigen::MatrixXd richardson_jacobian(const ResidualFn& f, const Eigen::VectorXd& x, const Eigen::VectorXd& typical)
{
    const double eps = std::pow(std::numeric_limits<double>::epsilon(), 0.2);
    Eigen::MatrixXd j;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = eps * (std::abs(x[i]) + typical[i]);
        auto central = [&](double step) {
            Eigen::VectorXd xp = x, xm = x;
            xp[i] += step;
            xm[i] -= step;
            return Eigen::VectorXd((f(xp) - f(xm)) / (2.0 * step));
        };
        const Eigen::VectorXd coarse = central(h), fine = central(0.5 * h);
        if (i == 0)
            j.resize(coarse.size(), x.size());
        j.col(i) = (4.0 * fine - coarse) / 3.0;
    }
    return j;
}

/// Bound-constrained Levenberg-Marquardt: damped Gauss-Newton steps with Marquardt's
/// diagonal scaling, projected onto [lower, upper]; variables pinned at a bound by the
/// gradient are held fixed for that step. Only cost-decreasing steps are accepted.
inline LmResult levenberg_marquardt(const ResidualFn& f, const JacobianFn& jac, Eigen::VectorXd x,
                                    const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                    const LmOptions& options = {})
{
    const auto n = x.size();
    x = x.cwiseMax(lower).cwiseMin(upper);

    LmResult out;
    Eigen::VectorXd r = f(x);
    if (!r.allFinite()) {
        out.x = x;
        out.residual = r;
        out.cost = std::numeric_limits<double>::infinity();
        out.status = LmStatus::NonFinite;
        return out;
    }
    double cost = 0.5 * r.squaredNorm();
    out.cost_history.push_back(cost);

    double lambda = options.initial_damping;
    double nu = 2.0;
    Eigen::VectorXd scale = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd j = jac(x);
    bool fresh = true;

    int it = 0;
    for (; it < options.max_iterations; ++it) {
        if (!fresh)
            j = jac(x);
        fresh = false;
        const Eigen::MatrixXd a = j.transpose() * j;
        const Eigen::VectorXd grad = j.transpose() * r;
        for (Eigen::Index i = 0; i < n; ++i)
            scale[i] = std::max(scale[i], a(i, i));
        const Eigen::VectorXd diag = scale.cwiseMax(1e-300);
        const Eigen::VectorXd d = diag.cwiseSqrt();

        // Variables held at a bound by the gradient drop out of the step.
        std::vector<bool> active(static_cast<std::size_t>(n), false);
        for (Eigen::Index i = 0; i < n; ++i)
            active[static_cast<std::size_t>(i)] = (x[i] <= lower[i] && grad[i] > 0.0) || (x[i] >= upper[i] && grad[i] < 0.0);

        for (;;) {
            Eigen::MatrixXd damped = a;
            damped.diagonal() += lambda * diag;
            Eigen::VectorXd rhs = -grad;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (!active[static_cast<std::size_t>(i)])
                    continue;
                damped.row(i).setZero();
                damped.col(i).setZero();
                damped(i, i) = 1.0;
                rhs[i] = 0.0;
            }
            const Eigen::VectorXd step = damped.ldlt().solve(rhs);
            const Eigen::VectorXd trial = (x + step).cwiseMax(lower).cwiseMin(upper);
            const Eigen::VectorXd taken = trial - x;
            const bool small_step =
                d.cwiseProduct(taken).norm() <= options.xtol * (d.cwiseProduct(x).norm() + options.xtol);
            // Reduction promised by the linear model for the step actually taken.
            const double predicted = -(grad.dot(taken) + 0.5 * taken.dot(a * taken)) / cost;

            const Eigen::VectorXd r_trial = f(trial);
            const double cost_trial = r_trial.allFinite() ? 0.5 * r_trial.squaredNorm()
                                                          : std::numeric_limits<double>::infinity();
            if (cost_trial < cost) {
                const double actual = (cost - cost_trial) / cost;
                const double rho = predicted > 0.0 ? actual / predicted : 0.0;
                x = trial;
                r = r_trial;
                cost = cost_trial;
                out.cost_history.push_back(cost);
                lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
                lambda = std::max(lambda, 1e-15);
                nu = 2.0;
                if (small_step) {
                    out.status = LmStatus::StepConverged;
                    ++it;
                    goto done;
                }
                if (actual <= options.ftol && predicted <= options.ftol && rho <= 2.0) {
                    out.status = LmStatus::CostConverged;
                    ++it;
                    goto done;
                }
                break;
            }
            if (small_step) {
                out.status = LmStatus::StepConverged;
                goto done;
            }
            lambda *= nu;
            nu *= 2.0;
            if (lambda > options.max_damping) {
                out.status = LmStatus::DampingExhausted;
                goto done;
            }
        }
    }
    out.status = LmStatus::MaxIterations;

done:
    out.x = x;
    out.residual = r;
    out.jacobian = jac(x);
    out.cost = cost;
    out.iterations = it;
    return out;
}

}  // namespace spinchill
