#include "spinchill/spectra.hpp"

#include "spinchill/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace spinchill {

using cd = std::complex<double>;

SusceptibilityModel SusceptibilityModel::from_system(const CoupledSystem& system)
{
    return {system.membrane.omega, system.spin.omega, system.membrane.gamma, system.spin.gamma, system.g,
            system.tau};
}

cd SusceptibilityModel::chi0(Oscillator which, double omega) const
{
    const bool m = which == Oscillator::Membrane;
    const double w0 = m ? omega_m : omega_s;
    const double gamma = m ? gamma_m : gamma_s;
    return w0 / cd((w0 - omega) * (w0 + omega), -omega * gamma);
}

cd SusceptibilityModel::chi_eff(Oscillator which, double omega) const
{
    const Oscillator other = which == Oscillator::Membrane ? Oscillator::Spin : Oscillator::Membrane;
    const bool m = which == Oscillator::Membrane;
    const double w0 = m ? omega_m : omega_s;
    const double gamma = m ? gamma_m : gamma_s;
    const cd inverse0 = cd((w0 - omega) * (w0 + omega), -omega * gamma) / w0;
    if (g == 0.0)
        return chi0(which, omega);
    const cd loop = 4.0 * g * g * std::polar(1.0, 2.0 * omega * tau) * chi0(other, omega);
    return 1.0 / (inverse0 - loop);
}

cd chi_eff(const SusceptibilityModel& model, Oscillator which, double omega)
{
    return model.chi_eff(which, omega);
}

namespace {

constexpr std::size_t kGlobalCount = 6;
enum GlobalIndex : std::size_t { kScale, kOmegaM, kTau, kG, kFloor, kGammaM };

std::size_t omega_s_index(std::size_t k) { return kGlobalCount + 2 * k; }
std::size_t gamma_s_index(std::size_t k) { return kGlobalCount + 2 * k + 1; }

}  // namespace

std::vector<double> FitParameters::flatten() const
{
    if (gamma_s.size() != omega_s.size())
        throw std::invalid_argument("FitParameters: omega_s and gamma_s sizes differ");
    std::vector<double> flat{scale, omega_m, tau, g, floor, gamma_m};
    for (std::size_t k = 0; k < omega_s.size(); ++k) {
        flat.push_back(omega_s[k]);
        flat.push_back(gamma_s[k]);
    }
    return flat;
}

FitParameters FitParameters::unflatten(const std::vector<double>& flat, std::size_t n_datasets)
{
    if (flat.size() != kGlobalCount + 2 * n_datasets)
        throw std::invalid_argument("FitParameters: wrong parameter count");
    FitParameters p;
    p.scale = flat[kScale];
    p.omega_m = flat[kOmegaM];
    p.tau = flat[kTau];
    p.g = flat[kG];
    p.floor = flat[kFloor];
    p.gamma_m = flat[kGammaM];
    for (std::size_t k = 0; k < n_datasets; ++k) {
        p.omega_s.push_back(flat[omega_s_index(k)]);
        p.gamma_s.push_back(flat[gamma_s_index(k)]);
    }
    return p;
}

std::vector<std::string> FitParameters::names(std::size_t n_datasets)
{
    std::vector<std::string> out{"scale", "omega_m", "tau", "g", "floor", "gamma_m"};
    for (std::size_t k = 0; k < n_datasets; ++k) {
        out.push_back("omega_s[" + std::to_string(k) + "]");
        out.push_back("gamma_s[" + std::to_string(k) + "]");
    }
    return out;
}

SusceptibilityModel FitParameters::model(std::size_t dataset) const
{
    return {omega_m, omega_s.at(dataset), gamma_m, gamma_s.at(dataset), g, tau};
}

namespace {

struct PointEval {
    double value = 0.0;  // a^2 |chi|^2 + floor
    double chi2 = 0.0;
    cd f;                // chi_m,eff^-1
    cd e;                // exp(2 i omega tau)
    cd chi_s;
    cd ds;               // Omega_s^2 - omega^2 - i omega gamma_s
    double omega = 0.0;
};

// Differences against the reference are formed before adding the large carrier so the
// resonant denominators keep their precision.
PointEval evaluate(double omega_ref, const FitParameters& p, std::size_t k, double detuning)
{
    PointEval e;
    e.omega = omega_ref + detuning;
    const double dm = (p.omega_m - omega_ref) - detuning;
    const double ds = (p.omega_s[k] - omega_ref) - detuning;
    const cd denom_m(dm * (p.omega_m + e.omega), -e.omega * p.gamma_m);
    e.ds = cd(ds * (p.omega_s[k] + e.omega), -e.omega * p.gamma_s[k]);
    e.chi_s = p.omega_s[k] / e.ds;
    e.e = std::polar(1.0, 2.0 * e.omega * p.tau);
    e.f = denom_m / p.omega_m - 4.0 * p.g * p.g * e.e * e.chi_s;
    e.chi2 = 1.0 / std::norm(e.f);
    e.value = p.scale * p.scale * e.chi2 + p.floor;
    return e;
}

void check_problem(const FitProblem& problem, const FitParameters& params)
{
    if (problem.datasets.empty())
        throw std::invalid_argument("fit: no datasets");
    if (params.omega_s.size() != problem.datasets.size() || params.gamma_s.size() != problem.datasets.size())
        throw std::invalid_argument("fit: need one (omega_s, gamma_s) pair per dataset");
    for (const auto& d : problem.datasets) {
        if (d.detuning.size() != d.psd.size() || d.detuning.empty())
            throw std::invalid_argument("fit: dataset '" + d.label + "' has mismatched or empty grid");
        if (!d.weights.empty() && d.weights.size() != d.psd.size())
            throw std::invalid_argument("fit: dataset '" + d.label + "' has wrong weight count");
        if (problem.log_space && std::any_of(d.psd.begin(), d.psd.end(), [](double v) { return !(v > 0.0); }))
            throw std::invalid_argument("fit: log-space fit needs positive PSD values in '" + d.label + "'");
    }
}

std::size_t total_points(const FitProblem& problem)
{
    std::size_t n = 0;
    for (const auto& d : problem.datasets)
        n += d.psd.size();
    return n;
}

}  // namespace

double psd_model(const FitProblem& problem, const FitParameters& params, std::size_t index, double detuning)
{
    if (index >= problem.datasets.size() || index >= params.omega_s.size())
        throw std::out_of_range("psd_model: dataset index out of range");
    return evaluate(problem.omega_ref, params, index, detuning).value;
}

Eigen::VectorXd fit_residuals(const FitProblem& problem, const FitParameters& params)
{
    Eigen::VectorXd r(static_cast<Eigen::Index>(total_points(problem)));
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < problem.datasets.size(); ++k) {
        const auto& d = problem.datasets[k];
        for (std::size_t i = 0; i < d.psd.size(); ++i, ++row) {
            const double w = d.weights.empty() ? 1.0 : d.weights[i];
            const double model = evaluate(problem.omega_ref, params, k, d.detuning[i]).value;
            r[row] = problem.log_space ? w * (std::log(model) - std::log(d.psd[i])) : w * (model - d.psd[i]);
        }
    }
    return r;
}

Eigen::MatrixXd fit_jacobian(const FitProblem& problem, const FitParameters& p)
{
    const std::size_t n_par = kGlobalCount + 2 * problem.datasets.size();
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(total_points(problem)),
                                              static_cast<Eigen::Index>(n_par));
    const double a2 = p.scale * p.scale;
    const double g2 = p.g * p.g;
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < problem.datasets.size(); ++k) {
        const auto& d = problem.datasets[k];
        const double os = p.omega_s[k];
        for (std::size_t i = 0; i < d.psd.size(); ++i, ++row) {
            const double w = d.weights.empty() ? 1.0 : d.weights[i];
            const auto ev = evaluate(problem.omega_ref, p, k, d.detuning[i]);
            const double om = p.omega_m;
            const double omega = ev.omega;
            const double chi4 = ev.chi2 * ev.chi2;
            const cd ds2 = ev.ds * ev.ds;
            const cd i_unit(0.0, 1.0);

            // d|chi|^2/dp = -2 Re(conj(F) dF/dp) |chi|^4
            auto dchi2 = [&](cd df) { return -2.0 * std::real(std::conj(ev.f) * df) * chi4; };
            const double chain = problem.log_space ? w / ev.value : w;

            j(row, kScale) = chain * 2.0 * p.scale * ev.chi2;
            j(row, kFloor) = chain;
            j(row, kOmegaM) = chain * a2 * dchi2(1.0 + cd(omega * omega, omega * p.gamma_m) / (om * om));
            j(row, kGammaM) = chain * a2 * dchi2(-i_unit * omega / om);
            j(row, kG) = chain * a2 * dchi2(-8.0 * p.g * ev.e * ev.chi_s);
            j(row, kTau) = chain * a2 * dchi2(-8.0 * g2 * i_unit * omega * ev.e * ev.chi_s);
            j(row, static_cast<Eigen::Index>(omega_s_index(k))) =
                chain * a2 * dchi2(-4.0 * g2 * ev.e * cd(-os * os - omega * omega, -omega * p.gamma_s[k]) / ds2);
            j(row, static_cast<Eigen::Index>(gamma_s_index(k))) =
                chain * a2 * dchi2(-4.0 * g2 * ev.e * i_unit * omega * os / ds2);
        }
    }
    return j;
}

Eigen::MatrixXd fit_jacobian_numeric(const FitProblem& problem, const FitParameters& params)
{
    const std::size_t nd = problem.datasets.size();
    const auto flat = params.flatten();
    // Frequencies are perturbed as offsets from the reference so the step is linewidth-sized.
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
    Eigen::VectorXd offset = Eigen::VectorXd::Zero(x.size());
    offset[kOmegaM] = problem.omega_ref;
    for (std::size_t k = 0; k < nd; ++k)
        offset[static_cast<Eigen::Index>(omega_s_index(k))] = problem.omega_ref;
    const Eigen::VectorXd typical = (x - offset).cwiseAbs().cwiseMax(1e-30);
    auto f = [&](const Eigen::VectorXd& y) {
        const Eigen::VectorXd full = y + offset;
        return fit_residuals(problem, FitParameters::unflatten({full.data(), full.data() + full.size()}, nd));
    };
    return richardson_jacobian(f, x - offset, typical);
}

std::optional<double> FitResult::stderr_of(const std::string& name) const
{
    if (!covariance)
        return std::nullopt;
    const auto it = std::find(free_names.begin(), free_names.end(), name);
    if (it == free_names.end())
        return std::nullopt;
    const auto i = static_cast<Eigen::Index>(it - free_names.begin());
    return std::sqrt((*covariance)(i, i));
}

FitResult global_fit(const FitProblem& problem)
{
    check_problem(problem, problem.initial);
    const std::size_t nd = problem.datasets.size();
    const auto names = FitParameters::names(nd);
    for (const auto& name : problem.fixed)
        if (std::find(names.begin(), names.end(), name) == names.end())
            throw std::invalid_argument("fit: unknown parameter '" + name + "'");

    const auto start = problem.initial.flatten();
    const std::size_t n_all = start.size();
    std::vector<double> lo(n_all, -std::numeric_limits<double>::infinity());
    std::vector<double> hi(n_all, std::numeric_limits<double>::infinity());
    if (problem.lower)
        lo = problem.lower->flatten();
    if (problem.upper)
        hi = problem.upper->flatten();
    if (lo.size() != n_all || hi.size() != n_all)
        throw std::invalid_argument("fit: bounds do not match the parameter layout");

    std::vector<std::size_t> free;
    FitResult out;
    for (std::size_t i = 0; i < n_all; ++i) {
        if (std::find(problem.fixed.begin(), problem.fixed.end(), names[i]) != problem.fixed.end())
            continue;
        if (start[i] < lo[i] || start[i] > hi[i])
            throw std::invalid_argument("fit: initial '" + names[i] + "' outside its bounds");
        free.push_back(i);
        out.free_names.push_back(names[i]);
    }
    if (free.empty())
        throw std::invalid_argument("fit: every parameter is fixed");

    std::vector<double> offset(n_all, 0.0);
    offset[kOmegaM] = problem.omega_ref;
    for (std::size_t k = 0; k < nd; ++k)
        offset[omega_s_index(k)] = problem.omega_ref;

    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::VectorXd x0(nf), lower(nf), upper(nf);
    for (Eigen::Index i = 0; i < nf; ++i) {
        const std::size_t idx = free[static_cast<std::size_t>(i)];
        x0[i] = start[idx] - offset[idx];
        lower[i] = lo[idx] - offset[idx];
        upper[i] = hi[idx] - offset[idx];
    }
    auto expand = [&](const Eigen::VectorXd& x) {
        std::vector<double> flat = start;
        for (Eigen::Index i = 0; i < nf; ++i) {
            const std::size_t idx = free[static_cast<std::size_t>(i)];
            flat[idx] = x[i] + offset[idx];
        }
        return FitParameters::unflatten(flat, nd);
    };
    auto residual = [&](const Eigen::VectorXd& x) { return fit_residuals(problem, expand(x)); };
    auto jacobian = [&](const Eigen::VectorXd& x) {
        const Eigen::MatrixXd full = fit_jacobian(problem, expand(x));
        Eigen::MatrixXd j(full.rows(), nf);
        for (Eigen::Index i = 0; i < nf; ++i)
            j.col(i) = full.col(static_cast<Eigen::Index>(free[static_cast<std::size_t>(i)]));
        return j;
    };

    const auto lm = levenberg_marquardt(residual, jacobian, x0, lower, upper, problem.lm);
    out.params = expand(lm.x);
    out.status = lm.status;
    out.converged = lm.converged();
    out.iterations = lm.iterations;
    out.cost = lm.cost;
    out.cost_history = lm.cost_history;

    Eigen::Index row = 0;
    for (const auto& d : problem.datasets) {
        const auto n = static_cast<Eigen::Index>(d.psd.size());
        out.residual_norms.push_back(lm.residual.segment(row, n).norm());
        row += n;
    }

    // Covariance on column-equilibrated J^T J; a tiny eigenvalue means the data do not
    // constrain some combination of the free parameters.
    const Eigen::MatrixXd& j = lm.jacobian;
    const Eigen::VectorXd colnorm = j.colwise().norm();
    if (!j.allFinite() || (colnorm.array() == 0.0).any()) {
        out.singular = true;
        return out;
    }
    const Eigen::MatrixXd js = j * colnorm.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd a = js.transpose() * js;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
    const double max_ev = eig.eigenvalues().maxCoeff();
    if (!(eig.eigenvalues().minCoeff() > 1e-14 * max_ev)) {
        out.singular = true;
        return out;
    }
    const auto m = j.rows();
    const double sigma2 = m > nf ? 2.0 * lm.cost / static_cast<double>(m - nf) : 1.0;
    const Eigen::MatrixXd inv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                                eig.eigenvectors().transpose();
    const Eigen::MatrixXd dinv = colnorm.cwiseInverse().asDiagonal();
    out.covariance = sigma2 * dinv * inv * dinv;
    return out;
}

std::vector<PeakSummary> find_peaks(const Dataset& data, double prominence)
{
    const auto& y = data.psd;
    const auto& x = data.detuning;
    const std::size_t n = y.size();
    std::vector<PeakSummary> peaks;
    if (n < 3)
        return peaks;
    const double base = *std::min_element(y.begin(), y.end());

    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(y[i] > y[i - 1] && y[i] >= y[i + 1]))
            continue;
        // Lowest point before reaching something taller, on either side.
        double left = y[i], right = y[i];
        std::size_t l = i;
        while (l > 0 && y[l - 1] <= y[i])
            left = std::min(left, y[--l]);
        std::size_t r = i;
        while (r + 1 < n && y[r + 1] <= y[i])
            right = std::min(right, y[++r]);
        const double saddle = std::max(left, right);
        if (!(y[i] >= prominence * saddle))
            continue;

        PeakSummary p;
        p.center = x[i];
        p.height = y[i];
        const double half = base + 0.5 * (y[i] - base);
        std::size_t a = i, b = i;
        while (a > 0 && y[a] > half)
            --a;
        while (b + 1 < n && y[b] > half)
            ++b;
        auto cross = [&](std::size_t lo_i, std::size_t hi_i) {
            const double t = (half - y[lo_i]) / (y[hi_i] - y[lo_i]);
            return x[lo_i] + t * (x[hi_i] - x[lo_i]);
        };
        const double xl = y[a] <= half && a < i ? cross(a, a + 1) : x[a];
        const double xr = y[b] <= half && b > i ? cross(b, b - 1) : x[b];
        p.width = std::abs(xr - xl);
        peaks.push_back(p);
    }
    std::sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.height > b.height; });
    return peaks;
}

LorentzianFit fit_lorentzian(const Dataset& data)
{
    LorentzianFit out;
    auto peaks = find_peaks(data, 1.0);
    if (peaks.empty() || data.psd.size() < 4)
        return out;
    const double base = std::max(*std::min_element(data.psd.begin(), data.psd.end()), 1e-300);
    const auto& p = peaks.front();
    const double span = data.detuning.back() - data.detuning.front();

    Eigen::Vector4d x0(p.center, std::max(p.width, 1e-6 * std::abs(span)), std::max(p.height - base, base), base);
    auto residual = [&](const Eigen::VectorXd& q) {
        Eigen::VectorXd r(static_cast<Eigen::Index>(data.psd.size()));
        for (std::size_t i = 0; i < data.psd.size(); ++i) {
            const double u = 2.0 * (data.detuning[i] - q[0]) / q[1];
            r[static_cast<Eigen::Index>(i)] = std::log(q[2] / (1.0 + u * u) + q[3]) - std::log(data.psd[i]);
        }
        return r;
    };
    const Eigen::Vector4d typical(std::abs(x0[1]), x0[1], x0[2], x0[3]);
    auto jac = [&](const Eigen::VectorXd& q) { return numeric_jacobian(residual, q, typical, false); };
    const Eigen::Vector4d lower(data.detuning.front(), 1e-9 * std::abs(span), 0.0, 0.0);
    const Eigen::Vector4d upper(data.detuning.back(), 10.0 * std::abs(span), std::numeric_limits<double>::infinity(),
                                std::numeric_limits<double>::infinity());
    LmOptions opt;
    opt.max_iterations = 200;
    const auto lm = levenberg_marquardt(residual, jac, x0, lower, upper, opt);
    out.center = lm.x[0];
    out.width = lm.x[1];
    out.height = lm.x[2];
    out.floor = lm.x[3];
    out.converged = lm.converged();
    return out;
}

FitParameters seed_parameters(const FitProblem& problem, const FitParameters& base)
{
    FitParameters seed = base;
    const double ref = problem.omega_ref;
    std::vector<double> splittings;
    std::vector<bool> resolved(problem.datasets.size(), false);

    for (std::size_t k = 0; k < problem.datasets.size(); ++k) {
        const auto peaks = find_peaks(problem.datasets[k], 2.0);
        if (peaks.size() < 2)
            continue;
        const double c1 = peaks[0].center, c2 = peaks[1].center;
        const double mid = 0.5 * (c1 + c2) + ref;
        const double half_split = 0.5 * std::abs(c1 - c2);
        const double delta = 2.0 * (mid - base.omega_m);
        if (std::abs(delta) >= 2.0 * half_split)
            continue;
        seed.omega_s[k] = base.omega_m + delta;
        splittings.push_back(std::sqrt(half_split * half_split - 0.25 * delta * delta));
        seed.gamma_s[k] = std::max(peaks[0].width + peaks[1].width - base.gamma_m, 0.05 * half_split);
        resolved[k] = true;
    }
    if (!splittings.empty())
        seed.g = std::accumulate(splittings.begin(), splittings.end(), 0.0) / static_cast<double>(splittings.size());

    for (std::size_t k = 0; k < problem.datasets.size(); ++k) {
        if (resolved[k])
            continue;
        const auto lz = fit_lorentzian(problem.datasets[k]);
        const double extra = lz.width - seed.gamma_m;
        if (lz.converged && extra > 0.0)
            seed.gamma_s[k] = 4.0 * seed.g * seed.g / extra;
    }
    if (problem.lower && problem.upper) {
        auto flat = seed.flatten();
        const auto lo = problem.lower->flatten();
        const auto hi = problem.upper->flatten();
        for (std::size_t i = 0; i < flat.size(); ++i)
            flat[i] = std::clamp(flat[i], lo[i], hi[i]);
        seed = FitParameters::unflatten(flat, seed.n_datasets());
    }
    return seed;
}

FitResult multistart_fit(const FitProblem& problem, const MultiStartOptions& options)
{
    std::vector<double> taus{problem.initial.tau};
    for (double t : options.tau_seeds)
        if (std::find(taus.begin(), taus.end(), t) == taus.end())
            taus.push_back(t);

    std::vector<std::optional<FitResult>> results(taus.size());
    parallel_for(taus.size(), options.threads, [&](std::size_t i) {
        FitProblem p = problem;
        p.initial.tau = taus[i];
        if (p.lower)
            p.initial.tau = std::max(p.initial.tau, p.lower->tau);
        if (p.upper)
            p.initial.tau = std::min(p.initial.tau, p.upper->tau);
        results[i] = global_fit(p);
    });

    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i)
        if (results[i]->cost < results[best]->cost)
            best = i;
    return *results[best];
}

double PsdEstimate::integrated() const
{
    if (detuning.size() < 2)
        return 0.0;
    const double df = (detuning[1] - detuning[0]) / kTwoPi;
    return std::accumulate(psd.begin(), psd.end(), 0.0) * df;
}

PsdEstimate estimate_psd(const TrajectoryEnsemble& ensemble, Oscillator which, const Segmenting& seg)
{
    const std::size_t n = seg.length;
    if (n < 2)
        throw std::invalid_argument("estimate_psd: segment length must be >= 2");
    if (!(seg.overlap >= 0.0 && seg.overlap < 1.0))
        throw std::invalid_argument("estimate_psd: overlap must be in [0, 1)");
    if (ensemble.n_samples < n)
        throw std::invalid_argument("estimate_psd: trajectory shorter than one segment");
    if (ensemble.n_traj == ensemble.aborted_count())
        throw std::invalid_argument("estimate_psd: empty ensemble");

    const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(n * (1.0 - seg.overlap))));
    const std::size_t per_traj = (ensemble.n_samples - n) / hop + 1;
    const std::size_t used = (per_traj - 1) * hop + n;
    const double dt = ensemble.sample_interval;
    const std::size_t offset = which == Oscillator::Membrane ? 0 : 2;

    std::vector<double> window(n, 1.0);
    if (seg.window == WindowFunction::Hann)
        for (std::size_t i = 0; i < n; ++i)
            window[i] = 0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(n)));
    const double u = std::accumulate(window.begin(), window.end(), 0.0, [](double s, double w) { return s + w * w; });

    Eigen::FFT<double> fft;
    std::vector<cd> buffer(n), spectrum(n);
    std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
    double variance = 0.0;
    std::size_t count = 0, n_used = 0;

    for (std::size_t traj = 0; traj < ensemble.n_traj; ++traj) {
        if (ensemble.aborted_at[traj] >= 0)
            continue;
        const auto data = ensemble.trajectory(traj);
        auto envelope = [&](std::size_t s) { return cd(data[s * 4 + offset], -data[s * 4 + offset + 1]); };
        for (std::size_t s = 0; s < used; ++s)
            variance += 0.5 * std::norm(envelope(s));
        n_used += used;
        for (std::size_t sgm = 0; sgm < per_traj; ++sgm) {
            for (std::size_t i = 0; i < n; ++i)
                buffer[i] = window[i] * envelope(sgm * hop + i);
            fft.fwd(spectrum, buffer);
            for (std::size_t i = 0; i < n; ++i) {
                // Two-sided envelope density, halved onto the positive lab-frame frequencies.
                const double p = 0.5 * std::norm(spectrum[i]) * dt / u;
                sum[i] += p;
                sum_sq[i] += p * p;
            }
            ++count;
        }
    }

    PsdEstimate out;
    out.segments = count;
    out.variance = variance / static_cast<double>(n_used);
    const double half = static_cast<double>(n / 2);
    for (std::size_t j = 0; j < n; ++j) {
        const double m = static_cast<double>(j) - half;
        const std::size_t src = (j + n - n / 2) % n;
        const double detuning = kTwoPi * m / (static_cast<double>(n) * dt);
        const double mean = sum[src] / static_cast<double>(count);
        const double var = count > 1 ? std::max(0.0, sum_sq[src] / static_cast<double>(count) - mean * mean) *
                                           static_cast<double>(count) / static_cast<double>(count - 1)
                                     : 0.0;
        out.detuning.push_back(detuning);
        out.frequency.push_back(to_hz(ensemble.omega_m + detuning));
        out.psd.push_back(mean);
        out.psd_err.push_back(std::sqrt(var / static_cast<double>(count)));
    }
    return out;
}

}  // namespace spinchill
