// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is the number
// of failures. Usage: acceptance [--criterion N] [--threads N]

#include "spinchill/analysis.hpp"
#include "spinchill/cli/config.hpp"
#include "spinchill/cli/runner.hpp"
#include "spinchill/errors.hpp"
#include "spinchill/levmar.hpp"
#include "spinchill/simulator.hpp"
#include "spinchill/spectra.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace spinchill;

namespace {

int g_threads = 0;

const double kG = from_hz(3.4e3);
const double kWm = from_hz(1.957e6);

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...)
{
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

CoupledSystem continuous_system(double tau)
{
    CoupledSystem s;
    s.membrane = {kWm, from_hz(262.0), 2.0e4};
    s.spin = {kWm, from_hz(2.2e3), 0.0};
    s.g = kG;
    s.tau = tau;
    s.eta_sq = 0.8;
    return s;
}

CoupledSystem delay_system(double tau, double gamma_s, double delta)
{
    CoupledSystem s = continuous_system(tau);
    s.membrane.gamma = from_hz(94.0);
    s.membrane.n_bath = 4.0e4;
    s.spin.gamma = gamma_s;
    s.spin.omega = kWm + delta;
    return s;
}

SimulationOptions options(int stride = 1, IncrementModel increments = IncrementModel::BlockDiagonal)
{
    SimulationOptions o;
    o.threads = g_threads;
    o.sample_stride = stride;
    o.increments = increments;
    return o;
}

// --- 1 -------------------------------------------------------------------------

struct ExchangeSummary {
    double half_period = 0.0;  // s, mean spacing of the first occupation minima
    double dephasing = 0.0;    // s, when the exchange oscillation falls below 5% of the mean level
    double steady = 0.0;       // mean over the final 0.5 ms
    std::size_t minima = 0;
};

// Oscillation amplitude over one period centred at each sample, relative to the local mean,
// after removing a linear trend.
double visibility(const OccupationTrace& t, std::size_t lo, std::size_t hi, double omega)
{
    const auto n = static_cast<double>(hi - lo);
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        st += t.times[i];
        sy += t.mean[i];
        stt += t.times[i] * t.times[i];
        sty += t.times[i] * t.mean[i];
    }
    const double slope = (n * sty - st * sy) / (n * stt - st * st);
    const double level = sy / n;
    double a = 0.0, b = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
        const double r = t.mean[i] - (level + slope * (t.times[i] - st / n));
        a += r * std::cos(omega * t.times[i]);
        b += r * std::sin(omega * t.times[i]);
    }
    return 2.0 * std::hypot(a, b) / n / level;
}

ExchangeSummary exchange_summary(const OccupationTrace& t, double total)
{
    ExchangeSummary out;
    // Minima standing at least 10% below both neighbouring maxima, in time order.
    std::vector<std::size_t> mins;
    std::size_t candidate = 0;
    double peak = t.mean.front();
    bool falling = true;
    for (std::size_t i = 1; i < t.mean.size(); ++i) {
        const double v = t.mean[i];
        if (falling) {
            if (v < t.mean[candidate] || candidate == 0)
                candidate = i;
            if (v > 1.1 * t.mean[candidate] && peak > 1.1 * t.mean[candidate]) {
                mins.push_back(candidate);
                falling = false;
                peak = v;
            }
        } else {
            peak = std::max(peak, v);
            if (v < peak / 1.1) {
                falling = true;
                candidate = i;
            }
        }
    }
    out.minima = mins.size();
    if (mins.size() >= 3)
        out.half_period = (t.times[mins[2]] - t.times[mins[0]]) / 2.0;
    else if (mins.size() == 2)
        out.half_period = t.times[mins[1]] - t.times[mins[0]];

    const double period = out.half_period > 0.0 ? out.half_period : std::numbers::pi / kG;
    const double dt = t.times[1] - t.times[0];
    const auto span = static_cast<std::size_t>(std::lround(period / dt));
    out.dephasing = std::numeric_limits<double>::infinity();
    for (std::size_t lo = 0; lo + span < t.times.size(); ++lo)
        if (visibility(t, lo, lo + span, 2.0 * std::numbers::pi / period) < 0.05) {
            out.dephasing = t.times[lo + span / 2];
            break;
        }

    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < t.times.size(); ++i)
        if (t.times[i] >= total - 0.5e-3) {
            sum += t.mean[i];
            ++n;
        }
    out.steady = n ? sum / static_cast<double>(n) : std::nan("");
    return out;
}

ExchangeSummary continuous_run(double tau)
{
    const auto s = continuous_system(tau);
    const auto e = simulate(s, make_noise_spec(s, 1), Schedule::hold(s, 3e-3), 300, {2.0e5, std::nullopt}, options());
    return exchange_summary(occupation_trace(e, Oscillator::Membrane, 5e-6), 3e-3);
}

Outcome criterion1()
{
    Stopwatch clock;
    const auto r = continuous_run(15e-9);
    const double wall = clock.seconds();
    const double half = std::numbers::pi / kG;
    const bool a = r.minima >= 2 && std::abs(r.half_period / half - 1.0) <= 0.10;
    const bool b = r.dephasing >= 0.5e-3 && r.dephasing <= 1.5e-3;
    const bool c = r.steady >= 1.5e3 && r.steady <= 3.5e3;
    const auto zero = continuous_run(0.0);
    Outcome o;
    o.pass = a && b && c && wall <= 60.0;
    o.detail = fmt("tau=15ns: half-period %.1f us (target %.1f +-10%%) %s; dephasing %.2f ms %s; steady n_m %.4g in "
                   "[1.5e3, 3.5e3] %s; %.1f s. tau=0: half-period %.1f us, dephasing %.2f ms, steady %.4g",
                   r.half_period * 1e6, half * 1e6, a ? "ok" : "no", r.dephasing * 1e3, b ? "ok" : "no", r.steady,
                   c ? "ok" : "no", wall, zero.half_period * 1e6, zero.dephasing * 1e3, zero.steady);
    return o;
}

// --- 2 -------------------------------------------------------------------------

// First time the mean occupation drops to `threshold`; +inf if it never does.
double first_below(const OccupationTrace& t, double threshold)
{
    for (std::size_t i = 0; i < t.mean.size(); ++i)
        if (t.mean[i] <= threshold)
            return t.times[i];
    return std::numeric_limits<double>::infinity();
}

struct Speedup {
    double strobo_time = 0.0, continuous_time = 0.0, final_n = 0.0;
};

Speedup speedup(double tau)
{
    const auto s = continuous_system(tau);
    Schedule cycle;
    cycle.segments = {{100e-6, 0.6 * kG, s.spin.omega}, {10e-6, 60.0 * kG, s.spin.omega}};
    const auto strobo_schedule = cycle.repeated(5);
    const auto strobo = occupation_trace(
        simulate(s, make_noise_spec(s, 2), strobo_schedule, 300, {2.0e5, std::nullopt}, options()),
        Oscillator::Membrane, 5e-6);
    const double total = strobo_schedule.total_duration();
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < strobo.times.size(); ++i)
        if (strobo.times[i] >= total - 110e-6) {
            sum += strobo.mean[i];
            ++n;
        }
    Speedup out;
    out.final_n = sum / static_cast<double>(n);
    const double threshold = 1.2 * out.final_n;
    out.strobo_time = first_below(strobo, threshold);

    auto c = s;
    c.spin.gamma = 2.0 * kG;
    const auto cont = occupation_trace(
        simulate(c, make_noise_spec(c, 3), Schedule::hold(c, 1.5e-3), 300, {2.0e5, std::nullopt}, options()),
        Oscillator::Membrane, 5e-6);
    out.continuous_time = first_below(cont, threshold);
    return out;
}

Outcome criterion2()
{
    Stopwatch clock;
    const auto r = speedup(15e-9);
    const double wall = clock.seconds();
    const double ratio = r.continuous_time / r.strobo_time;
    const auto zero = speedup(0.0);
    Outcome o;
    o.pass = r.strobo_time <= 250e-6 && ratio >= 1.5 && wall <= 60.0;
    o.detail = fmt("tau=15ns: final %.4g, strobo reaches 1.2x final at %.0f us (<= 250), continuous at %.0f us, "
                   "ratio %.2f (>= 1.5); %.1f s. tau=0: strobo %.0f us, continuous %.0f us, ratio %.2f",
                   r.final_n, r.strobo_time * 1e6, r.continuous_time * 1e6, ratio, wall, zero.strobo_time * 1e6,
                   zero.continuous_time * 1e6, zero.continuous_time / zero.strobo_time);
    return o;
}

// --- 3 -------------------------------------------------------------------------

struct DecayFit {
    double rate = 0.0, amplitude = 0.0, offset = 0.0;
    bool converged = false;
};

// Weighted least squares of n(t) = A exp(-Gamma t) + C on the ensemble mean.
DecayFit fit_decay(const OccupationTrace& t, double n_traj, double rate_guess)
{
    const auto n = static_cast<Eigen::Index>(t.times.size());
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i)
        w[i] = std::sqrt(n_traj) / std::max(t.stddev[static_cast<std::size_t>(i)], 1.0);
    auto f = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd r(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const std::size_t k = static_cast<std::size_t>(i);
            r[i] = w[i] * (x[0] * std::exp(-x[1] * t.times[k]) + x[2] - t.mean[k]);
        }
        return r;
    };
    auto j = [&](const Eigen::VectorXd& x) {
        Eigen::MatrixXd m(n, 3);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double tt = t.times[static_cast<std::size_t>(i)];
            const double e = std::exp(-x[1] * tt);
            m(i, 0) = w[i] * e;
            m(i, 1) = -w[i] * x[0] * tt * e;
            m(i, 2) = w[i];
        }
        return m;
    };
    Eigen::VectorXd x0(3), lo(3), hi(3);
    x0 << t.mean.front() - t.mean.back(), rate_guess, t.mean.back();
    lo << 0.0, 0.0, -1e9;
    hi << 1e9, 1e9, 1e9;
    const auto r = levenberg_marquardt(f, j, x0, lo, hi);
    return {r.x[1], r.x[0], r.x[2], r.converged()};
}

Outcome criterion3()
{
    Outcome o;
    o.pass = true;
    for (double k : {20.0, 40.0, 60.0}) {
        auto s = continuous_system(15e-9);
        s.spin.gamma = k * kG;
        const double predicted = sympathetic_rate_simplified(s).gamma_sym;
        const double total = s.membrane.gamma + predicted;
        const double duration = 6.0 / total;
        const std::size_t n_traj = 8000;
        const auto e = simulate(s, make_noise_spec(s, 30 + static_cast<std::uint64_t>(k)), Schedule::hold(s, duration),
                                n_traj, {2.0e5, std::nullopt}, options(4, IncrementModel::Full));
        const auto trace = occupation_trace(e, Oscillator::Membrane, 5e-6);
        const auto fit = fit_decay(trace, static_cast<double>(n_traj), total);
        const double measured = fit.rate - s.membrane.gamma;
        const double err = std::abs(measured / predicted - 1.0);
        const bool ok = fit.converged && err <= 0.05;
        o.pass = o.pass && ok;
        o.detail += fmt("%sgamma_s=%gg: fitted gamma_sym %.1f Hz vs %.1f Hz (%.1f%%) %s", o.detail.empty() ? "" : "; ",
                        k, to_hz(measured), to_hz(predicted), 100.0 * err, ok ? "ok" : "no");
    }
    return o;
}

// --- 4 -------------------------------------------------------------------------

Outcome criterion4()
{
    Stopwatch clock;
    Outcome o;
    o.pass = true;
    const double burn_in = 1.5e-3, window = 3e-3;
    for (double k : {1.0, 2.0, 20.0}) {
        auto s = continuous_system(0.0);
        s.spin.gamma = k * kG;
        const auto noise = make_noise_spec(s, 40 + static_cast<std::uint64_t>(k));
        const auto lyap = steady_state_lyapunov(s, noise);
        const std::size_t n_traj = 400;
        const auto e = simulate(s, noise, Schedule::hold(s, burn_in + window), n_traj,
                                {s.membrane.n_bath, std::nullopt}, options(4, IncrementModel::Full));
        // Time average per trajectory, then mean and standard error across trajectories.
        std::vector<double> per_traj;
        for (std::size_t tr = 0; tr < e.n_traj; ++tr) {
            if (e.aborted_at[tr] >= 0)
                continue;
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < e.n_samples; ++i) {
                if (e.times[i] < burn_in)
                    continue;
                const Vec4 x = e.state(tr, i);
                sum += 0.5 * (x[0] * x[0] + x[1] * x[1]) - 0.5;
                ++n;
            }
            per_traj.push_back(sum / static_cast<double>(n));
        }
        const double m = std::accumulate(per_traj.begin(), per_traj.end(), 0.0) / static_cast<double>(per_traj.size());
        double var = 0.0;
        for (double v : per_traj)
            var += (v - m) * (v - m);
        var /= static_cast<double>(per_traj.size() - 1);
        const double se = std::sqrt(var / static_cast<double>(per_traj.size()));
        const double z = std::abs(m - lyap.n_membrane) / se;
        const bool ok = z <= 3.0;
        o.pass = o.pass && ok;
        o.detail += fmt("%sgamma_s=%gg: Lyapunov %.1f, ensemble %.1f +- %.1f (%.2f SE) %s", o.detail.empty() ? "" : "; ",
                        k, lyap.n_membrane, m, se, z, ok ? "ok" : "no");
    }
    const double wall = clock.seconds();
    o.pass = o.pass && wall <= 120.0;
    o.detail += fmt("; %.1f s", wall);
    return o;
}

// --- 5 -------------------------------------------------------------------------

// Lyapunov membrane occupation; +inf for linearly unstable points.
double n_ss(const CoupledSystem& s)
{
    try {
        return steady_state_lyapunov(s, make_noise_spec(s, 0)).n_membrane;
    } catch (const InstabilityError&) {
        return std::numeric_limits<double>::infinity();
    }
}

double argmin_gamma_s(double tau)
{
    double best = std::numeric_limits<double>::infinity(), at = 0.0;
    for (int i = 0; i <= 600; ++i) {
        const double gs = 0.1 * kG * std::pow(300.0, i / 600.0);
        const double v = n_ss(delay_system(tau, gs, 0.0));
        if (v < best) {
            best = v;
            at = gs;
        }
    }
    return at;
}

Outcome criterion5()
{
    const double at15 = argmin_gamma_s(15e-9), at0 = argmin_gamma_s(0.0);
    const bool a = at15 > 2.0 * kG && std::abs(at0 / (2.0 * kG) - 1.0) <= 0.2;

    const double plus = n_ss(delay_system(15e-9, 0.6 * kG, from_hz(2e3)));
    const double minus = n_ss(delay_system(15e-9, 0.6 * kG, from_hz(-2e3)));
    const bool b = plus < minus;

    int unstable_neg15 = 0, unstable_pos15 = 0, unstable0 = 0;
    for (int i = -200; i <= 200; ++i) {
        const double d = from_hz(50.0 * i);
        const bool u15 = !stability(delay_system(15e-9, 0.6 * kG, d)).stable;
        const bool u0 = !stability(delay_system(0.0, 0.6 * kG, d)).stable;
        if (u15 && i < 0)
            ++unstable_neg15;
        if (u15 && i > 0)
            ++unstable_pos15;
        if (u0)
            ++unstable0;
    }
    const bool c = unstable_neg15 > 0 && unstable0 == 0;

    Outcome o;
    o.pass = a && b && c;
    o.detail = fmt("(a) argmin gamma_s %.2fg at 15 ns (> 2g), %.2fg at 0 (2g +-20%%) %s; (b) n(+2kHz) %.4g < "
                   "n(-2kHz) %.4g %s; (c) unstable delta<0 points %d (delta>0: %d), at tau=0: %d %s",
                   at15 / kG, at0 / kG, a ? "ok" : "no", plus, minus, b ? "ok" : "no", unstable_neg15, unstable_pos15,
                   unstable0, c ? "ok" : "no");
    return o;
}

// --- 6 -------------------------------------------------------------------------

Outcome criterion6()
{
    Stopwatch clock;
    StabilityMapSpec spec;
    spec.base = continuous_system(0.0);
    for (int i = 0; i < 100; ++i)
        spec.deltas.push_back(from_hz(-10e3 + 20e3 * i / 99.0));
    for (int j = 0; j < 100; ++j)
        spec.gamma_s.push_back(0.01 * kG * std::pow(1000.0, j / 99.0));
    spec.taus = {0.0, 15e-9, 40e-9, 80e-9};
    spec.threads = g_threads;
    const auto map = stability_map(spec);
    const double wall = clock.seconds();

    bool pass = wall <= 30.0;
    std::string detail;
    const std::size_t points = spec.deltas.size() * spec.gamma_s.size();
    for (const auto& plane : map.planes) {
        // Disagreeing points must sit within the bisection tolerance of a verdict change.
        std::size_t far = 0;
        for (std::size_t i = 0; i < spec.deltas.size(); ++i)
            for (std::size_t j = 0; j < spec.gamma_s.size(); ++j) {
                const std::size_t k = i * spec.gamma_s.size() + j;
                if (plane.stable[k] == plane.roots_stable[k])
                    continue;
                auto s = spec.base;
                s.tau = plane.tau;
                s.spin.omega = s.membrane.omega + spec.deltas[i];
                const double gs = spec.gamma_s[j], tol = spec.boundary_tolerance;
                s.spin.gamma = gs * (1.0 - tol);
                const bool below = stability(s).stable;
                s.spin.gamma = gs * (1.0 + tol);
                const bool above = stability(s).stable;
                if (below == above)
                    ++far;
            }
        const double agree = 1.0 - static_cast<double>(plane.disagreements) / static_cast<double>(points);
        bool ok = agree >= 0.99 && far == 0;
        if (plane.tau == 0.0)
            ok = ok && plane.stable_count() == points;
        pass = pass && ok;
        detail += fmt("%stau=%.0fns agree %.2f%% (%zu off-boundary), stable %zu/%zu %s", detail.empty() ? "" : "; ",
                      plane.tau * 1e9, 100.0 * agree, far, plane.stable_count(), points, ok ? "ok" : "no");
    }
    detail += fmt("; %.1f s", wall);
    return {pass, detail};
}

// --- 7 -------------------------------------------------------------------------

Outcome criterion7()
{
    Stopwatch clock;
    const auto config = cli::preset("fig2b");
    auto synthetic = cli::make_synthetic_fit(config);
    auto& problem = synthetic.problem;
    const auto& truth = synthetic.truth;
    cli::default_bounds(problem);
    problem.fixed = config.fit.fixed;
    problem.log_space = config.fit.log_space;

    std::mt19937_64 rng(2718);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int restarts = 50;
    int ok = 0;
    double worst_shared = 0.0, worst_local = 0.0;
    for (int r = 0; r < restarts; ++r) {
        FitParameters p = truth;
        p.scale *= 1.0 + 0.2 * u(rng);
        p.tau *= 1.0 + 0.2 * u(rng);
        p.g *= 1.0 + 0.2 * u(rng);
        p.floor *= 1.0 + 0.2 * u(rng);
        p.omega_m += from_hz(500.0 * u(rng));
        for (std::size_t k = 0; k < p.n_datasets(); ++k) {
            p.omega_s[k] += from_hz(500.0 * u(rng));
            p.gamma_s[k] *= 1.0 + 0.2 * u(rng);
        }
        FitProblem attempt = problem;
        attempt.initial = seed_parameters(attempt, p);
        MultiStartOptions ms;
        ms.tau_seeds = config.fit.tau_seeds_s;
        ms.threads = g_threads;
        const auto fit = multistart_fit(attempt, ms);
        const auto& q = fit.params;
        const double shared = std::max({std::abs(q.g / truth.g - 1.0), std::abs(q.tau / truth.tau - 1.0),
                                        std::abs(q.omega_m - truth.omega_m) / truth.g});
        double local = 0.0;
        for (std::size_t k = 0; k < q.n_datasets(); ++k)
            local = std::max({local, std::abs(q.gamma_s[k] / truth.gamma_s[k] - 1.0),
                              std::abs(q.omega_s[k] - truth.omega_s[k]) / truth.g});
        if (shared <= 0.03 && local <= 0.05)
            ++ok;
        worst_shared = std::max(worst_shared, shared);
        worst_local = std::max(worst_local, local);
    }
    const bool recovery = ok >= 45;

    // Normal-mode splitting in the gamma_s = 0.5 g spectrum.
    const auto peaks = find_peaks(problem.datasets[0]);
    const double split = peaks.size() >= 2 ? std::abs(peaks[0].center - peaks[1].center) : 0.0;
    const bool splitting = std::abs(split / (2.0 * kG) - 1.0) <= 0.05;

    const double wall = clock.seconds();
    return {recovery && splitting,
            fmt("%d/%d restarts within 3%% shared / 5%% per-dataset (worst %.2f%% / %.2f%%) %s; peak separation at 0.5g "
                "%.0f Hz vs 2g = %.0f Hz %s; %.1f s",
                ok, restarts, 100.0 * worst_shared, 100.0 * worst_local, recovery ? "ok" : "no", to_hz(split),
                to_hz(2.0 * kG), splitting ? "ok" : "no", wall)};
}

// --- 8 -------------------------------------------------------------------------

Outcome criterion8()
{
    const double eps = std::numeric_limits<double>::epsilon();
    double worst_identity = 0.0;
    for (double k : {0.1, 0.6, 1.0, 2.0, 20.0, 60.0}) {
        auto s = continuous_system(0.0);
        s.spin.gamma = k * kG;
        const double got = sympathetic_rate_simplified(s).gamma_sym;
        worst_identity = std::max(worst_identity, std::abs(got / (4.0 * kG * kG / s.spin.gamma) - 1.0));
    }
    const bool identity = worst_identity <= 4.0 * eps;

    double worst_period = 0.0;
    for (double tau : {0.0, 15e-9, 40e-9, 80e-9})
        for (double d : {-5e3, -2e3, 0.0, 1e3, 4e3})
            for (double k : {0.6, 2.0, 20.0}) {
                const auto s = delay_system(tau, k * kG, from_hz(d));
                auto t = s;
                t.tau += std::numbers::pi / s.membrane.omega;
                // Relative to the 4 g^2 / gamma_s prefactor, since the value itself can vanish.
                const double scale = 4.0 * kG * kG / s.spin.gamma;
                auto rel = [](double a, double b, double unit) { return std::abs(a - b) / unit; };
                worst_period = std::max({worst_period,
                                         rel(sympathetic_rate_simplified(t).gamma_sym, sympathetic_rate_simplified(s).gamma_sym, scale),
                                         rel(sympathetic_rate_full(t).gamma_sym, sympathetic_rate_full(s).gamma_sym, scale),
                                         rel(sympathetic_rate_full(t).domega_shift_sq, sympathetic_rate_full(s).domega_shift_sq, scale * kWm)});
                const auto a = steady_state_asymptotic(s), b = steady_state_asymptotic(t);
                if (a.diverges != b.diverges)
                    worst_period = 1.0;
                else if (!a.diverges)
                    worst_period = std::max(worst_period, std::abs(b.value - a.value) / a.value);
            }
    const bool periodic = worst_period <= 1e-9;

    const double n = thermal_occupation(0.216, kWm);
    const bool thermal = std::abs(n / 2.3e3 - 1.0) <= 0.02;
    return {identity && periodic && thermal,
            fmt("4g^2/gamma_s identity worst %.1e (<= 4 eps) %s; periodicity worst %.1e %s; n_th(216 mK) = %.1f "
                "(2.3e3 +-2%%) %s",
                worst_identity, identity ? "ok" : "no", worst_period, periodic ? "ok" : "no", n,
                thermal ? "ok" : "no")};
}

struct Criterion {
    const char* title;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance checks"};
    int only = 0;
    app.add_option("--criterion", only, "run a single criterion (1-8)")->check(CLI::Range(1, 8));
    app.add_option("--threads", g_threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all{
        {"continuous cooling", criterion1}, {"stroboscopic speedup", criterion2},
        {"overdamped rate law", criterion3}, {"Lyapunov vs Monte Carlo", criterion4},
        {"delay signatures", criterion5},   {"stability algebra", criterion6},
        {"spectral round trip", criterion7}, {"formula identities", criterion8},
    };
    int failures = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (only != 0 && static_cast<int>(i) + 1 != only)
            continue;
        Outcome o;
        try {
            o = all[i].run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::printf("C%zu %s %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", all[i].title, o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    }
    return failures;
}
