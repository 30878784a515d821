#include "spinchill/simulator.hpp"

#include "spinchill/errors.hpp"
#include "spinchill/expm.hpp"
#include "spinchill/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace spinchill {

double NoiseSpec::diffusion(Oscillator which, double gamma) const
{
    if (which == Oscillator::Membrane)
        return gamma * thermal_m * thermal_m + 2.0 * gamma_meas_m * vacuum_m * vacuum_m;
    return gamma * thermal_s * thermal_s + 2.0 * gamma_meas_s * vacuum_s * vacuum_s;
}

double NoiseSpec::total_amplitude(Oscillator which, double gamma) const
{
    const bool membrane = which == Oscillator::Membrane;
    const double thermal = membrane ? thermal_m : thermal_s;
    const double vacuum = membrane ? vacuum_m : vacuum_s;
    const double rate = membrane ? gamma_meas_m : gamma_meas_s;
    if (rate == 0.0)
        return thermal;
    if (gamma == 0.0)
        return std::numeric_limits<double>::infinity();
    return std::sqrt(thermal * thermal + 2.0 * rate / gamma * vacuum * vacuum);
}

NoiseSpec NoiseSpec::scaled(double c) const
{
    NoiseSpec out = *this;
    out.thermal_m *= c;
    out.thermal_s *= c;
    out.vacuum_m *= c;
    out.vacuum_s *= c;
    return out;
}

NoiseSpec make_noise_spec(const CoupledSystem& system, std::uint64_t seed)
{
    NoiseSpec spec;
    spec.thermal_m = std::sqrt(system.membrane.n_bath + 0.5);
    spec.thermal_s = std::sqrt(system.spin.n_bath + 0.5);
    spec.vacuum_m = std::sqrt(system.eta_sq / 2.0);
    spec.vacuum_s = std::sqrt(std::max(0.0, 1.0 - system.eta_sq * system.eta_sq) / 2.0);
    spec.gamma_meas_m = system.gamma_meas_m;
    spec.gamma_meas_s = system.gamma_meas_s;
    spec.rng_seed = seed;
    return spec;
}

Mat4 diffusion_matrix(const DynamicalMatrix& matrix, const NoiseSpec& noise)
{
    const double dm = noise.diffusion(Oscillator::Membrane, matrix.built_from.gamma_m);
    const double ds = noise.diffusion(Oscillator::Spin, matrix.built_from.gamma_s);
    return Vec4(dm, dm, ds, ds).asDiagonal();
}

namespace {

void check_frame_alignment(double dt, double omega_m)
{
    if (dt < 0.0)
        throw NumericalError("noise increment: negative time step");
    const double periods = dt * omega_m / kTwoPi;
    if (std::abs(periods - std::round(periods)) > 1e-9 * std::max(1.0, periods)) {
        std::ostringstream os;
        os << "noise increment: dt = " << dt << " s is not a whole number of frame periods ("
           << periods << ")";
        throw NumericalError(os.str());
    }
}

// integral_0^dt exp(-gamma s) ds, accurate for small gamma dt.
double decay_integral(double gamma, double dt)
{
    if (gamma == 0.0)
        return dt;
    return -std::expm1(-gamma * dt) / gamma;
}

Mat4 full_covariance(const DynamicalMatrix& matrix, const Mat4& diffusion, double dt)
{
    using Mat8 = Eigen::Matrix<double, 8, 8>;
    Mat8 block = Mat8::Zero();
    block.topLeftCorner<4, 4>() = -matrix.m * dt;
    block.topRightCorner<4, 4>() = diffusion * dt;
    block.bottomRightCorner<4, 4>() = matrix.m.transpose() * dt;
    const Mat8 e = expm(block);
    const Mat4 phi = e.topLeftCorner<4, 4>();
    const Mat4 q = e.topRightCorner<4, 4>() * phi.transpose();
    return 0.5 * (q + q.transpose());
}

// Any L with L L^T = cov; cov may be singular.
Mat4 covariance_factor(const Mat4& cov)
{
    Eigen::SelfAdjointEigenSolver<Mat4> eig(cov);
    const Vec4 roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * roots.asDiagonal();
}

}  // namespace

Mat4 increment_covariance(const DynamicalMatrix& matrix, const NoiseSpec& noise, double dt, IncrementModel model)
{
    check_frame_alignment(dt, matrix.built_from.omega_m);
    const Mat4 d = diffusion_matrix(matrix, noise);
    if (model == IncrementModel::Full)
        return full_covariance(matrix, d, dt);

    // Each block drifts as gamma/2 times identity plus a rotation, and its
    // diffusion is isotropic, so the rotation drops out of the integral.
    const double var_m = d(0, 0) * decay_integral(matrix.built_from.gamma_m, dt);
    const double var_s = d(2, 2) * decay_integral(matrix.built_from.gamma_s, dt);
    return Vec4(var_m, var_m, var_s, var_s).asDiagonal();
}

Vec4 noise_increments(const DynamicalMatrix& matrix, const NoiseSpec& noise, double dt, const Vec4& draws,
                      IncrementModel model)
{
    const Mat4 cov = increment_covariance(matrix, noise, dt, model);
    if (model == IncrementModel::BlockDiagonal)
        return cov.diagonal().cwiseSqrt().cwiseProduct(draws);
    return covariance_factor(cov) * draws;
}

double Schedule::total_duration() const
{
    double total = 0.0;
    for (const auto& s : segments)
        total += s.duration;
    return total;
}

Schedule Schedule::hold(const CoupledSystem& system, double duration)
{
    return Schedule{{Segment{duration, system.spin.gamma, system.spin.omega}}};
}

Schedule Schedule::repeated(int times) const
{
    Schedule out;
    for (int i = 0; i < times; ++i)
        out.segments.insert(out.segments.end(), segments.begin(), segments.end());
    return out;
}

StepPlan plan_steps(const CoupledSystem& system, const Schedule& schedule, std::optional<int> frame_periods)
{
    if (schedule.segments.empty())
        throw NumericalError("schedule has no segments");

    const double period = kTwoPi / system.membrane.omega;
    StepPlan plan;
    if (frame_periods) {
        if (*frame_periods < 1)
            throw NumericalError("frame periods per step must be >= 1");
        plan.frame_periods = *frame_periods;
    } else {
        // gamma_m is included so that decoupled runs still resolve the membrane decay.
        double fastest = std::max(system.g, system.membrane.gamma);
        for (const auto& seg : schedule.segments)
            fastest = std::max({fastest, seg.gamma_s, std::abs(seg.omega_s - system.membrane.omega)});
        const double cap = fastest > 0.0 ? 1.0 / (20.0 * fastest) : period;
        plan.frame_periods = std::max(1, static_cast<int>(std::floor(cap / period)));
    }
    plan.dt = plan.frame_periods * period;

    for (const auto& seg : schedule.segments) {
        if (!(seg.duration > 0.0) || !std::isfinite(seg.duration))
            throw NumericalError("schedule segment duration must be positive");
        const long steps = std::lround(seg.duration / plan.dt);
        if (steps < 1) {
            std::ostringstream os;
            os << "schedule segment of " << seg.duration << " s is shorter than half a step (" << plan.dt << " s)";
            throw NumericalError(os.str());
        }
        plan.steps.push_back(steps);
        plan.rounding.push_back(steps * plan.dt - seg.duration);
        plan.total_steps += steps;
    }
    return plan;
}

Vec4 TrajectoryEnsemble::state(std::size_t traj, std::size_t sample) const
{
    const std::size_t base = (traj * n_samples + sample) * 4;
    return Vec4(quadratures[base], quadratures[base + 1], quadratures[base + 2], quadratures[base + 3]);
}

std::span<const double> TrajectoryEnsemble::trajectory(std::size_t traj) const
{
    return std::span<const double>(quadratures).subspan(traj * n_samples * 4, n_samples * 4);
}

std::size_t TrajectoryEnsemble::aborted_count() const
{
    return static_cast<std::size_t>(std::count_if(aborted_at.begin(), aborted_at.end(), [](long a) { return a >= 0; }));
}

namespace {

std::uint64_t splitmix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct SegmentKernel {
    Mat4 propagator;
    Mat4 noise_factor;
    long steps = 0;
};

}  // namespace

std::uint64_t trajectory_seed(std::uint64_t seed, std::uint64_t index)
{
    return splitmix64(splitmix64(seed) ^ index);
}

TrajectoryEnsemble simulate(const CoupledSystem& system, const NoiseSpec& noise, const Schedule& schedule,
                            std::size_t n_traj, const InitialState& initial, const SimulationOptions& options)
{
    if (const auto violations = validate(system); !violations.empty())
        throw std::invalid_argument("simulate: invalid system: " + violations.front().message);
    if (n_traj == 0)
        throw std::invalid_argument("simulate: need at least one trajectory");
    if (options.sample_stride < 1)
        throw std::invalid_argument("simulate: sample stride must be >= 1");
    const double n_spin0 = initial.n_spin.value_or(system.spin.n_bath);
    if (initial.n_membrane < 0.0 || n_spin0 < 0.0)
        throw std::invalid_argument("simulate: initial occupations must be non-negative");

    TrajectoryEnsemble out;
    out.plan = plan_steps(system, schedule, options.frame_periods);
    const double dt = out.plan.dt;

    std::vector<SegmentKernel> kernels;
    for (std::size_t s = 0; s < schedule.segments.size(); ++s) {
        const auto& seg = schedule.segments[s];
        const auto matrix = build_matrix(system, SpinOverride{seg.gamma_s, seg.omega_s});
        const Mat4 cov = increment_covariance(matrix, noise, dt, options.increments);
        kernels.push_back({step_propagator(matrix, dt), covariance_factor(cov), out.plan.steps[s]});
    }

    const auto stride = static_cast<long>(options.sample_stride);
    out.n_traj = n_traj;
    out.n_samples = static_cast<std::size_t>(out.plan.total_steps / stride) + 1;
    out.omega_m = system.membrane.omega;
    out.sample_interval = dt * static_cast<double>(stride);
    out.times.resize(out.n_samples);
    for (std::size_t i = 0; i < out.n_samples; ++i)
        out.times[i] = static_cast<double>(i) * out.sample_interval;
    out.quadratures.assign(n_traj * out.n_samples * 4, std::numeric_limits<double>::quiet_NaN());
    out.aborted_at.assign(n_traj, -1);

    const double sigma_m = std::sqrt(initial.n_membrane + 0.5);
    const double sigma_s = std::sqrt(n_spin0 + 0.5);

    parallel_for(n_traj, options.threads, [&](std::size_t traj) {
        std::mt19937_64 rng(trajectory_seed(noise.rng_seed, traj));
        std::normal_distribution<double> normal;
        auto draw = [&] {
            Vec4 v;
            for (int q = 0; q < 4; ++q)
                v[q] = normal(rng);
            return v;
        };

        double* dst = out.quadratures.data() + traj * out.n_samples * 4;
        Vec4 x = draw().cwiseProduct(Vec4(sigma_m, sigma_m, sigma_s, sigma_s));
        Eigen::Map<Vec4>{dst} = x;

        long step = 0;
        for (const auto& kernel : kernels) {
            for (long i = 0; i < kernel.steps; ++i) {
                x = kernel.propagator * x + kernel.noise_factor * draw();
                ++step;
                if (step % stride != 0)
                    continue;
                const long sample = step / stride;
                if (!x.allFinite()) {
                    out.aborted_at[traj] = sample;
                    return;
                }
                Eigen::Map<Vec4>{dst + sample * 4} = x;
            }
        }
    });
    return out;
}

OccupationTrace occupation_trace(const TrajectoryEnsemble& ensemble, Oscillator which, double window)
{
    if (ensemble.n_traj == 0 || ensemble.n_samples == 0 || ensemble.aborted_count() == ensemble.n_traj)
        throw std::invalid_argument("occupation_trace: empty ensemble");
    if (window < ensemble.sample_interval * (1.0 - 1e-9))
        throw std::invalid_argument("occupation_trace: window shorter than the sampling interval");

    const auto width = static_cast<std::size_t>(
        std::clamp<long>(std::lround(window / ensemble.sample_interval), 1, static_cast<long>(ensemble.n_samples)));
    const std::size_t n_out = ensemble.n_samples - width + 1;
    const std::size_t offset = which == Oscillator::Membrane ? 0 : 2;

    std::vector<double> mean(n_out, 0.0), m2(n_out, 0.0);
    std::vector<long double> prefix(ensemble.n_samples + 1);
    std::size_t count = 0;
    for (std::size_t traj = 0; traj < ensemble.n_traj; ++traj) {
        if (ensemble.aborted_at[traj] >= 0)
            continue;
        const auto data = ensemble.trajectory(traj);
        prefix[0] = 0.0L;
        for (std::size_t s = 0; s < ensemble.n_samples; ++s) {
            const double x = data[s * 4 + offset];
            const double p = data[s * 4 + offset + 1];
            prefix[s + 1] = prefix[s] + static_cast<long double>(0.5 * (x * x + p * p) - 0.5);
        }
        ++count;
        for (std::size_t t = 0; t < n_out; ++t) {
            const double value = static_cast<double>((prefix[t + width] - prefix[t]) / width);
            const double d = value - mean[t];
            mean[t] += d / static_cast<double>(count);
            m2[t] += d * (value - mean[t]);
        }
    }

    OccupationTrace trace;
    trace.times.assign(ensemble.times.begin() + static_cast<long>(width - 1), ensemble.times.end());
    trace.mean = std::move(mean);
    trace.stddev.resize(n_out);
    for (std::size_t t = 0; t < n_out; ++t)
        trace.stddev[t] = count > 1 ? std::sqrt(m2[t] / static_cast<double>(count - 1)) : 0.0;
    trace.sub_ground = std::any_of(trace.mean.begin(), trace.mean.end(), [](double v) { return v < 0.0; });
    return trace;
}

}  // namespace spinchill
