#include "fixtures.hpp"

#include "spinchill/dynamics.hpp"
#include "spinchill/errors.hpp"
#include "spinchill/simulator.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

using namespace spinchill;
using spinchill::testing::cooling_system;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double frame_period(const CoupledSystem& s) { return kTwoPi / s.membrane.omega; }

// Reference mixer (Steele, Lea and Flood), written out independently.
std::uint64_t reference_mix(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

TrajectoryEnsemble hand_ensemble(std::size_t n_traj, std::size_t n_samples, double interval)
{
    TrajectoryEnsemble e;
    e.n_traj = n_traj;
    e.n_samples = n_samples;
    e.sample_interval = interval;
    e.omega_m = 1.0;
    for (std::size_t i = 0; i < n_samples; ++i)
        e.times.push_back(static_cast<double>(i) * interval);
    e.quadratures.assign(n_traj * n_samples * 4, 0.0);
    e.aborted_at.assign(n_traj, -1);
    return e;
}

}  // namespace

TEST_CASE("noise spec amplitudes")
{
    auto s = cooling_system();
    s.gamma_meas_m = from_hz(50.0);
    const auto n = make_noise_spec(s, 9);
    CHECK_THAT(n.thermal_m, WithinRel(std::sqrt(2.0e4 + 0.5), 1e-15));
    CHECK_THAT(n.thermal_s, WithinRel(std::sqrt(0.5), 1e-15));
    CHECK_THAT(n.vacuum_m, WithinRel(std::sqrt(0.8 / 2.0), 1e-15));
    CHECK_THAT(n.vacuum_s, WithinRel(std::sqrt((1.0 - 0.64) / 2.0), 1e-15));
    CHECK(n.rng_seed == 9);
    const double gm = s.membrane.gamma;
    CHECK_THAT(n.diffusion(Oscillator::Membrane, gm),
               WithinRel(gm * (2.0e4 + 0.5) + 2.0 * s.gamma_meas_m * 0.4, 1e-14));
    const double amp = n.total_amplitude(Oscillator::Membrane, gm);
    CHECK_THAT(gm * amp * amp, WithinRel(n.diffusion(Oscillator::Membrane, gm), 1e-14));
    CHECK(std::isinf(n.total_amplitude(Oscillator::Membrane, 0.0)));
    CHECK(n.total_amplitude(Oscillator::Spin, 0.0) == n.thermal_s);

    const auto scaled = n.scaled(3.0);
    CHECK_THAT(scaled.diffusion(Oscillator::Spin, 2.0), WithinRel(9.0 * n.diffusion(Oscillator::Spin, 2.0), 1e-14));
}

TEST_CASE("zero noise gives zero increments")
{
    const auto s = cooling_system();
    const NoiseSpec quiet;
    const auto m = build_matrix(s);
    const Vec4 inc = noise_increments(m, quiet, frame_period(s), Vec4(1.0, -2.0, 0.3, 4.0));
    CHECK(inc == Vec4::Zero());
    CHECK(noise_increments(m, quiet, frame_period(s), Vec4(1.0, -2.0, 0.3, 4.0), IncrementModel::Full).norm() == 0.0);
}

TEST_CASE("short-time increment covariance is the white-noise limit")
{
    auto s = cooling_system();
    s.g = 0.0;
    const auto m = build_matrix(s);
    const auto noise = make_noise_spec(s, 0);
    const double dt = 5.0 * frame_period(s);
    REQUIRE(s.membrane.gamma * dt < 1e-2);
    const Mat4 cov = increment_covariance(m, noise, dt);
    const double expected = s.membrane.gamma * (s.membrane.n_bath + 0.5) * dt;
    CHECK_THAT(cov(0, 0), WithinRel(expected, 0.01));
    CHECK_THAT(cov(1, 1), WithinRel(expected, 0.01));
    CHECK(cov(0, 1) == 0.0);
}

TEST_CASE("block and full covariances coincide without coupling")
{
    auto s = cooling_system();
    s.g = 0.0;
    s.spin.omega += from_hz(3e3);
    const auto m = build_matrix(s);
    const auto noise = make_noise_spec(s, 0);
    const double dt = 40.0 * frame_period(s);
    const Mat4 block = increment_covariance(m, noise, dt);
    const Mat4 full = increment_covariance(m, noise, dt, IncrementModel::Full);
    CHECK((block - full).norm() < 1e-12 * block.norm());
}

TEST_CASE("misaligned steps are rejected")
{
    const auto s = cooling_system();
    const auto m = build_matrix(s);
    const auto noise = make_noise_spec(s, 0);
    CHECK_NOTHROW(increment_covariance(m, noise, 7.0 * frame_period(s)));
    CHECK_THROWS_AS(increment_covariance(m, noise, 7.3 * frame_period(s)), NumericalError);
    CHECK_THROWS_AS(noise_increments(m, noise, 0.5 * frame_period(s), Vec4::Ones()), NumericalError);
}

TEST_CASE("one-period increment matches a fine-step lab-frame Euler-Maruyama reference")
{
    // Lab frame: dX = Omega P dt, dP = (-Omega X - gamma P) dt + sqrt(2 gamma) F dW with F^2 = n + 1/2,
    // 1000 substeps per frame period, 10^4 trajectories started at rest.
    const auto s = cooling_system();
    const auto noise = make_noise_spec(s, 0);
    const double T = frame_period(s);
    const Mat4 cov = increment_covariance(build_matrix(s), noise, T);

    const int n_traj = 10000, substeps = 1000;
    const double h = T / substeps;
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> normal;
    struct Osc {
        double omega, gamma, force;
    };
    const Osc oscs[2] = {{s.membrane.omega, s.membrane.gamma, noise.thermal_m},
                         {s.spin.omega, s.spin.gamma, noise.thermal_s}};
    for (int which = 0; which < 2; ++which) {
        const Osc& o = oscs[which];
        double sum_x2 = 0.0, sum_p2 = 0.0;
        const double kick = std::sqrt(2.0 * o.gamma * h) * o.force;
        for (int t = 0; t < n_traj; ++t) {
            double x = 0.0, p = 0.0;
            for (int k = 0; k < substeps; ++k) {
                p += (-o.omega * x - o.gamma * p) * h + kick * normal(rng);
                x += o.omega * p * h;
            }
            sum_x2 += x * x;
            sum_p2 += p * p;
        }
        // At a whole period the rotating quadratures coincide with the lab ones.
        const double var = 0.5 * (sum_x2 + sum_p2) / n_traj;
        const double expected = cov(2 * which, 2 * which);
        const double sigma = expected * std::sqrt(1.0 / n_traj);
        CHECK(std::abs(var - expected) < 3.0 * sigma);
    }
}

TEST_CASE("trajectory seeds follow the documented mixing rule")
{
    for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xFFFFFFFFFFFFFFFFULL})
        for (std::uint64_t i : {0ULL, 1ULL, 7ULL, 123456789ULL})
            CHECK(trajectory_seed(seed, i) == reference_mix(reference_mix(seed) ^ i));
    CHECK(reference_mix(0) == 0xE220A8397B1DCDAFULL);
}

TEST_CASE("step plan follows the rate rule and reports rounding")
{
    auto s = cooling_system();
    const double T = frame_period(s);
    const auto plan = plan_steps(s, Schedule::hold(s, 1e-3));
    const double fastest = std::max({s.g, s.spin.gamma, s.membrane.gamma});
    CHECK(plan.dt <= 1.0 / (20.0 * fastest));
    CHECK((plan.frame_periods + 1) * T > 1.0 / (20.0 * fastest));
    CHECK_THAT(plan.dt, WithinRel(plan.frame_periods * T, 1e-15));
    REQUIRE(plan.steps.size() == 1);
    CHECK(std::abs(plan.rounding[0]) <= plan.dt / 2);
    CHECK_THAT(plan.steps[0] * plan.dt - 1e-3, WithinAbs(plan.rounding[0], 1e-15));

    Schedule fast{{{10e-6, 60.0 * s.g, s.spin.omega}, {100e-6, 0.6 * s.g, s.spin.omega}}};
    const auto p2 = plan_steps(s, fast);
    CHECK(p2.frame_periods == 1);
    CHECK(p2.steps.size() == 2);
    CHECK(p2.total_steps == p2.steps[0] + p2.steps[1]);

    CHECK(plan_steps(s, Schedule::hold(s, 1e-3), 3).frame_periods == 3);
    CHECK_THROWS_AS(plan_steps(s, Schedule{{{0.2 * T, s.spin.gamma, s.spin.omega}}}), NumericalError);
    CHECK_THROWS_AS(plan_steps(s, Schedule{}), NumericalError);
    CHECK_THROWS_AS(plan_steps(s, Schedule{{{-1.0, s.spin.gamma, s.spin.omega}}}), NumericalError);
}

TEST_CASE("schedule helpers")
{
    const auto s = cooling_system();
    const Schedule one{{{100e-6, 1.0, 2.0}, {10e-6, 3.0, 4.0}}};
    const auto five = one.repeated(5);
    CHECK(five.segments.size() == 10);
    CHECK_THAT(five.total_duration(), WithinRel(550e-6, 1e-12));
    CHECK(five.segments[3] == one.segments[1]);
    const auto hold = Schedule::hold(s, 2e-3);
    REQUIRE(hold.segments.size() == 1);
    CHECK(hold.segments[0].gamma_s == s.spin.gamma);
    CHECK(hold.segments[0].omega_s == s.spin.omega);
}

TEST_CASE("noiseless ensemble follows the segment propagators")
{
    auto s = cooling_system();
    const Schedule sched{{{30e-6, 0.6 * s.g, s.spin.omega}, {5e-6, 60.0 * s.g, s.spin.omega + from_hz(1e3)}}};
    const auto e = simulate(s, NoiseSpec{}, sched.repeated(2), 3, InitialState{100.0, 5.0});
    const double dt = e.plan.dt;
    const Mat4 p0 = step_propagator(build_matrix(s, SpinOverride{sched.segments[0].gamma_s, sched.segments[0].omega_s}), dt);
    const Mat4 p1 = step_propagator(build_matrix(s, SpinOverride{sched.segments[1].gamma_s, sched.segments[1].omega_s}), dt);
    for (std::size_t t = 0; t < e.n_traj; ++t) {
        Vec4 x = e.state(t, 0);
        std::size_t sample = 0;
        for (int rep = 0; rep < 2; ++rep)
            for (int seg = 0; seg < 2; ++seg)
                for (long i = 0; i < e.plan.steps[static_cast<std::size_t>(2 * rep + seg)]; ++i) {
                    x = (seg == 0 ? p0 : p1) * x;
                    ++sample;
                    CHECK((e.state(t, sample) - x).norm() <= 1e-12 * x.norm());
                }
        CHECK(sample + 1 == e.n_samples);
    }
}

TEST_CASE("ensembles are identical for any number of threads")
{
    const auto s = cooling_system();
    const auto noise = make_noise_spec(s, 77);
    const auto sched = Schedule::hold(s, 2e-4);
    SimulationOptions one, many;
    one.threads = 1;
    many.threads = 4;
    const auto a = simulate(s, noise, sched, 13, InitialState{2e5, std::nullopt}, one);
    const auto b = simulate(s, noise, sched, 13, InitialState{2e5, std::nullopt}, many);
    CHECK(a.quadratures == b.quadratures);
    const auto c = simulate(s, make_noise_spec(s, 78), sched, 13, InitialState{2e5, std::nullopt}, one);
    CHECK(a.quadratures != c.quadratures);

    // Extending the ensemble keeps the existing trajectories.
    const auto d = simulate(s, noise, sched, 20, InitialState{2e5, std::nullopt}, many);
    CHECK(std::equal(a.quadratures.begin(), a.quadratures.end(), d.quadratures.begin()));
}

TEST_CASE("sample stride keeps every n-th step")
{
    const auto s = cooling_system();
    const auto noise = make_noise_spec(s, 5);
    const auto sched = Schedule::hold(s, 1e-4);
    SimulationOptions strided;
    strided.sample_stride = 4;
    const auto a = simulate(s, noise, sched, 2, InitialState{10.0, std::nullopt});
    const auto b = simulate(s, noise, sched, 2, InitialState{10.0, std::nullopt}, strided);
    CHECK(b.n_samples == static_cast<std::size_t>(a.plan.total_steps / 4) + 1);
    CHECK_THAT(b.sample_interval, WithinRel(4.0 * a.sample_interval, 1e-15));
    for (std::size_t i = 0; i < b.n_samples; ++i)
        CHECK(b.state(1, i) == a.state(1, 4 * i));
}

TEST_CASE("noise scaling scales occupation plus one half quadratically")
{
    auto s = cooling_system();
    s.g = 0.0;
    const auto noise = make_noise_spec(s, 3);
    const auto sched = Schedule::hold(s, 5e-4);
    const double c = 2.5;
    const double n0 = 1000.0;
    const auto a = simulate(s, noise, sched, 8, InitialState{n0, 0.0});
    const auto b = simulate(s, noise.scaled(c), sched, 8, InitialState{c * c * (n0 + 0.5) - 0.5, c * c * 0.5 - 0.5});
    const auto ta = occupation_trace(a, Oscillator::Membrane, a.sample_interval);
    const auto tb = occupation_trace(b, Oscillator::Membrane, b.sample_interval);
    for (std::size_t i = 0; i < ta.mean.size(); ++i)
        CHECK_THAT(tb.mean[i] + 0.5, WithinRel(c * c * (ta.mean[i] + 0.5), 1e-10));
}

TEST_CASE("decoupled membrane relaxes at its damping rate")
{
    auto s = cooling_system();
    s.g = 0.0;
    const auto e = simulate(s, make_noise_spec(s, 11), Schedule::hold(s, 2e-3), 2000, InitialState{2e5, std::nullopt});
    const auto tr = occupation_trace(e, Oscillator::Membrane, e.sample_interval);
    // Least squares of log(n - n_bath) against t.
    double st = 0, sy = 0, stt = 0, sty = 0;
    int n = 0;
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        const double y = std::log(tr.mean[i] - s.membrane.n_bath);
        st += tr.times[i];
        sy += y;
        stt += tr.times[i] * tr.times[i];
        sty += tr.times[i] * y;
        ++n;
    }
    const double slope = (n * sty - st * sy) / (n * stt - st * st);
    CHECK_THAT(-slope, WithinRel(s.membrane.gamma, 0.05));
}

TEST_CASE("stationary decoupled occupation equals the bath occupation")
{
    auto s = cooling_system();
    s.g = 0.0;
    s.spin.n_bath = 3.0;
    const auto e = simulate(s, make_noise_spec(s, 21), Schedule::hold(s, 4e-3), 400,
                            InitialState{s.membrane.n_bath, s.spin.n_bath});
    for (int which = 0; which < 2; ++which) {
        std::vector<double> per_traj;
        for (std::size_t t = 0; t < e.n_traj; ++t) {
            double acc = 0.0;
            for (std::size_t i = 0; i < e.n_samples; ++i) {
                const Vec4 x = e.state(t, i);
                acc += 0.5 * (x[2 * which] * x[2 * which] + x[2 * which + 1] * x[2 * which + 1]) - 0.5;
            }
            per_traj.push_back(acc / static_cast<double>(e.n_samples));
        }
        const double mean = std::accumulate(per_traj.begin(), per_traj.end(), 0.0) / per_traj.size();
        double var = 0.0;
        for (double v : per_traj)
            var += (v - mean) * (v - mean);
        const double se = std::sqrt(var / (per_traj.size() - 1) / per_traj.size());
        const double bath = which == 0 ? s.membrane.n_bath : s.spin.n_bath;
        CHECK(std::abs(mean - bath) < 3.0 * se);
    }
}

TEST_CASE("occupation trace of hand-made ensembles")
{
    auto zero = hand_ensemble(2, 10, 1.0);
    const auto t0 = occupation_trace(zero, Oscillator::Membrane, 1.0);
    for (double m : t0.mean)
        CHECK(m == -0.5);
    CHECK(t0.sub_ground);

    auto circle = hand_ensemble(1, 50, 0.1);
    const double r = 7.0;
    for (std::size_t i = 0; i < 50; ++i) {
        const double th = 0.37 * static_cast<double>(i);
        circle.quadratures[i * 4 + 2] = r * std::cos(th);
        circle.quadratures[i * 4 + 3] = r * std::sin(th);
    }
    const auto tc = occupation_trace(circle, Oscillator::Spin, 0.5);
    CHECK(tc.mean.size() == tc.times.size());
    for (std::size_t i = 0; i < tc.mean.size(); ++i) {
        CHECK_THAT(tc.mean[i], WithinRel(r * r / 2.0 - 0.5, 1e-13));
        CHECK(tc.stddev[i] == 0.0);
    }
    CHECK_FALSE(tc.sub_ground);

    CHECK_THROWS_AS(occupation_trace(circle, Oscillator::Spin, 0.05), std::invalid_argument);
    CHECK_THROWS_AS(occupation_trace(hand_ensemble(0, 0, 1.0), Oscillator::Spin, 1.0), std::invalid_argument);
}

TEST_CASE("runaway trajectories are aborted and reported")
{
    auto s = cooling_system();
    s.membrane.gamma = 0.0;
    s.spin.gamma = 0.0;
    // Pick the delay with the strongest anti-damping.
    double best = -INFINITY, best_tau = 0.0;
    for (int k = 0; k < 64; ++k) {
        auto trial = s;
        trial.tau = k / 64.0 * kTwoPi / s.membrane.omega;
        const double re = eigenvalues(build_matrix(trial))[0].real();
        if (re > best) {
            best = re;
            best_tau = trial.tau;
        }
    }
    REQUIRE(best > 0.5 * s.g);
    s.tau = best_tau;
    const double duration = 800.0 / best;
    const auto e = simulate(s, NoiseSpec{}, Schedule::hold(s, duration), 2, InitialState{1.0, std::nullopt});
    CHECK(e.aborted_count() == 2);
    for (std::size_t t = 0; t < 2; ++t) {
        REQUIRE(e.aborted_at[t] > 0);
        CHECK(std::isnan(e.state(t, e.n_samples - 1)[0]));
    }
    CHECK_THROWS_AS(occupation_trace(e, Oscillator::Membrane, e.sample_interval), std::invalid_argument);
}

TEST_CASE("simulate rejects bad input")
{
    auto s = cooling_system();
    const auto noise = make_noise_spec(s, 0);
    const auto sched = Schedule::hold(s, 1e-4);
    CHECK_THROWS_AS(simulate(s, noise, sched, 0, InitialState{1.0, std::nullopt}), std::invalid_argument);
    CHECK_THROWS_AS(simulate(s, noise, sched, 1, InitialState{-1.0, std::nullopt}), std::invalid_argument);
    s.eta_sq = 2.0;
    CHECK_THROWS_AS(simulate(s, noise, sched, 1, InitialState{1.0, std::nullopt}), std::invalid_argument);
}
