#pragma once

#include "spinchill/dynamics.hpp"
#include "spinchill/model.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace spinchill {

enum class Oscillator { Membrane, Spin };

/// Langevin force amplitudes for both oscillators.
///
/// The total force on oscillator j is sqrt(2 gamma_j) F_tot with
///   F_tot = thermal_j f_th + sqrt(2 Gamma_j / gamma_j) vacuum_j f_in,
/// so the white-noise density seen by each rotating-frame quadrature is
///   gamma_j thermal_j^2 + 2 Gamma_j vacuum_j^2
/// (the 1/2 from averaging sin^2 and cos^2 over whole frame periods is included).
struct NoiseSpec {
    double thermal_m = 0.0;  // sqrt(n_bath,m + 1/2)
    double thermal_s = 0.0;  // sqrt(n_bath,s + 1/2)
    double vacuum_m = 0.0;   // sqrt(eta^2 / 2)
    double vacuum_s = 0.0;   // sqrt((1 - eta^4) / 2)
    double gamma_meas_m = 0.0;
    double gamma_meas_s = 0.0;
    std::uint64_t rng_seed = 0;

    /// Per-quadrature diffusion density for the given damping rate.
    double diffusion(Oscillator which, double gamma) const;
    /// sqrt(thermal^2 + (2 Gamma / gamma) vacuum^2); infinite if gamma = 0 and Gamma > 0.
    double total_amplitude(Oscillator which, double gamma) const;
    /// All amplitudes multiplied by c.
    NoiseSpec scaled(double c) const;

    bool operator==(const NoiseSpec&) const = default;
};

NoiseSpec make_noise_spec(const CoupledSystem& system, std::uint64_t seed);

/// diag(D_m, D_m, D_s, D_s) for the damping rates encoded in the matrix.
Mat4 diffusion_matrix(const DynamicalMatrix& matrix, const NoiseSpec& noise);

enum class IncrementModel {
    BlockDiagonal,  // exact per-oscillator covariance, cross-oscillator blocks dropped
    Full,           // exact 4x4 covariance including coupling (validation)
};

/// Covariance of the noise accumulated over one step:
/// integral_0^dt exp(-M s) D exp(-M^T s) ds. Throws NumericalError unless dt is a
/// whole number of frame periods 2 pi / Omega_m.
Mat4 increment_covariance(const DynamicalMatrix& matrix, const NoiseSpec& noise, double dt,
                          IncrementModel model = IncrementModel::BlockDiagonal);

/// Maps four standard normal draws onto a correlated noise increment.
Vec4 noise_increments(const DynamicalMatrix& matrix, const NoiseSpec& noise, double dt,
                      const Vec4& draws, IncrementModel model = IncrementModel::BlockDiagonal);

/// One piecewise-constant stretch of spin parameters.
struct Segment {
    double duration = 0.0;  // s
    double gamma_s = 0.0;   // rad/s
    double omega_s = 0.0;   // rad/s

    bool operator==(const Segment&) const = default;
};

struct Schedule {
    std::vector<Segment> segments;

    double total_duration() const;
    /// The system's own spin parameters held for `duration`.
    static Schedule hold(const CoupledSystem& system, double duration);
    /// This schedule concatenated `times` times.
    Schedule repeated(int times) const;

    bool operator==(const Schedule&) const = default;
};

/// Integration grid chosen for a schedule.
struct StepPlan {
    double dt = 0.0;
    int frame_periods = 1;        // k in dt = k 2 pi / Omega_m
    std::vector<long> steps;      // per segment
    std::vector<double> rounding; // snapped minus requested duration, per segment
    long total_steps = 0;
};

/// Chooses k so that dt <= min(1/(20 g), 1/(20 gamma_s), 1/(20 |delta|)) over all
/// segments (k >= 1), unless `frame_periods` forces it, then snaps every segment to
/// the grid. Throws NumericalError when a segment rounds to zero steps.
StepPlan plan_steps(const CoupledSystem& system, const Schedule& schedule,
                    std::optional<int> frame_periods = std::nullopt);

/// Gaussian initial state with the given mean occupations.
struct InitialState {
    double n_membrane = 0.0;
    std::optional<double> n_spin;  // defaults to the spin bath occupation
};

struct SimulationOptions {
    int threads = 0;
    int sample_stride = 1;  // record every n-th step
    IncrementModel increments = IncrementModel::BlockDiagonal;
    std::optional<int> frame_periods;
};

/// Rotating-frame quadrature time series of many independent trajectories.
struct TrajectoryEnsemble {
    std::size_t n_traj = 0;
    std::size_t n_samples = 0;
    double omega_m = 0.0;
    double sample_interval = 0.0;
    std::vector<double> times;
    /// Row-major [traj][sample][quadrature].
    std::vector<double> quadratures;
    /// Sample index where a trajectory went non-finite and was stopped; -1 if it completed.
    std::vector<long> aborted_at;
    StepPlan plan;

    Vec4 state(std::size_t traj, std::size_t sample) const;
    std::span<const double> trajectory(std::size_t traj) const;
    std::size_t aborted_count() const;
};

/// 64-bit seed of trajectory i: splitmix64(splitmix64(seed) ^ i).
std::uint64_t trajectory_seed(std::uint64_t seed, std::uint64_t index);

/// Integrates x(t + dt) = exp(-M dt) x(t) + noise for every trajectory, rebuilding M and
/// the noise covariance at each schedule segment. Output is independent of thread count.
TrajectoryEnsemble simulate(const CoupledSystem& system, const NoiseSpec& noise, const Schedule& schedule,
                            std::size_t n_traj, const InitialState& initial,
                            const SimulationOptions& options = {});

struct OccupationTrace {
    std::vector<double> times;  // end of each averaging window
    std::vector<double> mean;
    std::vector<double> stddev;
    bool sub_ground = false;    // some ensemble mean below zero
};

/// Sliding-window (trailing) average of (X~^2 + P~^2)/2 - 1/2 per trajectory, then
/// ensemble mean and standard deviation. Aborted trajectories are skipped.
OccupationTrace occupation_trace(const TrajectoryEnsemble& ensemble, Oscillator which, double window);

}  // namespace spinchill
