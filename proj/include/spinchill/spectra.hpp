#pragma once

#include "spinchill/levmar.hpp"
#include "spinchill/model.hpp"
#include "spinchill/simulator.hpp"

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace spinchill {

/// Parameters of the two bare oscillators and their delayed coupling, in rad/s and s.
struct SusceptibilityModel {
    double omega_m = 0.0;
    double omega_s = 0.0;
    double gamma_m = 0.0;
    double gamma_s = 0.0;
    double g = 0.0;
    double tau = 0.0;

    static SusceptibilityModel from_system(const CoupledSystem& system);

    /// Omega_i / (Omega_i^2 - omega^2 - i omega gamma_i).
    std::complex<double> chi0(Oscillator which, double omega) const;
    /// chi_eff^-1 = chi_0^-1 - 4 g^2 exp(2 i omega tau) chi_0,other.
    std::complex<double> chi_eff(Oscillator which, double omega) const;
};

std::complex<double> chi_eff(const SusceptibilityModel& model, Oscillator which, double omega);

/// One measured membrane spectrum on a grid of detunings from the problem's reference frequency.
struct Dataset {
    std::string label;
    std::vector<double> detuning;  // rad/s
    std::vector<double> psd;
    std::vector<double> weights;   // empty means unit weights
};

/// Shared and per-dataset parameters of the spectral model
///   S(omega) = a^2 |chi_m,eff(omega)|^2 + floor.
struct FitParameters {
    double scale = 1.0;  // a
    double omega_m = 0.0;
    double tau = 0.0;
    double g = 0.0;
    double floor = 0.0;
    double gamma_m = 0.0;
    std::vector<double> omega_s;  // one per dataset
    std::vector<double> gamma_s;  // one per dataset

    std::size_t n_datasets() const { return omega_s.size(); }
    std::vector<double> flatten() const;
    static FitParameters unflatten(const std::vector<double>& flat, std::size_t n_datasets);
    /// "scale", "omega_m", "tau", "g", "floor", "gamma_m", then "omega_s[k]", "gamma_s[k]" per dataset.
    static std::vector<std::string> names(std::size_t n_datasets);

    SusceptibilityModel model(std::size_t dataset) const;
};

struct FitProblem {
    double omega_ref = 0.0;  // detunings are measured from here
    std::vector<Dataset> datasets;
    FitParameters initial;
    std::optional<FitParameters> lower;
    std::optional<FitParameters> upper;
    /// Parameter names held at their initial value.
    std::vector<std::string> fixed{"gamma_m"};
    bool log_space = true;
    LmOptions lm;
};

/// a^2 |chi_m,eff|^2 + floor for dataset `index` at the given detuning.
double psd_model(const FitProblem& problem, const FitParameters& params, std::size_t index, double detuning);

/// Stacked weighted residuals over all datasets (log or linear, per the problem).
Eigen::VectorXd fit_residuals(const FitProblem& problem, const FitParameters& params);
/// d residual / d parameter for all parameters in flatten() order (fixed ones included).
Eigen::MatrixXd fit_jacobian(const FitProblem& problem, const FitParameters& params);
/// Finite-difference counterpart of fit_jacobian (Richardson-extrapolated central differences).
Eigen::MatrixXd fit_jacobian_numeric(const FitProblem& problem, const FitParameters& params);

struct FitResult {
    FitParameters params;
    LmStatus status = LmStatus::MaxIterations;
    bool converged = false;
    int iterations = 0;
    double cost = 0.0;
    std::vector<double> cost_history;
    std::vector<double> residual_norms;  // per dataset
    std::vector<std::string> free_names;
    /// Covariance of the free parameters, sigma^2 (J^T J)^-1; empty when J is singular.
    std::optional<Eigen::MatrixXd> covariance;
    bool singular = false;

    /// Standard error of a free parameter, if a covariance is available.
    std::optional<double> stderr_of(const std::string& name) const;
};

/// Weighted least squares over all free global and per-dataset parameters.
FitResult global_fit(const FitProblem& problem);

struct PeakSummary {
    double center = 0.0;  // detuning, rad/s
    double height = 0.0;
    double width = 0.0;   // full width at half maximum above the floor, rad/s
};

/// Local maxima standing at least `prominence` (ratio) above the surrounding minima,
/// tallest first.
std::vector<PeakSummary> find_peaks(const Dataset& data, double prominence = 2.0);

struct LorentzianFit {
    double center = 0.0;  // rad/s
    double width = 0.0;   // FWHM, rad/s
    double height = 0.0;
    double floor = 0.0;
    bool converged = false;
};

/// h / (1 + (2 (x - c) / w)^2) + floor, fitted in log space.
LorentzianFit fit_lorentzian(const Dataset& data);

/// Initial guesses from the data: Lorentzian pre-fits seed (omega_s, gamma_s) per dataset,
/// half the peak splitting seeds g when two peaks are resolved. Fields of `base` are kept
/// where the data say nothing.
FitParameters seed_parameters(const FitProblem& problem, const FitParameters& base);

struct MultiStartOptions {
    std::vector<double> tau_seeds;  // s; each is tried from the same start
    int threads = 0;
};

/// global_fit from every tau seed (plus the problem's own initial tau), keeping the lowest cost.
FitResult multistart_fit(const FitProblem& problem, const MultiStartOptions& options);

enum class WindowFunction { Hann, Rectangular };

struct Segmenting {
    std::size_t length = 1024;
    double overlap = 0.5;
    WindowFunction window = WindowFunction::Hann;
};

/// Welch estimate of the one-sided lab-frame displacement PSD near Omega_m.
struct PsdEstimate {
    std::vector<double> detuning;   // rad/s from Omega_m, ascending
    std::vector<double> frequency;  // Hz, lab frame
    std::vector<double> psd;        // per Hz
    std::vector<double> psd_err;    // standard error of the mean periodogram
    double variance = 0.0;          // mean lab-frame variance of the analysed samples
    std::size_t segments = 0;

    /// sum psd * bin width.
    double integrated() const;
};

/// Averaged periodogram of X = X~ cos(Omega_m t) + P~ sin(Omega_m t), computed from the
/// complex envelope X~ - i P~. Aborted trajectories are skipped.
PsdEstimate estimate_psd(const TrajectoryEnsemble& ensemble, Oscillator which, const Segmenting& segmenting);

}  // namespace spinchill
