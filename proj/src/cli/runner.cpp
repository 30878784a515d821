#include "spinchill/cli/runner.hpp"

#include "spinchill/analysis.hpp"
#include "spinchill/errors.hpp"
#include "spinchill/parallel.hpp"
#include "spinchill/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#ifndef SPINCHILL_VERSION
#define SPINCHILL_VERSION "0.0.0"
#endif

namespace spinchill::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kManifestVersion = 1;

// Shared state of one run: output location, bookkeeping for the manifest.
struct Context {
    RunConfig config;
    fs::path dir;
    int threads = 1;
    std::ostream* log = nullptr;
    std::vector<fs::path> files;
    std::vector<std::string> warnings;
    json run = json::object();

    fs::path file(const std::string& name) const { return dir / (config.output.prefix + name); }

    void say(const std::string& message) const
    {
        if (log)
            *log << "spinchill: " << message << '\n';
    }

    void warn(const std::string& message)
    {
        warnings.push_back(message);
        say("warning: " + message);
    }

    void finish(CsvWriter& writer)
    {
        writer.close();
        files.push_back(writer.path());
        say("wrote " + writer.path().string() + " (" + std::to_string(writer.rows()) + " rows)");
    }
};

json plan_json(const StepPlan& plan)
{
    return {{"frame_periods", plan.frame_periods},
            {"dt_s", plan.dt},
            {"steps", plan.steps},
            {"rounding_s", plan.rounding},
            {"total_steps", plan.total_steps}};
}

IncrementModel increment_model(const std::string& name)
{
    return name == "full" ? IncrementModel::Full : IncrementModel::BlockDiagonal;
}

TrajectoryEnsemble run_ensemble(Context& ctx, const CoupledSystem& system)
{
    const auto& e = ctx.config.ensemble;
    const NoiseSpec noise = make_noise_spec(system, e.seed);
    const Schedule schedule = build_schedule(ctx.config, system);
    SimulationOptions opt;
    opt.threads = ctx.threads;
    opt.sample_stride = e.sample_stride;
    opt.increments = increment_model(e.increments);
    opt.frame_periods = e.frame_periods;

    ctx.say("simulating " + std::to_string(e.n_traj) + " trajectories over " +
            std::to_string(schedule.total_duration()) + " s");
    auto ensemble = simulate(system, noise, schedule, e.n_traj, InitialState{e.initial_n_m, e.initial_n_s}, opt);

    ctx.run["plan"] = plan_json(ensemble.plan);
    ctx.run["samples"] = ensemble.n_samples;
    ctx.run["sample_interval_s"] = ensemble.sample_interval;
    ctx.run["aborted_trajectories"] = ensemble.aborted_count();
    std::size_t snapped = 0;
    double worst = 0.0;
    for (double r : ensemble.plan.rounding)
        if (r != 0.0) {
            ++snapped;
            worst = std::max(worst, std::abs(r));
        }
    if (snapped > 0) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%zu segment(s) snapped to the step grid, largest change %.3g s", snapped,
                      worst);
        ctx.warn(buf);
    }
    if (ensemble.aborted_count() > 0)
        ctx.warn(std::to_string(ensemble.aborted_count()) + " trajectories went non-finite and were dropped");
    if (ensemble.aborted_count() == ensemble.n_traj)
        throw NumericalError("every trajectory went non-finite");
    return ensemble;
}

void run_simulate(Context& ctx)
{
    const CoupledSystem system = ctx.config.system.to_system();
    const auto ensemble = run_ensemble(ctx, system);
    const double window = ctx.config.ensemble.window_s;
    const auto m = occupation_trace(ensemble, Oscillator::Membrane, window);
    const auto s = occupation_trace(ensemble, Oscillator::Spin, window);
    if (m.sub_ground || s.sub_ground)
        ctx.warn("ensemble mean occupation below the ground state at some times");

    CsvWriter out(ctx.file("occupation.csv"), {"time_s", "n_m_mean", "n_m_std", "n_s_mean", "n_s_std"},
                  "time_s=s, n=quanta (trailing window " + std::to_string(window) + " s)");
    for (std::size_t i = 0; i < m.times.size(); ++i)
        out.row({m.times[i], m.mean[i], m.stddev[i], s.mean[i], s.stddev[i]});
    ctx.finish(out);
    if (!m.mean.empty())
        ctx.run["final_n_m"] = m.mean.back();
}

// Fits the membrane susceptibility to a single measured spectrum, starting from the system.
FitResult fit_single_spectrum(Context& ctx, const CoupledSystem& system, const Dataset& data)
{
    FitProblem problem;
    problem.omega_ref = system.membrane.omega;
    problem.datasets = {data};
    FitParameters p;
    p.omega_m = system.membrane.omega;
    p.tau = system.tau;
    p.g = system.g;
    p.gamma_m = system.membrane.gamma;
    p.omega_s = {system.spin.omega};
    p.gamma_s = {system.spin.gamma};
    p.scale = 1.0;
    p.floor = 0.0;
    std::vector<double> ratio;
    for (std::size_t i = 0; i < data.psd.size(); ++i)
        ratio.push_back(data.psd[i] / psd_model(problem, p, 0, data.detuning[i]));
    std::nth_element(ratio.begin(), ratio.begin() + static_cast<long>(ratio.size() / 2), ratio.end());
    p.scale = std::sqrt(ratio[ratio.size() / 2]);
    p.floor = 1e-3 * *std::min_element(data.psd.begin(), data.psd.end());
    problem.initial = p;
    problem.fixed = ctx.config.fit.fixed;
    problem.log_space = ctx.config.fit.log_space;
    default_bounds(problem);
    return global_fit(problem);
}

void run_spectrum(Context& ctx)
{
    const CoupledSystem system = ctx.config.system.to_system();
    const auto ensemble = run_ensemble(ctx, system);
    const auto& sc = ctx.config.spectrum;
    Segmenting seg{sc.segment_length, sc.overlap,
                   sc.window == "rectangular" ? WindowFunction::Rectangular : WindowFunction::Hann};
    const auto est = estimate_psd(ensemble, Oscillator::Membrane, seg);
    ctx.run["segments"] = est.segments;
    ctx.run["variance"] = est.variance;
    ctx.run["integrated_psd"] = est.integrated();

    Dataset data{"membrane", {}, {}, {}};
    const double span = from_hz(sc.fit_span_hz);
    for (std::size_t i = 0; i < est.detuning.size(); ++i)
        if (std::abs(est.detuning[i]) <= span && est.psd[i] > 0.0) {
            data.detuning.push_back(est.detuning[i]);
            data.psd.push_back(est.psd[i]);
        }
    std::optional<FitResult> fit;
    if (data.psd.size() >= 8) {
        fit = fit_single_spectrum(ctx, system, data);
        if (!fit->converged)
            ctx.warn(std::string("spectrum fit did not converge: ") + to_string(fit->status));
        ctx.run["fit"] = {{"status", to_string(fit->status)},
                          {"cost", fit->cost},
                          {"g_hz", to_hz(fit->params.g)},
                          {"tau_s", fit->params.tau},
                          {"omega_m_hz", to_hz(fit->params.omega_m)},
                          {"omega_s_hz", to_hz(fit->params.omega_s[0])},
                          {"gamma_s_hz", to_hz(fit->params.gamma_s[0])},
                          {"gamma_m_hz", to_hz(fit->params.gamma_m)}};
    } else {
        ctx.warn("too few spectral bins inside the fit span; model column left empty");
    }

    FitProblem eval;
    eval.omega_ref = system.membrane.omega;
    eval.datasets = {data};
    CsvWriter out(ctx.file("spectrum.csv"), {"freq_hz", "detuning_hz", "psd", "psd_err", "model"},
                  "freq_hz=Hz (lab frame), detuning_hz=Hz from membrane frequency, psd=quadrature^2/Hz");
    for (std::size_t i = 0; i < est.detuning.size(); ++i) {
        const double model = fit ? psd_model(eval, fit->params, 0, est.detuning[i]) : kNaN;
        out.row({est.frequency[i], to_hz(est.detuning[i]), est.psd[i], est.psd_err[i], model});
    }
    ctx.finish(out);
}

void write_fit_outputs(Context& ctx, const FitProblem& problem, const FitResult& result,
                       const std::optional<FitParameters>& truth)
{
    const std::size_t nd = problem.datasets.size();
    const auto names = FitParameters::names(nd);
    const auto values = result.params.flatten();
    const auto initial = problem.initial.flatten();
    const auto truth_values = truth ? truth->flatten() : std::vector<double>(values.size(), kNaN);

    CsvWriter params(ctx.file("fit_parameters.csv"), {"parameter", "value", "stderr", "initial", "truth"},
                     "frequencies and rates in Hz, tau in s, scale and floor in data units");
    for (std::size_t i = 0; i < names.size(); ++i) {
        const bool angular = names[i] != "scale" && names[i] != "tau" && names[i] != "floor";
        const double c = angular ? 1.0 / kTwoPi : 1.0;
        const auto err = result.stderr_of(names[i]);
        params.row(names[i] + (angular ? "_hz" : names[i] == "tau" ? "_s" : ""),
                   {values[i] * c, err ? *err * c : kNaN, initial[i] * c, truth_values[i] * c});
    }
    ctx.finish(params);

    CsvWriter curves(ctx.file("fit_curves.csv"), {"dataset", "detuning_hz", "freq_hz", "psd", "model", "initial_model"},
                     "detuning_hz=Hz from the reference, freq_hz=Hz lab frame, psd in data units");
    for (std::size_t k = 0; k < nd; ++k) {
        const auto& d = problem.datasets[k];
        for (std::size_t i = 0; i < d.detuning.size(); ++i)
            curves.row({static_cast<double>(k), to_hz(d.detuning[i]), to_hz(problem.omega_ref + d.detuning[i]), d.psd[i],
                        psd_model(problem, result.params, k, d.detuning[i]),
                        psd_model(problem, problem.initial, k, d.detuning[i])});
    }
    ctx.finish(curves);

    json labels = json::array();
    for (const auto& d : problem.datasets)
        labels.push_back(d.label);
    ctx.run["fit"] = {{"status", to_string(result.status)},
                      {"converged", result.converged},
                      {"iterations", result.iterations},
                      {"cost", result.cost},
                      {"singular", result.singular},
                      {"free_parameters", result.free_names},
                      {"datasets", labels},
                      {"omega_ref_hz", to_hz(problem.omega_ref)}};
    if (!result.converged)
        ctx.warn(std::string("fit did not converge: ") + to_string(result.status));
    if (result.singular)
        ctx.warn("fit Jacobian is singular; no standard errors");
}

void run_fit(Context& ctx)
{
    const auto& fc = ctx.config.fit;
    FitProblem problem;
    std::optional<FitParameters> truth;
    if (fc.synthetic) {
        auto synthetic = make_synthetic_fit(ctx.config);
        problem = std::move(synthetic.problem);
        truth = synthetic.truth;
    } else {
        const CoupledSystem system = ctx.config.system.to_system();
        problem.omega_ref = system.membrane.omega;
        FitParameters p;
        p.omega_m = system.membrane.omega;
        p.tau = system.tau;
        p.g = system.g;
        p.gamma_m = system.membrane.gamma;
        for (const auto& d : fc.datasets) {
            problem.datasets.push_back(read_spectrum_csv(d.file, d.label.empty() ? d.file : d.label));
            p.omega_s.push_back(from_hz(d.spin_frequency_hz));
            p.gamma_s.push_back(from_hz(d.spin_linewidth_hz));
        }
        // Scale and floor from the data: match the tallest point, floor at the smallest.
        p.scale = 1.0;
        p.floor = 0.0;
        double ratio = 0.0, lowest = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < problem.datasets.size(); ++k) {
            const auto& d = problem.datasets[k];
            const auto top = std::max_element(d.psd.begin(), d.psd.end()) - d.psd.begin();
            ratio = std::max(ratio, d.psd[top] / psd_model(problem, p, k, d.detuning[top]));
            lowest = std::min(lowest, *std::min_element(d.psd.begin(), d.psd.end()));
        }
        p.scale = std::sqrt(ratio);
        p.floor = 0.5 * lowest;
        problem.initial = p;
    }
    problem.fixed = fc.fixed;
    problem.log_space = fc.log_space;
    default_bounds(problem);
    if (fc.seed_from_data)
        problem.initial = seed_parameters(problem, problem.initial);

    ctx.say("fitting " + std::to_string(problem.datasets.size()) + " spectra");
    FitResult result;
    if (fc.tau_seeds_s.empty()) {
        result = global_fit(problem);
    } else {
        MultiStartOptions ms;
        ms.tau_seeds = fc.tau_seeds_s;
        ms.threads = ctx.threads;
        result = multistart_fit(problem, ms);
    }
    write_fit_outputs(ctx, problem, result, truth);
}

void run_stability_map(Context& ctx)
{
    const auto& sc = ctx.config.stability;
    StabilityMapSpec spec;
    spec.base = ctx.config.system.to_system();
    for (double d : sc.detuning.resolved())
        spec.deltas.push_back(from_hz(d));
    for (double gs : sc.spin_linewidth.resolved())
        spec.gamma_s.push_back(from_hz(gs));
    std::sort(spec.gamma_s.begin(), spec.gamma_s.end());
    spec.taus = sc.taus_s;
    spec.threads = ctx.threads;
    spec.boundary_tolerance = sc.boundary_tolerance;

    CsvWriter grid(ctx.file("stability_map.csv"),
                   {"delta_hz", "gamma_s_hz", "tau_s", "order", "stable01", "roots_stable01"},
                   "delta_hz=Hz, gamma_s_hz=Hz, tau_s=s");
    CsvWriter edge(ctx.file("stability_boundary.csv"),
                   {"delta_hz", "tau_s", "order", "boundary_gamma_s_hz", "reentrant_flips"},
                   "delta_hz=Hz, tau_s=s, boundary_gamma_s_hz=Hz (nan when the column never turns stable)");
    json summary = json::array();
    for (int order : sc.orders) {
        spec.order = order;
        ctx.say("stability map at expansion order " + std::to_string(order));
        const auto map = stability_map(spec);
        for (const auto& plane : map.planes) {
            for (std::size_t i = 0; i < map.deltas.size(); ++i) {
                for (std::size_t j = 0; j < map.gamma_s.size(); ++j) {
                    const std::size_t idx = i * map.gamma_s.size() + j;
                    grid.row({to_hz(map.deltas[i]), to_hz(map.gamma_s[j]), plane.tau, static_cast<double>(order),
                              static_cast<double>(plane.stable[idx]), static_cast<double>(plane.roots_stable[idx])});
                }
                edge.row({to_hz(map.deltas[i]), plane.tau, static_cast<double>(order),
                          plane.boundary[i] ? to_hz(*plane.boundary[i]) : kNaN,
                          static_cast<double>(plane.reentrant_flips[i])});
            }
            const double points = static_cast<double>(map.deltas.size() * map.gamma_s.size());
            summary.push_back({{"tau_s", plane.tau},
                               {"order", order},
                               {"stable_fraction", static_cast<double>(plane.stable_count()) / points},
                               {"disagreements", plane.disagreements}});
            if (plane.disagreements > 0)
                ctx.warn(std::to_string(plane.disagreements) + " Hurwitz/root disagreements at tau = " +
                         std::to_string(plane.tau) + " s, order " + std::to_string(order));
        }
    }
    ctx.finish(grid);
    ctx.finish(edge);
    ctx.run["planes"] = summary;
}

std::string axis_column(const std::string& parameter)
{
    if (parameter == "tau")
        return "tau_s";
    if (parameter == "membrane.n_bath" || parameter == "spin.n_bath" || parameter == "eta_sq")
        return parameter;
    return parameter + "_hz";
}

// Lyapunov occupation, or NaN when the point is unstable and the policy is to flag it.
std::optional<LyapunovSteadyState> lyapunov_or_flag(const CoupledSystem& system, bool refuse,
                                                    const std::string& where)
{
    try {
        return steady_state_lyapunov(system, make_noise_spec(system, 0));
    } catch (const InstabilityError& e) {
        if (refuse)
            throw InstabilityError("unstable sweep point (" + where + "): " + e.what(), e.max_real_part());
        return std::nullopt;
    }
}

void run_steady_state_sweep(Context& ctx)
{
    const auto& sw = ctx.config.sweep;
    std::vector<std::vector<double>> axes;
    std::size_t total = 1;
    for (const auto& a : sw.axes) {
        axes.push_back(a.resolved());
        total *= axes.back().size();
    }
    if (total == 0)
        throw ConfigError("sweep: empty sweep");
    const bool refuse = sw.on_unstable == "refuse";

    std::vector<std::string> columns;
    for (const auto& a : sw.axes)
        columns.push_back(axis_column(a.parameter));
    for (int order : sw.orders)
        columns.push_back("hurwitz_stable_o" + std::to_string(order));
    for (const char* c : {"lyapunov_stable01", "n_m", "n_s", "n_m_asymptotic", "gamma_sym_hz", "lyapunov_residual"})
        columns.push_back(c);

    std::vector<std::vector<double>> rows(total);
    ctx.say("steady-state sweep over " + std::to_string(total) + " points");
    parallel_for(total, ctx.threads, [&](std::size_t index) {
        SystemConfig sc = ctx.config.system;
        std::vector<double> row;
        std::string where;
        std::size_t rest = index;
        std::vector<double> point(axes.size());
        for (std::size_t a = axes.size(); a-- > 0;) {
            point[a] = axes[a][rest % axes[a].size()];
            rest /= axes[a].size();
        }
        for (std::size_t a = 0; a < axes.size(); ++a) {
            apply_parameter(sc, sw.axes[a].parameter, point[a]);
            row.push_back(point[a]);
            where += (a ? ", " : "") + sw.axes[a].parameter + " = " + std::to_string(point[a]);
        }
        const CoupledSystem system = sc.to_system();
        for (int order : sw.orders)
            row.push_back(stability(system, order).stable ? 1.0 : 0.0);
        const auto lyap = lyapunov_or_flag(system, refuse, where);
        const auto asym = steady_state_asymptotic(system);
        const auto rate = sympathetic_rate_simplified(system);
        row.push_back(lyap ? 1.0 : 0.0);
        row.push_back(lyap ? lyap->n_membrane : kNaN);
        row.push_back(lyap ? lyap->n_spin : kNaN);
        row.push_back(asym.value);
        row.push_back(to_hz(rate.gamma_sym));
        row.push_back(lyap ? lyap->residual : kNaN);
        rows[index] = std::move(row);
    });

    CsvWriter out(ctx.file("steady_state.csv"), columns,
                  "*_hz=Hz, tau_s=s, n=quanta; unstable points have lyapunov_stable01=0 and nan occupations");
    std::size_t unstable = 0;
    const std::size_t lyap_col = axes.size() + sw.orders.size();
    for (const auto& r : rows) {
        unstable += r[lyap_col] == 0.0;
        out.row(r);
    }
    ctx.finish(out);
    ctx.run["points"] = total;
    ctx.run["unstable_points"] = unstable;
    if (unstable > 0)
        ctx.warn(std::to_string(unstable) + " sweep points are unstable (flagged)");
}

void run_cooldown_sweep(Context& ctx)
{
    const auto& cd = ctx.config.cooldown;
    const auto temperatures = cd.temperature.resolved();
    const auto& qs = cd.q_factors;
    const std::size_t total = temperatures.size() * qs.size();
    if (total == 0)
        throw ConfigError("cooldown: empty sweep");
    const bool refuse = ctx.config.sweep.on_unstable == "refuse";
    const double gamma_om = from_hz(cd.optomechanical_linewidth_hz);

    std::vector<std::vector<double>> rows(total);
    parallel_for(total, ctx.threads, [&](std::size_t index) {
        const double q = qs[index / temperatures.size()];
        const double temperature = temperatures[index % temperatures.size()];
        CoupledSystem system = ctx.config.system.to_system();
        const double omega = system.membrane.omega;
        const double gamma_th = omega / q;
        const double n_th = thermal_occupation(temperature, omega);
        system.membrane.gamma = gamma_th + gamma_om;
        system.membrane.n_bath = (gamma_th * n_th + gamma_om * cd.optomechanical_n_bath) / system.membrane.gamma;
        const auto lyap = lyapunov_or_flag(system, refuse,
                                           "T = " + std::to_string(temperature) + " K, Q = " + std::to_string(q));
        rows[index] = {temperature,
                       q,
                       system.membrane.n_bath,
                       to_hz(system.membrane.gamma),
                       lyap ? 1.0 : 0.0,
                       lyap ? lyap->n_membrane : kNaN,
                       lyap ? lyap->n_spin : kNaN,
                       steady_state_asymptotic(system).value};
    });

    CsvWriter out(ctx.file("cooldown.csv"),
                  {"temperature_k", "q_factor", "n_bath", "gamma_m_hz", "lyapunov_stable01", "n_m", "n_s",
                   "n_m_asymptotic"},
                  "temperature_k=K, gamma_m_hz=Hz, n=quanta");
    for (const auto& r : rows)
        out.row(r);
    ctx.finish(out);
    ctx.run["points"] = total;
}

std::string utc_now()
{
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

}  // namespace

CsvWriter::CsvWriter(fs::path path, std::vector<std::string> columns, const std::string& units)
    : path_(std::move(path)), columns_(columns.size())
{
    file_ = std::fopen(path_.c_str(), "w");
    if (!file_)
        throw IoError("cannot write '" + path_.string() + "'");
    std::fprintf(file_, "# units: %s\n", units.c_str());
    for (std::size_t i = 0; i < columns.size(); ++i)
        std::fprintf(file_, "%s%s", i ? "," : "", columns[i].c_str());
    std::fputc('\n', file_);
}

CsvWriter::~CsvWriter()
{
    if (file_)
        std::fclose(file_);
}

void CsvWriter::row(const std::vector<double>& values)
{
    if (values.size() != columns_)
        throw std::logic_error("csv row width mismatch in " + path_.string());
    for (std::size_t i = 0; i < values.size(); ++i)
        std::fprintf(file_, "%s%.9g", i ? "," : "", values[i]);
    std::fputc('\n', file_);
    ++rows_;
}

void CsvWriter::row(const std::string& label, const std::vector<double>& values)
{
    if (values.size() + 1 != columns_)
        throw std::logic_error("csv row width mismatch in " + path_.string());
    std::fputs(label.c_str(), file_);
    for (double v : values)
        std::fprintf(file_, ",%.9g", v);
    std::fputc('\n', file_);
    ++rows_;
}

void CsvWriter::close()
{
    if (!file_)
        return;
    const bool bad = std::ferror(file_) != 0;
    const bool closed = std::fclose(file_) == 0;
    file_ = nullptr;
    if (bad || !closed)
        throw IoError("error writing '" + path_.string() + "'");
}

Dataset read_spectrum_csv(const fs::path& path, const std::string& label)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open spectrum '" + path.string() + "'");
    Dataset d{label, {}, {}, {}};
    std::string line;
    int col_det = -1, col_psd = -1;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#')
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');)
            cells.push_back(cell);
        if (col_det < 0) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (cells[i] == "detuning_hz")
                    col_det = static_cast<int>(i);
                if (cells[i] == "psd")
                    col_psd = static_cast<int>(i);
            }
            if (col_det < 0 || col_psd < 0)
                throw ConfigError(path.string() + ": header needs detuning_hz and psd columns");
            continue;
        }
        try {
            const double det = std::stod(cells.at(static_cast<std::size_t>(col_det)));
            const double psd = std::stod(cells.at(static_cast<std::size_t>(col_psd)));
            if (psd > 0.0 && std::isfinite(psd)) {
                d.detuning.push_back(from_hz(det));
                d.psd.push_back(psd);
            }
        } catch (const std::exception&) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
        }
    }
    if (d.psd.size() < 8)
        throw ConfigError(path.string() + ": fewer than 8 usable rows");
    return d;
}

void default_bounds(FitProblem& problem)
{
    const FitParameters& p = problem.initial;
    FitParameters lo = p, hi = p;
    double peak_psd = 0.0;
    for (const auto& d : problem.datasets)
        for (double v : d.psd)
            peak_psd = std::max(peak_psd, v);
    lo.scale = 0.0;
    hi.scale = 1e3 * std::max(p.scale, 1e-300);
    lo.omega_m = p.omega_m - from_hz(5e3);
    hi.omega_m = p.omega_m + from_hz(5e3);
    lo.tau = 0.0;
    hi.tau = std::max(200e-9, 2.0 * p.tau);
    lo.g = 0.0;
    hi.g = std::max(from_hz(50e3), 2.0 * p.g);
    lo.floor = 0.0;
    hi.floor = std::max(1e3 * p.floor, peak_psd);
    lo.gamma_m = 0.0;
    hi.gamma_m = std::max(from_hz(1e4), 10.0 * p.gamma_m);
    for (std::size_t k = 0; k < p.n_datasets(); ++k) {
        lo.omega_s[k] = p.omega_s[k] - from_hz(20e3);
        hi.omega_s[k] = p.omega_s[k] + from_hz(20e3);
        lo.gamma_s[k] = std::min(from_hz(1.0), p.gamma_s[k]);
        hi.gamma_s[k] = std::max(from_hz(1e6), p.gamma_s[k]);
    }
    problem.lower = lo;
    problem.upper = hi;
}

SyntheticFit make_synthetic_fit(const RunConfig& config)
{
    if (!config.fit.synthetic)
        throw ConfigError("fit.synthetic: missing");
    const auto& syn = *config.fit.synthetic;
    const CoupledSystem system = config.system.to_system();
    const std::size_t nd = syn.spin_linewidths_hz.size();

    SyntheticFit out;
    FitParameters& truth = out.truth;
    truth.scale = 1.0;
    truth.omega_m = system.membrane.omega;
    truth.tau = system.tau;
    truth.g = system.g;
    truth.gamma_m = system.membrane.gamma;
    for (std::size_t k = 0; k < nd; ++k) {
        const double det = syn.spin_detunings_hz.empty() ? 0.0 : syn.spin_detunings_hz[k];
        truth.omega_s.push_back(system.membrane.omega + from_hz(det));
        truth.gamma_s.push_back(from_hz(syn.spin_linewidths_hz[k]));
    }

    FitProblem& problem = out.problem;
    problem.omega_ref = system.membrane.omega;
    problem.datasets.resize(nd);
    for (std::size_t k = 0; k < nd; ++k) {
        auto& d = problem.datasets[k];
        std::ostringstream label;
        label << "gamma_s=" << syn.spin_linewidths_hz[k] << "Hz";
        d.label = label.str();
        for (std::size_t i = 0; i < syn.points; ++i)
            d.detuning.push_back(from_hz(-syn.span_hz + 2.0 * syn.span_hz * static_cast<double>(i) /
                                                            static_cast<double>(syn.points - 1)));
        d.psd.assign(syn.points, 1.0);
    }

    // Floor relative to the tallest peak, located on a 10 Hz grid.
    double peak = 0.0;
    const long half = static_cast<long>(std::ceil(syn.span_hz / 10.0));
    for (std::size_t k = 0; k < nd; ++k)
        for (long i = -half; i <= half; ++i)
            peak = std::max(peak, psd_model(problem, truth, k, from_hz(10.0 * static_cast<double>(i))));
    truth.floor = syn.floor_ratio * peak;

    std::mt19937_64 rng(syn.seed);
    std::normal_distribution<double> normal;
    for (std::size_t k = 0; k < nd; ++k) {
        auto& d = problem.datasets[k];
        for (std::size_t i = 0; i < d.detuning.size(); ++i) {
            const double clean = psd_model(problem, truth, k, d.detuning[i]);
            d.psd[i] = std::max(clean * (1.0 + syn.noise * normal(rng)), 1e-6 * clean);
        }
    }

    // Starting guess: the system itself, with scale and floor taken from the data.
    FitParameters start = truth;
    double top = 0.0, bottom = std::numeric_limits<double>::infinity();
    for (const auto& d : problem.datasets)
        for (double v : d.psd) {
            top = std::max(top, v);
            bottom = std::min(bottom, v);
        }
    start.scale = std::sqrt(top / (peak + truth.floor));
    start.floor = 0.5 * bottom;
    problem.initial = start;
    return out;
}

RunConfig load_run_input(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();
    try {
        const json j = json::parse(text, nullptr, false);
        if (j.is_object() && j.contains("manifest_version")) {
            if (!j.contains("config"))
                throw ConfigError("manifest has no config entry");
            return parse_config(j.at("config"));
        }
        return parse_config(std::string_view(text));
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

int exit_code(const std::exception& error)
{
    if (dynamic_cast<const ConfigError*>(&error) || dynamic_cast<const std::invalid_argument*>(&error))
        return 2;
    if (dynamic_cast<const NumericalError*>(&error))
        return 3;
    if (dynamic_cast<const InstabilityError*>(&error))
        return 4;
    if (dynamic_cast<const IoError*>(&error) || dynamic_cast<const fs::filesystem_error*>(&error))
        return 5;
    return 1;
}

RunSummary run(RunConfig config, const RunOptions& options)
{
    if (options.seed) {
        config.ensemble.seed = *options.seed;
        if (config.fit.synthetic)
            config.fit.synthetic->seed = *options.seed;
    }
    validate_config(config);

    Context ctx;
    ctx.config = config;
    ctx.dir = options.out_dir ? *options.out_dir : fs::path(config.output.directory);
    ctx.threads = resolve_threads(options.threads);
    ctx.log = options.log;
    std::error_code ec;
    fs::create_directories(ctx.dir, ec);
    if (ec)
        throw IoError("cannot create output directory '" + ctx.dir.string() + "': " + ec.message());

    const std::string started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    switch (config.mode) {
    case Mode::Simulate: run_simulate(ctx); break;
    case Mode::Spectrum: run_spectrum(ctx); break;
    case Mode::Fit: run_fit(ctx); break;
    case Mode::StabilityMap: run_stability_map(ctx); break;
    case Mode::SteadyStateSweep: run_steady_state_sweep(ctx); break;
    case Mode::CooldownSweep: run_cooldown_sweep(ctx); break;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json files = json::array();
    for (const auto& f : ctx.files)
        files.push_back(f.filename().string());
    json seeds = {{"ensemble", config.ensemble.seed},
                  {"trajectory_rule", "trajectory i: mt19937_64 seeded with splitmix64(splitmix64(seed) ^ i)"}};
    if (config.fit.synthetic)
        seeds["synthetic"] = config.fit.synthetic->seed;

    RunSummary summary;
    summary.manifest = {{"manifest_version", kManifestVersion},
                        {"tool", "spinchill"},
                        {"version", SPINCHILL_VERSION},
                        {"started_utc", started},
                        {"wall_time_s", wall},
                        {"threads", ctx.threads},
                        {"config", serialize_config(config)},
                        {"seeds", seeds},
                        {"files", files},
                        {"run", ctx.run},
                        {"warnings", ctx.warnings}};
    const fs::path manifest_path = ctx.file("manifest.json");
    std::ofstream out(manifest_path);
    out << summary.manifest.dump(2) << '\n';
    out.close();
    if (!out)
        throw IoError("cannot write '" + manifest_path.string() + "'");
    ctx.files.push_back(manifest_path);
    ctx.say("done in " + std::to_string(wall) + " s");
    summary.files = ctx.files;
    return summary;
}

}  // namespace spinchill::cli
