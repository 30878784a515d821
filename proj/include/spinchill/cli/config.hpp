#pragma once

#include "spinchill/model.hpp"
#include "spinchill/simulator.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace spinchill::cli {

inline constexpr int kSchemaVersion = 1;

enum class Mode { Simulate, Spectrum, Fit, StabilityMap, SteadyStateSweep, CooldownSweep };

std::string_view to_string(Mode mode);
std::optional<Mode> parse_mode(std::string_view name);

// Everything below is in user units: Hz (not rad/s), seconds, kelvin.

struct OscillatorConfig {
    double frequency_hz = 1.957e6;
    double linewidth_hz = 0.0;
    double n_bath = 0.0;

    bool operator==(const OscillatorConfig&) const = default;
};

struct SystemConfig {
    OscillatorConfig membrane{1.957e6, 262.0, 2.0e4};
    OscillatorConfig spin{1.957e6, 2.2e3, 0.0};
    double g_hz = 3.4e3;
    double tau_s = 15e-9;
    double eta_sq = 0.8;
    double measurement_rate_m_hz = 0.0;
    double measurement_rate_s_hz = 0.0;

    CoupledSystem to_system() const;
    bool operator==(const SystemConfig&) const = default;
};

struct SegmentConfig {
    double duration_s = 0.0;
    double linewidth_hz = 0.0;
    std::optional<double> frequency_hz;  // spin frequency; defaults to system.spin

    bool operator==(const SegmentConfig&) const = default;
};

/// An empty segment list means "hold the system's spin parameters for ensemble.duration_s".
struct ScheduleConfig {
    std::vector<SegmentConfig> segments;
    int repeat = 1;

    bool operator==(const ScheduleConfig&) const = default;
};

struct EnsembleConfig {
    std::size_t n_traj = 100;
    std::uint64_t seed = 1;
    double duration_s = 1e-3;
    double initial_n_m = 2.0e5;
    std::optional<double> initial_n_s;
    int sample_stride = 1;
    std::optional<int> frame_periods;
    std::string increments = "block";  // block | full
    double window_s = 1e-5;            // occupation averaging window

    bool operator==(const EnsembleConfig&) const = default;
};

struct SpectrumConfig {
    std::size_t segment_length = 1024;
    double overlap = 0.5;
    std::string window = "hann";  // hann | rectangular
    double fit_span_hz = 25e3;    // model fitted on |detuning| <= span

    bool operator==(const SpectrumConfig&) const = default;
};

struct RangeConfig {
    double start = 0.0;
    double stop = 0.0;
    std::size_t count = 0;
    std::string spacing = "linear";  // linear | log

    std::vector<double> values() const;
    bool operator==(const RangeConfig&) const = default;
};

/// A named sweep axis with explicit values or a range.
struct AxisConfig {
    std::string parameter;
    std::vector<double> values;
    std::optional<RangeConfig> range;

    std::vector<double> resolved() const;
    bool operator==(const AxisConfig&) const = default;
};

struct FitDatasetConfig {
    std::string label;
    std::string file;  // CSV with columns detuning_hz, psd
    double spin_frequency_hz = 0.0;  // initial guess
    double spin_linewidth_hz = 0.0;  // initial guess

    bool operator==(const FitDatasetConfig&) const = default;
};

/// Spectra generated from the system model with multiplicative Gaussian noise.
struct SyntheticConfig {
    std::vector<double> spin_linewidths_hz;
    std::vector<double> spin_detunings_hz;
    double noise = 0.01;
    double span_hz = 25e3;
    std::size_t points = 501;
    double floor_ratio = 1e-3;  // floor relative to the tallest model peak
    std::uint64_t seed = 7;

    bool operator==(const SyntheticConfig&) const = default;
};

struct FitConfig {
    std::vector<FitDatasetConfig> datasets;
    std::optional<SyntheticConfig> synthetic;
    std::vector<std::string> fixed{"gamma_m"};
    bool log_space = true;
    bool seed_from_data = true;
    std::vector<double> tau_seeds_s{0.0, 50e-9, 100e-9};

    bool operator==(const FitConfig&) const = default;
};

struct SweepConfig {
    std::vector<AxisConfig> axes;
    std::string on_unstable = "flag";  // flag | refuse
    std::vector<int> orders{4};

    bool operator==(const SweepConfig&) const = default;
};

struct StabilityConfig {
    AxisConfig detuning{"detuning", {}, RangeConfig{-10e3, 10e3, 100, "linear"}};
    AxisConfig spin_linewidth{"spin.linewidth", {}, RangeConfig{34.0, 34e3, 100, "log"}};
    std::vector<double> taus_s{0.0, 15e-9, 40e-9, 80e-9};
    std::vector<int> orders{4};
    double boundary_tolerance = 1e-3;

    bool operator==(const StabilityConfig&) const = default;
};

struct CooldownConfig {
    AxisConfig temperature{"temperature", {}, RangeConfig{0.1, 300.0, 60, "log"}};
    std::vector<double> q_factors{1.4e6, 5e7};
    double optomechanical_linewidth_hz = 0.0;
    double optomechanical_n_bath = 0.0;

    bool operator==(const CooldownConfig&) const = default;
};

struct OutputConfig {
    std::string directory = "out";
    std::string prefix;

    bool operator==(const OutputConfig&) const = default;
};

struct RunConfig {
    int schema_version = kSchemaVersion;
    Mode mode = Mode::Simulate;
    std::string preset;
    SystemConfig system;
    ScheduleConfig schedule;
    EnsembleConfig ensemble;
    SpectrumConfig spectrum;
    FitConfig fit;
    SweepConfig sweep;
    StabilityConfig stability;
    CooldownConfig cooldown;
    OutputConfig output;

    bool operator==(const RunConfig&) const = default;
};

/// Records every key path the parser looked up, e.g. "system.membrane.frequency" or
/// "schedule.segments[].duration".
struct ParseTrace {
    std::set<std::string> keys;
};

/// Strict parse: unknown keys, wrong types and a missing or wrong `units` block are
/// ConfigErrors whose message names the offending field (or line and column for syntax).
RunConfig parse_config(std::string_view text, ParseTrace* trace = nullptr);
RunConfig parse_config(const nlohmann::json& json, ParseTrace* trace = nullptr);
RunConfig load_config(const std::string& path);

/// Every field written out, so the result fully determines the run.
nlohmann::json serialize_config(const RunConfig& config);

/// Semantic checks beyond parsing (positive counts, non-empty sweeps, resolvable names).
void validate_config(const RunConfig& config);

/// Schedule in SI units for the given system.
Schedule build_schedule(const RunConfig& config, const CoupledSystem& system);

/// Applies a named sweep value (Hz, s or dimensionless) to a system configuration.
void apply_parameter(SystemConfig& system, const std::string& name, double value);
const std::vector<std::string>& sweepable_parameters();

std::vector<std::string> preset_names();
/// Built-in run recipes; throws ConfigError for unknown names.
RunConfig preset(const std::string& name);

}  // namespace spinchill::cli
