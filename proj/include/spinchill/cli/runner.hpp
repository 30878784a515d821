#pragma once

#include "spinchill/cli/config.hpp"
#include "spinchill/spectra.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace spinchill::cli {

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;  // overrides config.output.directory
    std::optional<std::uint64_t> seed;             // overrides every seed in the config
    int threads = 0;
    std::ostream* log = nullptr;  // progress messages when set
};

struct RunSummary {
    std::vector<std::filesystem::path> files;
    nlohmann::json manifest;
};

/// Validates, executes the configured mode and writes CSV data plus <prefix>manifest.json.
RunSummary run(RunConfig config, const RunOptions& options = {});

/// Reads either a config file or a previously written manifest (its "config" entry).
RunConfig load_run_input(const std::string& path);

/// Process exit status for an exception escaping run(): 2 config, 3 numerical,
/// 4 instability refused, 5 I/O, 1 anything else.
int exit_code(const std::exception& error);

/// Synthetic spectra drawn from the configured system, plus the parameters that generated them.
struct SyntheticFit {
    FitProblem problem;
    FitParameters truth;
};

SyntheticFit make_synthetic_fit(const RunConfig& config);

/// Broad parameter bounds around an initial guess.
void default_bounds(FitProblem& problem);

/// Writes rows of numbers as CSV with a "# units:" comment line and 9 significant digits.
class CsvWriter {
public:
    CsvWriter(std::filesystem::path path, std::vector<std::string> columns, const std::string& units);
    ~CsvWriter();
    CsvWriter(const CsvWriter&) = delete;
    CsvWriter& operator=(const CsvWriter&) = delete;

    void row(const std::vector<double>& values);
    /// A row whose first column is text.
    void row(const std::string& label, const std::vector<double>& values);
    /// Flushes and closes; throws IoError on failure.
    void close();
    const std::filesystem::path& path() const { return path_; }
    std::size_t rows() const { return rows_; }

private:
    std::filesystem::path path_;
    std::size_t columns_;
    std::size_t rows_ = 0;
    std::FILE* file_ = nullptr;
};

/// Reads a two-column (detuning_hz, psd) CSV written by hand or by the spectrum mode.
Dataset read_spectrum_csv(const std::filesystem::path& path, const std::string& label);

}  // namespace spinchill::cli
