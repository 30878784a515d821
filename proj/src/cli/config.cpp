#include "spinchill/cli/config.hpp"

#include "spinchill/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are read as size_t");

namespace spinchill::cli {

using nlohmann::json;

namespace {

constexpr std::pair<Mode, std::string_view> kModeNames[] = {
    {Mode::Simulate, "simulate"},
    {Mode::Spectrum, "spectrum"},
    {Mode::Fit, "fit"},
    {Mode::StabilityMap, "stability-map"},
    {Mode::SteadyStateSweep, "steady-state-sweep"},
    {Mode::CooldownSweep, "cooldown-sweep"},
};

const json kUnits = {{"frequency", "Hz"}, {"time", "s"}, {"temperature", "K"}};

}  // namespace

std::string_view to_string(Mode mode)
{
    for (const auto& [m, name] : kModeNames)
        if (m == mode)
            return name;
    return "?";
}

std::optional<Mode> parse_mode(std::string_view name)
{
    for (const auto& [m, n] : kModeNames)
        if (n == name)
            return m;
    return std::nullopt;
}

CoupledSystem SystemConfig::to_system() const
{
    CoupledSystem s;
    s.membrane = {from_hz(membrane.frequency_hz), from_hz(membrane.linewidth_hz), membrane.n_bath};
    s.spin = {from_hz(spin.frequency_hz), from_hz(spin.linewidth_hz), spin.n_bath};
    s.g = from_hz(g_hz);
    s.tau = tau_s;
    s.eta_sq = eta_sq;
    s.gamma_meas_m = from_hz(measurement_rate_m_hz);
    s.gamma_meas_s = from_hz(measurement_rate_s_hz);
    return s;
}

std::vector<double> RangeConfig::values() const
{
    std::vector<double> out;
    if (count == 0)
        return out;
    if (count == 1)
        return {start};
    const bool log = spacing == "log";
    for (std::size_t i = 0; i < count; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(count - 1);
        out.push_back(log ? start * std::pow(stop / start, t) : start + t * (stop - start));
    }
    return out;
}

std::vector<double> AxisConfig::resolved() const
{
    return range ? range->values() : values;
}

namespace {

// Strict object reader: records looked-up keys and rejects the rest.
class Reader {
public:
    Reader(const json& j, std::string where, std::string trace_path, ParseTrace* trace)
        : j_(j), where_(std::move(where)), trace_path_(std::move(trace_path)), trace_(trace)
    {
        if (!j_.is_object())
            fail("", "expected an object");
    }

    bool has(const std::string& key)
    {
        if (trace_)
            trace_->keys.insert(join(trace_path_, key));
        used_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    void read(const std::string& key, T& out)
    {
        if (has(key))
            convert(j_.at(key), key, out);
    }

    template <typename T>
    void read(const std::string& key, std::optional<T>& out)
    {
        if (!has(key))
            return;
        if (j_.at(key).is_null()) {
            out.reset();
            return;
        }
        T value{};
        convert(j_.at(key), key, value);
        out = value;
    }

    bool is_null(const std::string& key) const { return j_.contains(key) && j_.at(key).is_null(); }

    Reader child(const std::string& key)
    {
        has(key);
        return Reader(j_.at(key), join(where_, key), join(trace_path_, key), trace_);
    }

    template <typename Fn>
    void each(const std::string& key, Fn&& fn)
    {
        if (!has(key))
            return;
        const json& arr = j_.at(key);
        if (!arr.is_array())
            fail(key, "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Reader r(arr[i], join(where_, key) + "[" + std::to_string(i) + "]", join(trace_path_, key) + "[]",
                     trace_);
            fn(r);
        }
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key()))
                fail(it.key(), "unknown field");
    }

    [[noreturn]] void fail(const std::string& key, const std::string& what) const
    {
        const std::string field = key.empty() ? where_ : join(where_, key);
        throw ConfigError("config field '" + (field.empty() ? std::string("<root>") : field) + "': " + what);
    }

private:
    static std::string join(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

    void convert(const json& v, const std::string& key, double& out) const
    {
        if (!v.is_number())
            fail(key, "expected a number");
        out = v.get<double>();
        if (!std::isfinite(out))
            fail(key, "expected a finite number");
    }
    void convert(const json& v, const std::string& key, int& out) const
    {
        if (!v.is_number_integer())
            fail(key, "expected an integer");
        out = v.get<int>();
    }
    void convert(const json& v, const std::string& key, std::size_t& out) const
    {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
            fail(key, "expected a non-negative integer");
        out = v.get<std::size_t>();
    }
    void convert(const json& v, const std::string& key, bool& out) const
    {
        if (!v.is_boolean())
            fail(key, "expected true or false");
        out = v.get<bool>();
    }
    void convert(const json& v, const std::string& key, std::string& out) const
    {
        if (!v.is_string())
            fail(key, "expected a string");
        out = v.get<std::string>();
    }
    template <typename T>
    void convert(const json& v, const std::string& key, std::vector<T>& out) const
    {
        if (!v.is_array())
            fail(key, "expected an array");
        out.clear();
        for (const auto& e : v) {
            T value{};
            convert(e, key, value);
            out.push_back(value);
        }
    }

    const json& j_;
    std::string where_;
    std::string trace_path_;
    ParseTrace* trace_;
    std::set<std::string> used_;
};

void read_oscillator(Reader r, OscillatorConfig& o)
{
    r.read("frequency", o.frequency_hz);
    r.read("linewidth", o.linewidth_hz);
    r.read("n_bath", o.n_bath);
    r.finish();
}

void read_range(Reader r, RangeConfig& range)
{
    r.read("start", range.start);
    r.read("stop", range.stop);
    r.read("count", range.count);
    r.read("spacing", range.spacing);
    r.finish();
}

void read_axis(Reader r, AxisConfig& axis)
{
    r.read("parameter", axis.parameter);
    if (r.has("values")) {
        r.read("values", axis.values);
        axis.range.reset();
    }
    if (r.has("range") && !r.is_null("range")) {
        RangeConfig range = axis.range.value_or(RangeConfig{});
        read_range(r.child("range"), range);
        axis.range = range;
        axis.values.clear();
    }
    r.finish();
}

// Both keys are always written; a non-null range takes precedence over values.
json write_axis(const AxisConfig& axis)
{
    json j = {{"parameter", axis.parameter}, {"values", axis.values}, {"range", nullptr}};
    if (axis.range)
        j["range"] = {{"start", axis.range->start},
                      {"stop", axis.range->stop},
                      {"count", axis.range->count},
                      {"spacing", axis.range->spacing}};
    return j;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json optional_json(const std::optional<int>& v) { return v ? json(*v) : json(nullptr); }

void read_body(Reader& root, RunConfig& c)
{
    if (root.has("system")) {
        auto r = root.child("system");
        if (r.has("membrane"))
            read_oscillator(r.child("membrane"), c.system.membrane);
        if (r.has("spin"))
            read_oscillator(r.child("spin"), c.system.spin);
        r.read("g", c.system.g_hz);
        r.read("tau", c.system.tau_s);
        r.read("eta_sq", c.system.eta_sq);
        r.read("measurement_rate_m", c.system.measurement_rate_m_hz);
        r.read("measurement_rate_s", c.system.measurement_rate_s_hz);
        r.finish();
    }
    if (root.has("schedule")) {
        auto r = root.child("schedule");
        if (r.has("segments")) {
            c.schedule.segments.clear();
            r.each("segments", [&](Reader& s) {
                SegmentConfig seg;
                s.read("duration", seg.duration_s);
                s.read("linewidth", seg.linewidth_hz);
                s.read("frequency", seg.frequency_hz);
                s.finish();
                c.schedule.segments.push_back(seg);
            });
        }
        r.read("repeat", c.schedule.repeat);
        r.finish();
    }
    if (root.has("ensemble")) {
        auto r = root.child("ensemble");
        auto& e = c.ensemble;
        r.read("n_traj", e.n_traj);
        r.read("seed", e.seed);
        r.read("duration", e.duration_s);
        r.read("initial_n_m", e.initial_n_m);
        r.read("initial_n_s", e.initial_n_s);
        r.read("sample_stride", e.sample_stride);
        r.read("frame_periods", e.frame_periods);
        r.read("increments", e.increments);
        r.read("window", e.window_s);
        r.finish();
    }
    if (root.has("spectrum")) {
        auto r = root.child("spectrum");
        r.read("segment_length", c.spectrum.segment_length);
        r.read("overlap", c.spectrum.overlap);
        r.read("window", c.spectrum.window);
        r.read("fit_span", c.spectrum.fit_span_hz);
        r.finish();
    }
    if (root.has("fit")) {
        auto r = root.child("fit");
        auto& f = c.fit;
        if (r.has("datasets")) {
            f.datasets.clear();
            r.each("datasets", [&](Reader& d) {
                FitDatasetConfig ds;
                d.read("label", ds.label);
                d.read("file", ds.file);
                d.read("spin_frequency", ds.spin_frequency_hz);
                d.read("spin_linewidth", ds.spin_linewidth_hz);
                d.finish();
                f.datasets.push_back(ds);
            });
        }
        if (r.has("synthetic") && r.is_null("synthetic")) {
            f.synthetic.reset();
        } else if (r.has("synthetic")) {
            auto s = r.child("synthetic");
            SyntheticConfig syn = f.synthetic.value_or(SyntheticConfig{});
            s.read("spin_linewidths", syn.spin_linewidths_hz);
            s.read("spin_detunings", syn.spin_detunings_hz);
            s.read("noise", syn.noise);
            s.read("span", syn.span_hz);
            s.read("points", syn.points);
            s.read("floor_ratio", syn.floor_ratio);
            s.read("seed", syn.seed);
            s.finish();
            f.synthetic = syn;
        }
        r.read("fixed", f.fixed);
        r.read("log_space", f.log_space);
        r.read("seed_from_data", f.seed_from_data);
        r.read("tau_seeds", f.tau_seeds_s);
        r.finish();
    }
    if (root.has("sweep")) {
        auto r = root.child("sweep");
        if (r.has("axes")) {
            c.sweep.axes.clear();
            r.each("axes", [&](Reader& a) {
                AxisConfig axis;
                read_axis(a, axis);
                c.sweep.axes.push_back(axis);
            });
        }
        r.read("on_unstable", c.sweep.on_unstable);
        r.read("orders", c.sweep.orders);
        r.finish();
    }
    if (root.has("stability")) {
        auto r = root.child("stability");
        auto& s = c.stability;
        if (r.has("detuning"))
            read_axis(r.child("detuning"), s.detuning);
        if (r.has("spin_linewidth"))
            read_axis(r.child("spin_linewidth"), s.spin_linewidth);
        r.read("taus", s.taus_s);
        r.read("orders", s.orders);
        r.read("boundary_tolerance", s.boundary_tolerance);
        r.finish();
    }
    if (root.has("cooldown")) {
        auto r = root.child("cooldown");
        auto& cd = c.cooldown;
        if (r.has("temperature"))
            read_axis(r.child("temperature"), cd.temperature);
        r.read("q_factors", cd.q_factors);
        r.read("optomechanical_linewidth", cd.optomechanical_linewidth_hz);
        r.read("optomechanical_n_bath", cd.optomechanical_n_bath);
        r.finish();
    }
    if (root.has("output")) {
        auto r = root.child("output");
        r.read("directory", c.output.directory);
        r.read("prefix", c.output.prefix);
        r.finish();
    }
}

}  // namespace

RunConfig parse_config(const json& j, ParseTrace* trace)
{
    Reader root(j, "", "", trace);

    if (!root.has("schema_version"))
        root.fail("schema_version", "missing");
    int version = 0;
    root.read("schema_version", version);
    if (version != kSchemaVersion)
        root.fail("schema_version", "unsupported version " + std::to_string(version));

    if (!root.has("units"))
        root.fail("units", "missing (expected {\"frequency\": \"Hz\", \"time\": \"s\", \"temperature\": \"K\"})");
    {
        auto u = root.child("units");
        for (const auto& [key, expected] : kUnits.items()) {
            std::string value;
            if (!u.has(key))
                u.fail(key, "missing");
            u.read(key, value);
            if (value != expected.get<std::string>())
                u.fail(key, "must be \"" + expected.get<std::string>() + "\"");
        }
        u.finish();
    }

    RunConfig c;
    std::string preset_name;
    root.read("preset", preset_name);
    if (!preset_name.empty())
        c = preset(preset_name);
    c.preset = preset_name;

    std::string mode_name;
    root.read("mode", mode_name);
    if (!mode_name.empty()) {
        const auto mode = parse_mode(mode_name);
        if (!mode)
            root.fail("mode", "unknown mode '" + mode_name + "'");
        c.mode = *mode;
    } else if (preset_name.empty()) {
        root.fail("mode", "missing (or give a preset)");
    }

    read_body(root, c);
    root.finish();
    return c;
}

RunConfig parse_config(std::string_view text, ParseTrace* trace)
{
    json j;
    try {
        j = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        // Convert the byte offset into a line and column.
        std::size_t line = 1, col = 1;
        const std::size_t stop = std::min(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < stop; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::ostringstream os;
        os << "config syntax error at line " << line << ", column " << col << ": " << e.what();
        throw ConfigError(os.str());
    }
    return parse_config(j, trace);
}

RunConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open config '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
        return parse_config(std::string_view(buffer.str()));
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

json serialize_config(const RunConfig& c)
{
    auto osc = [](const OscillatorConfig& o) {
        return json{{"frequency", o.frequency_hz}, {"linewidth", o.linewidth_hz}, {"n_bath", o.n_bath}};
    };
    json j;
    j["schema_version"] = c.schema_version;
    j["units"] = kUnits;
    j["mode"] = std::string(to_string(c.mode));
    j["preset"] = c.preset;
    j["system"] = {{"membrane", osc(c.system.membrane)},
                   {"spin", osc(c.system.spin)},
                   {"g", c.system.g_hz},
                   {"tau", c.system.tau_s},
                   {"eta_sq", c.system.eta_sq},
                   {"measurement_rate_m", c.system.measurement_rate_m_hz},
                   {"measurement_rate_s", c.system.measurement_rate_s_hz}};

    json segments = json::array();
    for (const auto& s : c.schedule.segments)
        segments.push_back(
            {{"duration", s.duration_s}, {"linewidth", s.linewidth_hz}, {"frequency", optional_json(s.frequency_hz)}});
    j["schedule"] = {{"segments", segments}, {"repeat", c.schedule.repeat}};

    const auto& e = c.ensemble;
    j["ensemble"] = {{"n_traj", e.n_traj},
                     {"seed", e.seed},
                     {"duration", e.duration_s},
                     {"initial_n_m", e.initial_n_m},
                     {"initial_n_s", optional_json(e.initial_n_s)},
                     {"sample_stride", e.sample_stride},
                     {"frame_periods", optional_json(e.frame_periods)},
                     {"increments", e.increments},
                     {"window", e.window_s}};
    j["spectrum"] = {{"segment_length", c.spectrum.segment_length},
                     {"overlap", c.spectrum.overlap},
                     {"window", c.spectrum.window},
                     {"fit_span", c.spectrum.fit_span_hz}};

    json datasets = json::array();
    for (const auto& d : c.fit.datasets)
        datasets.push_back({{"label", d.label},
                            {"file", d.file},
                            {"spin_frequency", d.spin_frequency_hz},
                            {"spin_linewidth", d.spin_linewidth_hz}});
    json fit = {{"datasets", datasets},
                {"fixed", c.fit.fixed},
                {"log_space", c.fit.log_space},
                {"seed_from_data", c.fit.seed_from_data},
                {"tau_seeds", c.fit.tau_seeds_s}};
    if (c.fit.synthetic) {
        const auto& s = *c.fit.synthetic;
        fit["synthetic"] = {{"spin_linewidths", s.spin_linewidths_hz},
                            {"spin_detunings", s.spin_detunings_hz},
                            {"noise", s.noise},
                            {"span", s.span_hz},
                            {"points", s.points},
                            {"floor_ratio", s.floor_ratio},
                            {"seed", s.seed}};
    } else {
        fit["synthetic"] = nullptr;
    }
    j["fit"] = fit;

    json axes = json::array();
    for (const auto& a : c.sweep.axes)
        axes.push_back(write_axis(a));
    j["sweep"] = {{"axes", axes}, {"on_unstable", c.sweep.on_unstable}, {"orders", c.sweep.orders}};
    j["stability"] = {{"detuning", write_axis(c.stability.detuning)},
                      {"spin_linewidth", write_axis(c.stability.spin_linewidth)},
                      {"taus", c.stability.taus_s},
                      {"orders", c.stability.orders},
                      {"boundary_tolerance", c.stability.boundary_tolerance}};
    j["cooldown"] = {{"temperature", write_axis(c.cooldown.temperature)},
                     {"q_factors", c.cooldown.q_factors},
                     {"optomechanical_linewidth", c.cooldown.optomechanical_linewidth_hz},
                     {"optomechanical_n_bath", c.cooldown.optomechanical_n_bath}};
    j["output"] = {{"directory", c.output.directory}, {"prefix", c.output.prefix}};
    return j;
}

const std::vector<std::string>& sweepable_parameters()
{
    static const std::vector<std::string> names{
        "membrane.frequency", "membrane.linewidth", "membrane.n_bath", "spin.frequency",
        "spin.linewidth",     "spin.n_bath",        "detuning",        "g",
        "tau",                "eta_sq",             "measurement_rate_m", "measurement_rate_s",
    };
    return names;
}

void apply_parameter(SystemConfig& s, const std::string& name, double value)
{
    if (name == "membrane.frequency")
        s.membrane.frequency_hz = value;
    else if (name == "membrane.linewidth")
        s.membrane.linewidth_hz = value;
    else if (name == "membrane.n_bath")
        s.membrane.n_bath = value;
    else if (name == "spin.frequency")
        s.spin.frequency_hz = value;
    else if (name == "spin.linewidth")
        s.spin.linewidth_hz = value;
    else if (name == "spin.n_bath")
        s.spin.n_bath = value;
    else if (name == "detuning")
        s.spin.frequency_hz = s.membrane.frequency_hz + value;
    else if (name == "g")
        s.g_hz = value;
    else if (name == "tau")
        s.tau_s = value;
    else if (name == "eta_sq")
        s.eta_sq = value;
    else if (name == "measurement_rate_m")
        s.measurement_rate_m_hz = value;
    else if (name == "measurement_rate_s")
        s.measurement_rate_s_hz = value;
    else
        throw ConfigError("unknown sweep parameter '" + name + "'");
}

namespace {

void check_axis(const AxisConfig& axis, const std::string& where)
{
    if (axis.range) {
        if (axis.range->spacing != "linear" && axis.range->spacing != "log")
            throw ConfigError(where + ".range.spacing: expected \"linear\" or \"log\"");
        if (axis.range->spacing == "log" && !(axis.range->start > 0.0 && axis.range->stop > 0.0))
            throw ConfigError(where + ".range: log spacing needs positive start and stop");
    }
    if (axis.resolved().empty())
        throw ConfigError(where + ": empty sweep");
}

void check_orders(const std::vector<int>& orders, const std::string& where)
{
    if (orders.empty())
        throw ConfigError(where + ": empty sweep");
    for (int o : orders)
        if (o < 1 || o > 6)
            throw ConfigError(where + ": expansion order must be in 1..6");
}

}  // namespace

void validate_config(const RunConfig& c)
{
    const auto violations = validate(c.system.to_system());
    if (!violations.empty())
        throw ConfigError("system." + violations.front().field + ": " + violations.front().message);

    auto positive = [](double v, const std::string& where) {
        if (!(v > 0.0))
            throw ConfigError(where + ": must be positive");
    };

    switch (c.mode) {
    case Mode::Simulate:
    case Mode::Spectrum: {
        if (c.ensemble.n_traj == 0)
            throw ConfigError("ensemble.n_traj: must be >= 1");
        if (c.ensemble.sample_stride < 1)
            throw ConfigError("ensemble.sample_stride: must be >= 1");
        if (c.ensemble.frame_periods && *c.ensemble.frame_periods < 1)
            throw ConfigError("ensemble.frame_periods: must be >= 1");
        if (c.ensemble.increments != "block" && c.ensemble.increments != "full")
            throw ConfigError("ensemble.increments: expected \"block\" or \"full\"");
        if (c.ensemble.initial_n_m < 0.0 || c.ensemble.initial_n_s.value_or(0.0) < 0.0)
            throw ConfigError("ensemble: initial occupations must be non-negative");
        positive(c.ensemble.window_s, "ensemble.window");
        if (c.schedule.segments.empty())
            positive(c.ensemble.duration_s, "ensemble.duration");
        if (c.schedule.repeat < 1)
            throw ConfigError("schedule.repeat: must be >= 1");
        for (std::size_t i = 0; i < c.schedule.segments.size(); ++i) {
            const auto& s = c.schedule.segments[i];
            const std::string where = "schedule.segments[" + std::to_string(i) + "]";
            positive(s.duration_s, where + ".duration");
            if (s.linewidth_hz < 0.0)
                throw ConfigError(where + ".linewidth: gamma negative");
            if (s.frequency_hz)
                positive(*s.frequency_hz, where + ".frequency");
        }
        if (c.mode == Mode::Spectrum) {
            if (c.spectrum.segment_length < 2)
                throw ConfigError("spectrum.segment_length: must be >= 2");
            if (!(c.spectrum.overlap >= 0.0 && c.spectrum.overlap < 1.0))
                throw ConfigError("spectrum.overlap: must be in [0, 1)");
            if (c.spectrum.window != "hann" && c.spectrum.window != "rectangular")
                throw ConfigError("spectrum.window: expected \"hann\" or \"rectangular\"");
            positive(c.spectrum.fit_span_hz, "spectrum.fit_span");
        }
        break;
    }
    case Mode::Fit: {
        if (c.fit.datasets.empty() && !c.fit.synthetic)
            throw ConfigError("fit: need datasets or a synthetic block");
        if (c.fit.synthetic) {
            const auto& s = *c.fit.synthetic;
            if (s.spin_linewidths_hz.empty())
                throw ConfigError("fit.synthetic.spin_linewidths: empty sweep");
            if (!s.spin_detunings_hz.empty() && s.spin_detunings_hz.size() != s.spin_linewidths_hz.size())
                throw ConfigError("fit.synthetic.spin_detunings: one per linewidth");
            if (s.points < 8)
                throw ConfigError("fit.synthetic.points: must be >= 8");
            positive(s.span_hz, "fit.synthetic.span");
            if (s.noise < 0.0)
                throw ConfigError("fit.synthetic.noise: must be non-negative");
        }
        for (std::size_t i = 0; i < c.fit.datasets.size(); ++i) {
            const std::string where = "fit.datasets[" + std::to_string(i) + "]";
            if (c.fit.datasets[i].file.empty())
                throw ConfigError(where + ".file: missing");
            positive(c.fit.datasets[i].spin_frequency_hz, where + ".spin_frequency");
            positive(c.fit.datasets[i].spin_linewidth_hz, where + ".spin_linewidth");
        }
        break;
    }
    case Mode::StabilityMap:
        check_axis(c.stability.detuning, "stability.detuning");
        check_axis(c.stability.spin_linewidth, "stability.spin_linewidth");
        if (c.stability.taus_s.empty())
            throw ConfigError("stability.taus: empty sweep");
        check_orders(c.stability.orders, "stability.orders");
        positive(c.stability.boundary_tolerance, "stability.boundary_tolerance");
        break;
    case Mode::SteadyStateSweep:
        if (c.sweep.axes.empty())
            throw ConfigError("sweep.axes: empty sweep");
        for (std::size_t i = 0; i < c.sweep.axes.size(); ++i) {
            const auto& axis = c.sweep.axes[i];
            const std::string where = "sweep.axes[" + std::to_string(i) + "]";
            const auto& names = sweepable_parameters();
            if (std::find(names.begin(), names.end(), axis.parameter) == names.end())
                throw ConfigError(where + ".parameter: unknown parameter '" + axis.parameter + "'");
            check_axis(axis, where);
        }
        if (c.sweep.on_unstable != "flag" && c.sweep.on_unstable != "refuse")
            throw ConfigError("sweep.on_unstable: expected \"flag\" or \"refuse\"");
        check_orders(c.sweep.orders, "sweep.orders");
        break;
    case Mode::CooldownSweep:
        check_axis(c.cooldown.temperature, "cooldown.temperature");
        if (c.cooldown.q_factors.empty())
            throw ConfigError("cooldown.q_factors: empty sweep");
        for (double q : c.cooldown.q_factors)
            positive(q, "cooldown.q_factors");
        for (double t : c.cooldown.temperature.resolved())
            if (t < 0.0)
                throw ConfigError("cooldown.temperature: must be non-negative");
        if (c.cooldown.optomechanical_linewidth_hz < 0.0 || c.cooldown.optomechanical_n_bath < 0.0)
            throw ConfigError("cooldown: optomechanical parameters must be non-negative");
        break;
    }
}

Schedule build_schedule(const RunConfig& config, const CoupledSystem& system)
{
    if (config.schedule.segments.empty())
        return Schedule::hold(system, config.ensemble.duration_s).repeated(config.schedule.repeat);
    Schedule base;
    for (const auto& s : config.schedule.segments)
        base.segments.push_back(
            {s.duration_s, from_hz(s.linewidth_hz), s.frequency_hz ? from_hz(*s.frequency_hz) : system.spin.omega});
    return base.repeated(config.schedule.repeat);
}

std::vector<std::string> preset_names()
{
    return {"fig2a", "fig2b", "fig3", "fig4a", "fig4b", "fig5", "fig7"};
}

RunConfig preset(const std::string& name)
{
    RunConfig c;
    c.preset = name;
    const double g = c.system.g_hz;
    c.output.prefix = name + "_";

    if (name == "fig2a") {
        c.mode = Mode::Simulate;
        c.ensemble.n_traj = 300;
        c.ensemble.duration_s = 3e-3;
        c.ensemble.initial_n_m = 2.0e5;
    } else if (name == "fig2b") {
        c.mode = Mode::Fit;
        SyntheticConfig s;
        s.spin_linewidths_hz = {0.5 * g, 1.0 * g, 3.0 * g, 10.0 * g};
        s.spin_detunings_hz = {300.0, -200.0, 500.0, 0.0};
        c.fit.synthetic = s;
    } else if (name == "fig3") {
        c.mode = Mode::Simulate;
        c.ensemble.n_traj = 300;
        c.ensemble.initial_n_m = 2.0e5;
        c.ensemble.window_s = 5e-6;
        c.schedule.segments = {{100e-6, 0.6 * g, std::nullopt}, {10e-6, 60.0 * g, std::nullopt}};
        c.schedule.repeat = 5;
    } else if (name == "fig4a" || name == "fig4b") {
        c.mode = Mode::SteadyStateSweep;
        c.system.membrane.linewidth_hz = 94.0;
        c.system.membrane.n_bath = 4.0e4;
        c.sweep.orders = {1, 4};
        c.sweep.axes.push_back({"tau", {0.0, 15e-9}, std::nullopt});
        if (name == "fig4a")
            c.sweep.axes.push_back({"spin.linewidth", {}, RangeConfig{0.1 * g, 30.0 * g, 121, "log"}});
        else {
            c.system.spin.linewidth_hz = 0.6 * g;
            c.sweep.axes.push_back({"detuning", {}, RangeConfig{-10e3, 10e3, 201, "linear"}});
        }
    } else if (name == "fig5") {
        c.mode = Mode::CooldownSweep;
        c.system.spin.linewidth_hz = 2.0 * g;
    } else if (name == "fig7") {
        c.mode = Mode::StabilityMap;
    } else {
        std::string known;
        for (const auto& n : preset_names())
            known += (known.empty() ? "" : ", ") + n;
        throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
    }
    return c;
}

}  // namespace spinchill::cli
