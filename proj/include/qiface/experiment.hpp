// Copyright 2026 The qiface Authors

// Licensed under the Apache License, Version 2.0 (the License);
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at

// http://www.apache.org/licenses/LICENSE-2.0

// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an AS IS BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

/**
 * @file experiment.hpp
 * Experiment specifications, presets and the run orchestration behind the
 * command-line tool.
 *
 * A specification is an INI file:
 *
 *   [experiment]  name, mode (entangler | sender), stages
 *   [interface]   InterfaceConfig fields, unit-suffixed
 *   [plan]        trials_per_setting, seed, window_ns, acquisition_ns,
 *                 phase_bins, bootstrap_resamples, windows_ns
 *   [prep]        theta_d_rad, phi_729_rad (entangler), inputs (sender)
 *   [photon]      theta_854_rad, phi_854_rad
 *
 * Every text artifact starts with a "# created=" line, the only content
 * that differs between two runs with the same specification and seed.
 */

#include "qiface/analysis.hpp"
#include "qiface/detection_sim.hpp"
#include "qiface/interface_model.hpp"
#include "qiface/tomography.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace qiface {

namespace fs = std::filesystem;

inline const std::vector<std::string> &known_stages() {
    static const std::vector<std::string> s = {"arrival",           "poincare",           "phase_lines",
                                               "state_tomography",  "witness",            "process_tomography",
                                               "window_sweep",      "rates"};
    return s;
}

struct ExperimentSpec {
    std::string name;
    /// "entangler" or "sender".
    std::string mode = "entangler";
    std::vector<std::string> stages;
    InterfaceConfig config;
    std::uint64_t trials_per_setting = 1;
    std::uint64_t seed = 1;
    double window_ns = 450.0;
    double acquisition_ns = 2000.0;
    int phase_bins = kDefaultPhaseBins;
    int bootstrap_resamples = 200;
    std::vector<double> windows_ns;
    AtomPrep prep;
    std::vector<Preparation> inputs;
    PhotonIn photon;

    [[nodiscard]] bool has_stage(const std::string &s) const {
        return std::find(stages.begin(), stages.end(), s) != stages.end();
    }
};

// Parsing and validation.

struct ValidationReport {
    std::vector<std::string> parse_errors;
    std::vector<std::string> unknown_keys;
    std::vector<std::string> range_violations;
    std::vector<std::pair<std::string, std::string>> derived;

    [[nodiscard]] bool ok() const { return parse_errors.empty() && unknown_keys.empty() && range_violations.empty(); }

    [[nodiscard]] std::string to_text() const {
        std::ostringstream os;
        os << "status=" << (ok() ? "ok" : "invalid") << '\n';
        for (const auto &e : parse_errors) os << "parse_error: " << e << '\n';
        for (const auto &k : unknown_keys) os << "unknown_key: " << k << '\n';
        for (const auto &r : range_violations) os << "range_violation: " << r << '\n';
        for (const auto &[k, v] : derived) os << "derived: " << k << '=' << v << '\n';
        return os.str();
    }
};

namespace detail {

inline std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string &s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::optional<double> parse_number(const std::string &s) {
    const std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    try {
        std::size_t pos = 0;
        const double v = std::stod(t, &pos);
        if (pos != t.size() || !std::isfinite(v)) return std::nullopt;
        return v;
    } catch (const std::exception &) {
        return std::nullopt;
    }
}

/// Parses a count such as "1466667" or "2e6".
inline std::optional<std::uint64_t> parse_count(const std::string &s) {
    const auto v = parse_number(s);
    if (!v || *v < 0.0 || *v > 9.0e18 || std::floor(*v) != *v) return std::nullopt;
    return static_cast<std::uint64_t>(*v);
}

struct NumericKey {
    const char *name;
    double lo;
    double hi;
    bool integral;
    std::function<void(ExperimentSpec &, double)> set;
};

inline const std::map<std::string, std::vector<NumericKey>> &numeric_keys() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    constexpr double tiny = std::numeric_limits<double>::min();
    static const std::map<std::string, std::vector<NumericKey>> keys = {
        {"interface",
         {
             {"b_field_gauss", tiny, inf, false, [](ExperimentSpec &s, double v) { s.config.b_field_gauss = v; }},
             {"raman_decay_tau_ns", tiny, inf, false,
              [](ExperimentSpec &s, double v) { s.config.raman_decay_tau_ns = v; }},
             {"dephasing_sigma_rad", 0.0, inf, false,
              [](ExperimentSpec &s, double v) { s.config.dephasing_sigma_rad = v; }},
             {"branching_pd", 0.0, 1.0, false, [](ExperimentSpec &s, double v) { s.config.branching_pd = v; }},
             {"dark_rate_per_s", 0.0, inf, false, [](ExperimentSpec &s, double v) { s.config.dark_rate_per_s = v; }},
             {"pmt_qe", 0.0, 1.0, false, [](ExperimentSpec &s, double v) { s.config.pmt_qe = v; }},
             {"fiber_coupling_eff", 0.0, 1.0, false,
              [](ExperimentSpec &s, double v) { s.config.fiber_coupling_eff = v; }},
             {"analyzer_transmission", 0.0, 1.0, false,
              [](ExperimentSpec &s, double v) { s.config.analyzer_transmission = v; }},
             {"rep_rate_hz", tiny, inf, false, [](ExperimentSpec &s, double v) { s.config.rep_rate_hz = v; }},
             {"waveplate_miscal_rad", -kPi, kPi, false,
              [](ExperimentSpec &s, double v) { s.config.waveplate_miscal_rad = v; }},
             {"timing_jitter_fwhm_ns", 0.0, inf, false,
              [](ExperimentSpec &s, double v) { s.config.timing_jitter_fwhm_ns = v; }},
         }},
        {"plan",
         {
             {"trials_per_setting", 1.0, 9.0e18, true,
              [](ExperimentSpec &s, double v) { s.trials_per_setting = static_cast<std::uint64_t>(v); }},
             {"seed", 0.0, 9.0e18, true, [](ExperimentSpec &s, double v) { s.seed = static_cast<std::uint64_t>(v); }},
             {"window_ns", tiny, inf, false, [](ExperimentSpec &s, double v) { s.window_ns = v; }},
             {"acquisition_ns", tiny, inf, false, [](ExperimentSpec &s, double v) { s.acquisition_ns = v; }},
             {"phase_bins", 0.0, 100000.0, true,
              [](ExperimentSpec &s, double v) { s.phase_bins = static_cast<int>(v); }},
             {"bootstrap_resamples", 0.0, 1.0e6, true,
              [](ExperimentSpec &s, double v) { s.bootstrap_resamples = static_cast<int>(v); }},
         }},
        {"prep",
         {
             {"theta_d_rad", 0.0, kPi, false, [](ExperimentSpec &s, double v) { s.prep.theta_d = v; }},
             {"phi_729_rad", -inf, inf, false, [](ExperimentSpec &s, double v) { s.prep.phi_729 = v; }},
         }},
        {"photon",
         {
             {"theta_854_rad", 0.0, kPi, false, [](ExperimentSpec &s, double v) { s.photon.theta_854 = v; }},
             {"phi_854_rad", -inf, inf, false, [](ExperimentSpec &s, double v) { s.photon.phi_854 = v; }},
         }},
    };
    return keys;
}

inline std::string format_range(const NumericKey &k) {
    auto bound = [](double v) {
        if (std::isinf(v)) return std::string(v > 0 ? "inf" : "-inf");
        if (v == std::numeric_limits<double>::min()) return std::string("0 (exclusive)");
        return fmt_double(v);
    };
    return "[" + bound(k.lo) + ", " + bound(k.hi) + "]";
}

} // namespace detail

/// Parses a specification, collecting every problem into `report`.
inline std::optional<ExperimentSpec> parse_spec(const std::string &text, ValidationReport &report) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    if (detail::trim(text).empty()) {
        report.parse_errors.emplace_back("empty specification");
        return std::nullopt;
    }
    try {
        std::istringstream is(text);
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error &e) {
        report.parse_errors.emplace_back(fmt::format("line {}: {}", e.line(), e.message()));
        return std::nullopt;
    }

    ExperimentSpec spec;
    const auto &numeric = detail::numeric_keys();
    static const std::map<std::string, std::set<std::string>> list_keys = {
        {"experiment", {"name", "mode", "stages"}},
        {"plan", {"windows_ns"}},
        {"prep", {"inputs"}},
    };

    for (const auto &[section, body] : tree) {
        const bool known_section = numeric.count(section) || list_keys.count(section);
        if (!known_section) {
            report.unknown_keys.push_back("[" + section + "]");
            continue;
        }
        if (body.empty() && !body.data().empty()) {
            report.parse_errors.push_back("key '" + section + "' outside of a section");
            continue;
        }
        for (const auto &[key, node] : body) {
            const std::string value = detail::trim(node.data());
            const std::string where = section + "." + key;
            const auto lk = list_keys.find(section);
            if (lk != list_keys.end() && lk->second.count(key)) {
                if (where == "experiment.name") {
                    spec.name = value;
                } else if (where == "experiment.mode") {
                    spec.mode = value;
                } else if (where == "experiment.stages") {
                    spec.stages = detail::split_list(value);
                } else if (where == "plan.windows_ns") {
                    spec.windows_ns.clear();
                    for (const auto &w : detail::split_list(value)) {
                        const auto v = detail::parse_number(w);
                        if (!v) {
                            report.parse_errors.push_back(where + ": '" + w + "' is not a number");
                        } else {
                            spec.windows_ns.push_back(*v);
                        }
                    }
                } else if (where == "prep.inputs") {
                    const auto all = sender_preparations();
                    for (const auto &label : detail::split_list(value)) {
                        const auto it = std::find_if(all.begin(), all.end(),
                                                     [&](const Preparation &p) { return p.label == label; });
                        if (it == all.end()) {
                            report.range_violations.push_back(where + ": unknown input '" + label + "'");
                        } else {
                            spec.inputs.push_back(*it);
                        }
                    }
                }
                continue;
            }
            const auto ns = numeric.find(section);
            const auto nk = ns == numeric.end()
                                ? std::vector<detail::NumericKey>::const_iterator{}
                                : std::find_if(ns->second.begin(), ns->second.end(),
                                               [&](const detail::NumericKey &k) { return key == k.name; });
            if (ns == numeric.end() || nk == ns->second.end()) {
                report.unknown_keys.push_back(where);
                continue;
            }
            const auto v = detail::parse_number(value);
            if (!v) {
                report.parse_errors.push_back(where + ": '" + value + "' is not a number");
                continue;
            }
            if (*v < nk->lo || *v > nk->hi || (nk->integral && std::floor(*v) != *v)) {
                report.range_violations.push_back(fmt::format("{} = {} outside {}{}", where, value,
                                                              detail::format_range(*nk),
                                                              nk->integral ? " (integer)" : ""));
                continue;
            }
            nk->set(spec, *v);
        }
    }

    // Cross-field checks.
    if (!tree.get_child_optional("experiment")) {
        report.parse_errors.emplace_back("missing [experiment] section");
        return std::nullopt;
    }
    if (spec.name.empty()) report.range_violations.emplace_back("experiment.name must not be empty");
    if (spec.mode != "entangler" && spec.mode != "sender") {
        report.range_violations.push_back("experiment.mode = " + spec.mode + " outside {entangler, sender}");
    }
    const auto &stages = known_stages();
    for (const auto &s : spec.stages) {
        if (std::find(stages.begin(), stages.end(), s) == stages.end()) {
            report.range_violations.push_back("experiment.stages: undefined stage '" + s + "'");
        }
    }
    static const std::set<std::string> entangler_only = {"state_tomography", "witness"};
    static const std::set<std::string> sender_only = {"arrival", "poincare", "phase_lines", "process_tomography",
                                                      "window_sweep"};
    for (const auto &s : spec.stages) {
        if (spec.mode == "entangler" && sender_only.count(s)) {
            report.range_violations.push_back("stage '" + s + "' requires mode = sender");
        }
        if (spec.mode == "sender" && entangler_only.count(s)) {
            report.range_violations.push_back("stage '" + s + "' requires mode = entangler");
        }
    }
    if (spec.has_stage("witness") && !spec.has_stage("state_tomography")) {
        report.range_violations.emplace_back("stage 'witness' requires stage 'state_tomography'");
    }
    if (spec.has_stage("witness") && spec.bootstrap_resamples < 100) {
        report.range_violations.emplace_back("stage 'witness' needs plan.bootstrap_resamples >= 100");
    }
    if (spec.bootstrap_resamples != 0 && spec.bootstrap_resamples < 100) {
        report.range_violations.emplace_back("plan.bootstrap_resamples must be 0 (off) or >= 100");
    }
    if (spec.acquisition_ns < spec.window_ns) {
        report.range_violations.emplace_back("plan.acquisition_ns must be >= plan.window_ns");
    }
    for (std::size_t i = 0; i < spec.windows_ns.size(); ++i) {
        if (!(spec.windows_ns[i] > 0.0) || (i > 0 && !(spec.windows_ns[i] > spec.windows_ns[i - 1]))) {
            report.range_violations.emplace_back("plan.windows_ns must be positive and ascending");
            break;
        }
        if (spec.windows_ns[i] > spec.acquisition_ns) {
            report.range_violations.emplace_back("plan.windows_ns must not exceed plan.acquisition_ns");
            break;
        }
    }
    if (spec.has_stage("window_sweep") && spec.windows_ns.empty()) {
        report.range_violations.emplace_back("stage 'window_sweep' needs plan.windows_ns");
    }
    if (spec.mode == "sender") {
        if (spec.inputs.empty()) report.range_violations.emplace_back("prep.inputs must list at least one input");
        const bool tomo = spec.has_stage("process_tomography") || spec.has_stage("window_sweep");
        if (tomo && spec.inputs.size() < 4) {
            report.range_violations.emplace_back("process tomography needs the six standard inputs");
        }
    }

    // Derived quantities.
    if (spec.config.b_field_gauss > 0.0) {
        report.derived.emplace_back("larmor_period_ns", fmt_double(spec.config.larmor_period_ns()));
        report.derived.emplace_back("larmor_omega_rad_per_ns", fmt_double(spec.config.larmor_omega()));
    }
    const double survival = spec.config.detection_survival();
    const double dark_in_window = spec.config.dark_rate_per_s * spec.window_ns * 1e-9;
    const double eff = survival * (1.0 - std::exp(-spec.window_ns / spec.config.raman_decay_tau_ns)) + dark_in_window;
    report.derived.emplace_back("detection_survival", fmt_double(survival));
    report.derived.emplace_back("expected_efficiency", fmt_double(eff));
    if (spec.config.pmt_qe > 0.0 && spec.config.rep_rate_hz > 0.0) {
        report.derived.emplace_back("expected_fiber_rate_per_s",
                                    fmt_double(rate_bookkeeping(spec.config.rep_rate_hz, eff, spec.config.pmt_qe)));
    }
    const std::size_t n_settings = spec.mode == "sender" ? 3 * spec.inputs.size() : 9;
    report.derived.emplace_back("n_settings", std::to_string(n_settings));
    report.derived.emplace_back("total_trials", std::to_string(n_settings * spec.trials_per_setting));

    if (!report.ok()) return std::nullopt;
    return spec;
}

inline ExperimentSpec parse_spec(const std::string &text) {
    ValidationReport report;
    auto spec = parse_spec(text, report);
    if (!spec) throw ConfigError("invalid specification:\n" + report.to_text());
    return *spec;
}

inline std::string read_file(const fs::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Validation report for a specification file; throws if the file is unreadable.
inline ValidationReport validate_config(const fs::path &path) {
    ValidationReport report;
    (void)parse_spec(read_file(path), report);
    return report;
}

// Presets.

inline const std::map<std::string, std::string> &preset_texts() {
    static const std::map<std::string, std::string> presets = {
        {"fig3", R"([experiment]
name = fig3
mode = sender
stages = arrival, poincare, rates

[interface]
fiber_coupling_eff = 0.01412
rep_rate_hz = 10000
waveplate_miscal_rad = 0

[plan]
trials_per_setting = 3e8
seed = 1
window_ns = 450
acquisition_ns = 2000
phase_bins = 64
bootstrap_resamples = 0

[prep]
inputs = phi0
)"},
        {"fig4", R"([experiment]
name = fig4
mode = entangler
stages = state_tomography, witness, rates

[interface]
b_field_gauss = 2.8
raman_decay_tau_ns = 400
dephasing_sigma_rad = 0.65
branching_pd = 0.0587
dark_rate_per_s = 30
pmt_qe = 0.28
fiber_coupling_eff = 0.03951
analyzer_transmission = 0.5
rep_rate_hz = 11000
waveplate_miscal_rad = 0.375
timing_jitter_fwhm_ns = 0.32

[plan]
trials_per_setting = 1466667
seed = 1
window_ns = 450
acquisition_ns = 2000
phase_bins = 64
bootstrap_resamples = 200

[prep]
theta_d_rad = 1.5707963267948966
phi_729_rad = 0

[photon]
theta_854_rad = 1.5707963267948966
phi_854_rad = 3.141592653589793
)"},
        {"fig5", R"([experiment]
name = fig5
mode = sender
stages = phase_lines, process_tomography, window_sweep, rates

[interface]
fiber_coupling_eff = 0.01412
rep_rate_hz = 10000
waveplate_miscal_rad = 0

[plan]
trials_per_setting = 4e6
seed = 1
window_ns = 450
acquisition_ns = 2000
phase_bins = 64
bootstrap_resamples = 200
windows_ns = 150, 300, 450, 600, 900

[prep]
inputs = phi0, phi90, phi180, phi270, minus52, plus52
)"},
    };
    return presets;
}

inline ExperimentSpec preset(const std::string &name) {
    const auto it = preset_texts().find(name);
    if (it == preset_texts().end()) throw ConfigError("unknown preset '" + name + "'");
    return parse_spec(it->second);
}

/// A preset name or a path to a specification file.
inline ExperimentSpec load_spec(const std::string &preset_or_path) {
    if (preset_texts().count(preset_or_path)) return preset(preset_or_path);
    return parse_spec(read_file(preset_or_path));
}

// Running.

struct RunOptions {
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> trials;
    std::optional<double> window_ns;
    std::optional<std::vector<double>> windows_ns;
    bool no_noise = false;
    unsigned jobs = 1;
    fs::path out_dir;
    /// Value of the "# created=" header line; empty omits the line.
    std::string created;
};

inline std::string utc_timestamp() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::time(nullptr)));
}

/// Applies command-line overrides and re-checks the result.
inline ExperimentSpec apply_overrides(ExperimentSpec spec, const RunOptions &opt) {
    if (opt.seed) spec.seed = *opt.seed;
    if (opt.trials) {
        if (*opt.trials == 0) throw ConfigError("--trials must be positive");
        spec.trials_per_setting = *opt.trials;
    }
    if (opt.window_ns) {
        if (!(*opt.window_ns > 0.0) || *opt.window_ns > spec.acquisition_ns) {
            throw ConfigError("--window-ns must lie in (0, acquisition_ns]");
        }
        spec.window_ns = *opt.window_ns;
    }
    if (opt.windows_ns) {
        const auto &w = *opt.windows_ns;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (!(w[i] > 0.0) || (i > 0 && !(w[i] > w[i - 1])) || w[i] > spec.acquisition_ns) {
                throw ConfigError("--windows must be positive, ascending and within acquisition_ns");
            }
        }
        if (w.empty()) throw ConfigError("--windows must list at least one window");
        spec.windows_ns = w;
    }
    if (opt.no_noise) spec.config = spec.config.noiseless();
    return spec;
}

struct SummaryLine {
    std::string key;
    std::string value;
    std::string reference;
};

struct ExperimentResult {
    std::vector<SummaryLine> summary;
    std::vector<fs::path> files;

    [[nodiscard]] std::optional<std::string> get(const std::string &key) const {
        for (const auto &l : summary)
            if (l.key == key) return l.value;
        return std::nullopt;
    }
};

namespace detail {

inline std::string summary_text(const std::vector<SummaryLine> &lines) {
    std::string s;
    for (const auto &l : lines) {
        s += l.key + '=' + l.value;
        if (!l.reference.empty()) s += " ; reference=" + l.reference;
        s += '\n';
    }
    return s;
}

inline std::string created_line(const std::string &created) {
    return created.empty() ? std::string() : "# created=" + created + "\n";
}

inline std::string file_stem(const std::string &stream) {
    std::string s = stream;
    std::replace(s.begin(), s.end(), '/', '_');
    return s;
}

inline nlohmann::json matrix_json(const CMatrix &m, bool imag) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(imag ? m(r, c).imag() : m(r, c).real());
        rows.push_back(row);
    }
    return rows;
}

inline std::string hex64(std::uint64_t h) { return fmt::format("{:016x}", h); }

} // namespace detail

inline nlohmann::json estimate_json(const std::string &prep, const StateEstimate &est) {
    return {
        {"preparation", prep},
        {"rho_real", detail::matrix_json(est.rho.matrix(), false)},
        {"rho_imag", detail::matrix_json(est.rho.matrix(), true)},
        {"log_likelihood", est.log_likelihood},
        {"n_iterations", est.n_iterations},
        {"converged", est.converged},
        {"min_eigenvalue", est.rho.min_eigenvalue()},
    };
}

inline nlohmann::json process_json(const ProcessResult &p) {
    return {
        {"basis", {"I", "X", "Y", "Z"}},
        {"chi_real", detail::matrix_json(p.chi.chi, false)},
        {"chi_imag", detail::matrix_json(p.chi.chi, true)},
        {"process_fidelity", process_fidelity(p.chi)},
        {"projection_distance", p.projection_distance},
        {"tp_residual", p.chi.tp_residual()},
        {"min_eigenvalue", p.chi.min_eigenvalue()},
    };
}

/**
 * Writes the artifacts of one experiment into `out_dir`:
 * tags/<prep>_<setting>.csv, histograms.csv, and depending on the stages counts.csv,
 * estimate(s).json, chi.json, poincare.csv, phase_lines.csv,
 * window_sweep.csv; always summary.txt.
 */
class ExperimentRunner {
  public:
    ExperimentRunner(ExperimentSpec spec, RunOptions options, std::ostream *log = nullptr)
        : spec_(std::move(spec)), opt_(std::move(options)), log_(log) {
        if (opt_.out_dir.empty()) opt_.out_dir = fs::path("out") / spec_.name;
    }

    ExperimentResult run() {
        fs::create_directories(opt_.out_dir / "tags");
        simulate();
        add("experiment", spec_.name);
        add("mode", spec_.mode);
        add("seed", std::to_string(spec_.seed));
        add("trials_per_setting", std::to_string(spec_.trials_per_setting));
        add("window_ns", fmt_double(spec_.window_ns));
        add("larmor_period_ns", fmt::format("{:.4f}", spec_.config.larmor_period_ns()), "~64");
        if (spec_.has_stage("arrival")) stage_arrival();
        if (spec_.has_stage("poincare")) stage_poincare();
        if (spec_.has_stage("phase_lines")) stage_phase_lines();
        if (spec_.has_stage("state_tomography")) stage_state_tomography();
        if (spec_.has_stage("witness")) stage_witness();
        if (spec_.has_stage("process_tomography")) stage_process();
        if (spec_.has_stage("window_sweep")) stage_window_sweep();
        if (spec_.has_stage("rates")) stage_rates();
        write_text("summary.txt", detail::summary_text(result_.summary));
        return result_;
    }

    [[nodiscard]] const std::vector<RunData> &runs() const { return runs_; }

  private:
    ExperimentSpec spec_;
    RunOptions opt_;
    std::ostream *log_;
    std::vector<RunData> runs_;
    std::uint64_t tags_hash_ = stream_key("");
    ExperimentResult result_;
    std::optional<double> fidelity_, fidelity_err_;

    void note(const std::string &msg) {
        if (log_) *log_ << "[" << spec_.name << "] " << msg << '\n';
    }

    void add(const std::string &key, const std::string &value, const std::string &reference = {}) {
        result_.summary.push_back({key, value, reference});
    }

    void write_text(const std::string &name, const std::string &body, bool stamped = true) {
        const fs::path path = opt_.out_dir / name;
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + path.string());
        if (stamped) os << detail::created_line(opt_.created);
        os << body;
        if (!os) throw std::runtime_error("write failed for " + path.string());
        result_.files.push_back(path);
    }

    [[nodiscard]] Metadata base_meta() const {
        Metadata m = describe(spec_.config);
        m["experiment"] = spec_.name;
        m["seed"] = std::to_string(spec_.seed);
        return m;
    }

    void simulate() {
        std::vector<RunPlan> plans;
        if (spec_.mode == "entangler") {
            for (auto p : {AnalysisBasis::HV, AnalysisBasis::DA, AnalysisBasis::RL}) {
                for (auto a : {AtomBasis::Z, AtomBasis::X, AtomBasis::Y}) {
                    RunPlan plan = base_plan();
                    plan.mode = Entangler{};
                    plan.prep = spec_.prep;
                    plan.photon_basis = p;
                    plan.atom_basis = a;
                    plan.stream = "bell/" + setting_label(p, a);
                    plans.push_back(plan);
                    runs_.push_back({"bell", plan, {}});
                }
            }
        } else {
            for (const auto &in : spec_.inputs) {
                for (auto p : {AnalysisBasis::HV, AnalysisBasis::DA, AnalysisBasis::RL}) {
                    RunPlan plan = base_plan();
                    plan.mode = Sender{AtomBasis::X};
                    plan.prep = in.prep;
                    plan.photon_basis = p;
                    plan.stream = in.label + "/" + to_string(p);
                    runs_.push_back({in.label, plan, {}});
                }
            }
        }
        std::vector<std::pair<std::string, ArrivalHistogram>> hists;
        const auto n_bins = static_cast<std::size_t>(std::ceil(spec_.acquisition_ns / 5.0));
        for (auto &run : runs_) {
            note("simulating " + run.plan.stream);
            run.tags = simulate_run(run.plan, spec_.config, opt_.jobs);
            Metadata meta = base_meta();
            for (const auto &[k, v] : describe(run.plan)) meta[k] = v;
            std::ostringstream body;
            write_tags(body, run.tags, meta);
            const std::string text = body.str();
            tags_hash_ = stream_key(std::to_string(tags_hash_) + text);
            write_text("tags/" + detail::file_stem(run.plan.stream) + ".csv", text);
            if (run.plan.effective_atom_basis() != AtomBasis::None) {
                hists.emplace_back("|" + run.plan.stream + "|+",
                                   histogram(run.tags, 5.0, AtomFilter::Plus, run.plan.n_trials, n_bins));
                hists.emplace_back("|" + run.plan.stream + "|-",
                                   histogram(run.tags, 5.0, AtomFilter::Minus, run.plan.n_trials, n_bins));
            } else {
                hists.emplace_back("|" + run.plan.stream,
                                   histogram(run.tags, 5.0, AtomFilter::Any, run.plan.n_trials, n_bins));
            }
        }
        std::ostringstream hs;
        write_histograms(hs, hists, base_meta());
        write_text("histograms.csv", hs.str());
    }

    [[nodiscard]] RunPlan base_plan() const {
        RunPlan plan;
        plan.n_trials = spec_.trials_per_setting;
        plan.seed = spec_.seed;
        plan.photon = spec_.photon;
        plan.window_ns = spec_.window_ns;
        plan.acquisition_ns = spec_.acquisition_ns;
        return plan;
    }

    [[nodiscard]] std::vector<TimeTagRecord> tags_for(const std::string &prep, AnalysisBasis basis) const {
        for (const auto &r : runs_) {
            if (r.prep_label == prep && r.plan.photon_basis == basis) return r.tags;
        }
        throw ConfigError("no run for " + prep + "/" + to_string(basis));
    }

    /// Clicks of the three basis runs of one input, heralded by "+", within the window.
    [[nodiscard]] std::vector<PhasedTag> heralded_phased(const std::string &prep) const {
        std::vector<TimeTagRecord> all;
        for (auto b : {AnalysisBasis::HV, AnalysisBasis::DA, AnalysisBasis::RL}) {
            for (const auto &t : tags_for(prep, b)) {
                if (t.click_time_ns <= spec_.window_ns && t.atom_outcome == AtomOutcome::Plus) all.push_back(t);
            }
        }
        return larmor_phase_fold(all, spec_.config.larmor_period_ns());
    }

    CountsTable build_counts(double window) const {
        CountsTable table;
        for (const auto &r : runs_) accumulate_counts(table, r.prep_label, r.tags, r.plan, spec_.config, window,
                                                      spec_.phase_bins);
        table.meta = base_meta();
        table.meta["window_ns"] = fmt_double(window);
        table.meta["phase_bins"] = std::to_string(spec_.phase_bins);
        table.meta["source_tags_hash"] = detail::hex64(tags_hash_);
        return table;
    }

    void stage_arrival() {
        note("arrival-time analysis");
        const double period = spec_.config.larmor_period_ns();
        for (const auto &in : spec_.inputs) {
            const auto tags = window_select(tags_for(in.label, AnalysisBasis::HV), spec_.window_ns, 1).tags;
            const auto n_bins = static_cast<std::size_t>(std::ceil(spec_.window_ns / 2.0));
            const auto plus = histogram(tags, 2.0, AtomFilter::Plus, 0, n_bins);
            const auto minus = histogram(tags, 2.0, AtomFilter::Minus, 0, n_bins);
            const PeriodFit fit = fit_oscillation_period({{plus, 1.0}, {minus, -1.0}}, period);
            add("period_fit_ns_" + in.label, fmt::format("{:.4f}", fit.period_ns), "~64");
            add("period_fit_rel_error_" + in.label, fmt::format("{:.6f}", fit.period_ns / period - 1.0));
            add("oscillation_visibility_" + in.label, fmt::format("{:.4f}", fit.visibility));
        }
    }

    void stage_poincare() {
        note("Poincare profile");
        std::string body = "preparation,larmor_phase_rad,s1,s2,s3,n_hv,n_da,n_rl\n";
        for (const auto &in : spec_.inputs) {
            const PoincareProfile prof = poincare_vs_phase(heralded_phased(in.label), 32);
            for (std::size_t b = 0; b < prof.bin_center.size(); ++b) {
                const auto &s = prof.stokes[b];
                body += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{},{},{}\n", in.label, prof.bin_center[b], s.s1,
                                    s.s2, s.s3, prof.counts[b][0], prof.counts[b][1], prof.counts[b][2]);
            }
            add("s1_amplitude_" + in.label, fmt::format("{:.4f}", prof.fits[0].amplitude));
            add("s2_amplitude_" + in.label, fmt::format("{:.4f}", prof.fits[1].amplitude));
            add("s3_amplitude_" + in.label, fmt::format("{:.4f}", prof.fits[2].amplitude), "~0");
            add("s3_offset_" + in.label, fmt::format("{:.4f}", prof.fits[2].offset));
        }
        write_text("poincare.csv", body);
    }

    void stage_phase_lines() {
        note("polarization phase lines");
        std::string body = "preparation,slope,intercept_rad\n";
        std::vector<std::pair<std::string, PhaseLine>> lines;
        for (const auto &in : spec_.inputs) {
            if (std::abs(in.prep.theta_d - kPi / 2.0) > 1e-12) continue;
            const PhaseLine line = polarization_phase_line(poincare_vs_phase(heralded_phased(in.label), 32));
            body += fmt::format("{},{:.6f},{:.6f}\n", in.label, line.slope, line.intercept);
            add("phase_line_slope_" + in.label, fmt::format("{:.4f}", line.slope), "1");
            lines.emplace_back(in.label, line);
        }
        for (std::size_t i = 1; i < lines.size(); ++i) {
            const double step = wrap_phase(lines[i].second.intercept - lines[i - 1].second.intercept);
            add("phase_line_step_" + lines[i - 1].first + "_" + lines[i].first, fmt::format("{:.4f}", step),
                "pi/2");
        }
        write_text("phase_lines.csv", body);
    }

    void stage_state_tomography() {
        note("state tomography");
        std::ostringstream cs;
        const CountsTable counts = build_counts(spec_.window_ns);
        write_counts(cs, counts);
        write_text("counts.csv", cs.str());
        const EntanglerResult r = analyze_entangler(counts, spec_.prep);
        nlohmann::json j = estimate_json("bell", r.estimate);
        j["target_fidelity"] = r.fidelity;
        fidelity_ = r.fidelity;
        add("fidelity", fmt::format("{:.4f}", r.fidelity), "0.846(2)");
        add("mle_converged", r.estimate.converged ? "true" : "false");
        if (spec_.bootstrap_resamples > 0) {
            note(fmt::format("bootstrap, {} resamples", spec_.bootstrap_resamples));
            const AtomPrep prep = spec_.prep;
            const BootstrapResult b = bootstrap_errors(
                counts, spec_.bootstrap_resamples, spec_.seed,
                [prep](const CountsTable &c) { return analyze_entangler(c, prep).fidelity; }, opt_.jobs);
            fidelity_err_ = b.std;
            j["bootstrap"] = {{"resamples", spec_.bootstrap_resamples}, {"mean", b.mean}, {"std", b.std},
                              {"failures", b.failures}};
            add("fidelity_err", fmt::format("{:.4f}", b.std), "0.002");
            add("bootstrap_failures", std::to_string(b.failures));
        }
        write_text("estimate.json", j.dump(2) + "\n", false);
    }

    void stage_witness() {
        const WitnessResult w = entanglement_witness(fidelity_.value(), fidelity_err_.value());
        add("entangled", w.is_entangled ? "true" : "false");
        add("witness_margin_sigma", fmt::format("{:.1f}", w.margin_sigmas), ">80");
    }

    void stage_process() {
        note("process tomography");
        const CountsTable counts = build_counts(spec_.window_ns);
        std::ostringstream cs;
        write_counts(cs, counts);
        write_text("counts.csv", cs.str());
        const SenderResult r = analyze_sender(counts, spec_.inputs);
        nlohmann::json est = nlohmann::json::array();
        for (std::size_t i = 0; i < r.estimates.size(); ++i) {
            nlohmann::json j = estimate_json(r.labels[i], r.estimates[i]);
            j["target_fidelity"] = r.fidelities[i];
            est.push_back(j);
            add("state_fidelity_" + r.labels[i], fmt::format("{:.4f}", r.fidelities[i]));
        }
        write_text("estimates.json", est.dump(2) + "\n", false);
        nlohmann::json chi = process_json(r.process);
        add("chi11", fmt::format("{:.4f}", r.chi11), "0.902(10)");
        add("mean_state_fidelity", fmt::format("{:.4f}", r.mean_fidelity), "0.924(3)");
        add("chi_projection_distance", fmt::format("{:.6f}", r.process.projection_distance));
        if (spec_.bootstrap_resamples > 0) {
            note(fmt::format("bootstrap, {} resamples", spec_.bootstrap_resamples));
            const auto inputs = spec_.inputs;
            const BootstrapResult b = bootstrap_errors(
                counts, spec_.bootstrap_resamples, spec_.seed,
                [inputs](const CountsTable &c) { return analyze_sender(c, inputs).chi11; }, opt_.jobs);
            chi["bootstrap"] = {{"resamples", spec_.bootstrap_resamples}, {"mean", b.mean}, {"std", b.std},
                                {"failures", b.failures}};
            add("chi11_err", fmt::format("{:.4f}", b.std), "0.010");
        }
        write_text("chi.json", chi.dump(2) + "\n", false);
    }

    void stage_window_sweep() {
        note("window sweep");
        const auto rows = window_sweep(spec_.windows_ns, runs_, spec_.inputs, spec_.config, spec_.phase_bins);
        std::string body = "window_ns,process_fidelity,mean_state_fidelity,efficiency\n";
        for (const auto &r : rows) {
            body += fmt::format("{},{:.6f},{:.6f},{:.8f}\n", fmt_double(r.window_ns), r.process_fidelity,
                                r.mean_state_fidelity, r.efficiency);
        }
        write_text("window_sweep.csv", body);
        add("window_sweep_rows", std::to_string(rows.size()));
    }

    void stage_rates() {
        double eff = 0.0;
        for (const auto &r : runs_) eff += window_select(r.tags, spec_.window_ns, r.plan.n_trials).efficiency;
        eff /= static_cast<double>(runs_.size());
        const double rate = rate_bookkeeping(spec_.config.rep_rate_hz, eff, spec_.config.pmt_qe);
        const bool ent = spec_.mode == "entangler";
        add("efficiency", fmt::format("{:.6f}", eff), ent ? "0.00353" : "0.00127(1)");
        add("fiber_rate_per_s", fmt::format("{:.2f}", rate), ent ? "140(5)" : "45(2)");
    }
};

inline ExperimentResult run_experiment(const ExperimentSpec &spec, const RunOptions &options,
                                       std::ostream *log = nullptr) {
    return ExperimentRunner(apply_overrides(spec, options), options, log).run();
}

/// Maximum-likelihood estimates for every preparation of a counts table.
inline nlohmann::json tomo_counts(const CountsTable &counts) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto &prep : counts.preparations()) {
        const CountsTable sub = counts.select(prep);
        const LinearInversionResult li = linear_inversion(sub);
        nlohmann::json j = estimate_json(prep, mle_state(sub));
        j["linear_inversion_min_eigenvalue"] = li.min_eigenvalue;
        j["linear_inversion_physical"] = li.is_physical;
        out.push_back(j);
    }
    return out;
}

/// Process matrix from a counts table of the standard sender inputs.
inline SenderResult process_counts(const CountsTable &counts) {
    const auto all = sender_preparations();
    std::vector<Preparation> preps;
    for (const auto &label : counts.preparations()) {
        const auto it = std::find_if(all.begin(), all.end(), [&](const Preparation &p) { return p.label == label; });
        if (it == all.end()) throw ConfigError("process: unknown preparation label '" + label + "'");
        preps.push_back(*it);
    }
    return analyze_sender(counts, preps);
}

} // namespace qiface
