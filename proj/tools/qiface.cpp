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

// Command-line front end. Exit codes: 0 success, 1 runtime or numerical
// failure, 2 usage or parse error.

#include "qiface/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::vector<double> parse_windows(const std::string &s) {
    std::vector<double> out;
    for (const auto &w : qiface::detail::split_list(s)) {
        const auto v = qiface::detail::parse_number(w);
        if (!v) throw qiface::ConfigError("--windows: '" + w + "' is not a number");
        out.push_back(*v);
    }
    return out;
}

void print_summary(const qiface::ExperimentResult &r, const std::filesystem::path &dir) {
    std::cout << qiface::detail::summary_text(r.summary);
    std::cout << "output_dir=" << dir.string() << '\n';
}

void write_or_print(const std::string &text, const std::string &path) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << text;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Atom-photon quantum interface simulator and tomography toolkit"};
    app.require_subcommand(1);

    std::string target, seed_s, trials_s, windows_s, out;
    double window_ns = 0.0;
    bool no_noise = false;
    unsigned jobs = 1;

    auto add_run_flags = [&](CLI::App *cmd) {
        cmd->add_option("--seed", seed_s, "Master seed");
        cmd->add_option("--trials", trials_s, "Trials per measurement setting (e.g. 2e6)");
        cmd->add_option("--window-ns", window_ns, "Detection window in ns");
        cmd->add_option("--windows", windows_s, "Comma-separated window sweep in ns");
        cmd->add_option("--out", out, "Output directory");
        cmd->add_flag("--no-noise", no_noise, "Disable dephasing, wave-plate error, dark counts and jitter");
        cmd->add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(1u, 256u));
    };

    auto *run = app.add_subcommand("run", "Run a preset (fig3, fig4, fig5) or a specification file");
    run->add_option("spec", target, "Preset name or specification path")->required();
    add_run_flags(run);

    auto *sweep = app.add_subcommand("sweep", "Sender window sweep from a preset or specification");
    sweep->add_option("spec", target, "Preset name or specification path")->required();
    add_run_flags(sweep);

    auto *validate = app.add_subcommand("validate", "Check a specification without running it");
    validate->add_option("spec", target, "Preset name or specification path")->required();

    auto *tomo = app.add_subcommand("tomo", "Maximum-likelihood state estimates from a counts file");
    tomo->add_option("counts", target, "Counts file")->required();
    tomo->add_option("--out", out, "Write the JSON here instead of standard output");

    auto *process = app.add_subcommand("process", "Process matrix from a directory holding counts.csv");
    process->add_option("dir", target, "Directory with counts.csv")->required();
    process->add_option("--out", out, "Write chi.json here (default: <dir>/chi.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (validate->parsed()) {
            qiface::ValidationReport report;
            const auto &presets = qiface::preset_texts();
            const auto it = presets.find(target);
            (void)qiface::parse_spec(it != presets.end() ? it->second : qiface::read_file(target), report);
            std::cout << report.to_text();
            return report.ok() ? 0 : kExitUsage;
        }
        if (run->parsed() || sweep->parsed()) {
            qiface::RunOptions opt;
            if (!seed_s.empty()) {
                opt.seed = qiface::detail::parse_count(seed_s);
                if (!opt.seed) throw qiface::ConfigError("--seed must be a non-negative integer");
            }
            if (!trials_s.empty()) {
                opt.trials = qiface::detail::parse_count(trials_s);
                if (!opt.trials) throw qiface::ConfigError("--trials must be a positive integer");
            }
            if (window_ns != 0.0) opt.window_ns = window_ns;
            if (!windows_s.empty()) opt.windows_ns = parse_windows(windows_s);
            opt.no_noise = no_noise;
            opt.jobs = jobs;
            opt.out_dir = out;
            opt.created = qiface::utc_timestamp();
            qiface::ExperimentSpec spec = qiface::load_spec(target);
            if (sweep->parsed()) {
                if (spec.mode != "sender") throw qiface::ConfigError("sweep needs a sender specification");
                spec.stages = {"window_sweep", "rates"};
                if (spec.windows_ns.empty() && !opt.windows_ns) {
                    throw qiface::ConfigError("sweep needs plan.windows_ns or --windows");
                }
            }
            if (opt.out_dir.empty()) opt.out_dir = std::filesystem::path("out") / spec.name;
            const auto result = qiface::run_experiment(spec, opt, &std::cerr);
            print_summary(result, opt.out_dir);
            return 0;
        }
        if (tomo->parsed()) {
            std::ifstream is(target);
            if (!is) throw qiface::ConfigError("cannot read " + target);
            const auto counts = qiface::read_counts(is);
            write_or_print(qiface::tomo_counts(counts).dump(2) + "\n", out);
            return 0;
        }
        if (process->parsed()) {
            const std::filesystem::path dir(target);
            std::ifstream is(dir / "counts.csv");
            if (!is) throw qiface::ConfigError("cannot read " + (dir / "counts.csv").string());
            const auto result = qiface::process_counts(qiface::read_counts(is));
            const std::string path = out.empty() ? (dir / "chi.json").string() : out;
            write_or_print(qiface::process_json(result.process).dump(2) + "\n", path);
            std::cout << "chi11=" << fmt::format("{:.4f}", result.chi11) << '\n'
                      << "mean_state_fidelity=" << fmt::format("{:.4f}", result.mean_fidelity) << '\n';
            return 0;
        }
    } catch (const qiface::ConfigError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const qiface::RankDeficientError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
