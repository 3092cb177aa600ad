#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "mflab/scenario.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_validate(const std::string& path) {
    try {
        const mflab::Scenario sc = mflab::load_scenario(path);
        std::cout << "OK: " << path << " (" << sc.name << ", "
                  << mflab::experiment_name(sc.experiment) << ")\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "INVALID: " << path << ": " << e.what() << "\n";
        return 1;
    }
}

int cmd_run(const std::string& path, const std::string& out_dir,
            std::optional<std::uint64_t> seed_override) {
    mflab::Scenario sc;
    try {
        sc = mflab::load_scenario(path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    const mflab::RunResult r = mflab::run_scenario(sc, out_dir, seed_override);
    if (r.pass) {
        std::cout << "PASS " << sc.name << " -> " << r.csv_path << "\n";
    } else {
        std::cerr << "FAIL " << sc.name << ": " << r.summary.value("error", std::string("?"))
                  << "\n";
    }
    return r.exit_code;
}

int cmd_suite(const std::string& dir, const std::string& out_dir, unsigned jobs,
              std::optional<std::uint64_t> seed_override) {
    std::vector<std::string> paths;
    if (!fs::is_directory(dir)) {
        std::cerr << "error: '" << dir << "' is not a directory\n";
        return 1;
    }
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) {
        std::cerr << "error: no scenario files in '" << dir << "'\n";
        return 1;
    }

    struct Line {
        std::string text;
        int code = 0;
    };
    std::vector<Line> lines(paths.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= paths.size()) return;
            Line& line = lines[i];
            try {
                const mflab::Scenario sc = mflab::load_scenario(paths[i]);
                const mflab::RunResult r = mflab::run_scenario(sc, out_dir, seed_override);
                line.code = r.exit_code;
                line.text = (r.pass ? "PASS " : "FAIL ") + sc.name + " (" + paths[i] + ")";
                if (!r.pass) line.text += ": " + r.summary.value("error", std::string("?"));
            } catch (const std::exception& e) {
                line.code = 1;
                line.text = "FAIL " + paths[i] + ": " + e.what();
            }
        }
    };

    jobs = std::max(1u, jobs);
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    int failures = 0;
    for (const Line& line : lines) {
        std::cout << line.text << "\n";
        if (line.code != 0) ++failures;
    }
    std::cout << (paths.size() - failures) << "/" << paths.size() << " scenarios passed\n";
    if (failures == 0) return 0;
    for (const Line& line : lines)
        if (line.code == 2) return 2;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mflab: mean-field ensemble Kalman experiment runner"};
    app.require_subcommand(1);

    std::string scenario_path, out_dir = ".", suite_dir;
    unsigned jobs = 1;
    std::uint64_t seed_value = 0;

    auto* run = app.add_subcommand("run", "run one scenario");
    run->add_option("scenario", scenario_path, "scenario JSON file")->required();
    run->add_option("--out", out_dir, "output directory (default: .)");
    run->add_option("--jobs", jobs, "accepted for symmetry with 'suite'");
    auto* seed_opt = run->add_option("--seed-override", seed_value, "replace the scenario seed");

    auto* validate = app.add_subcommand("validate", "check a scenario file");
    validate->add_option("scenario", scenario_path, "scenario JSON file")->required();

    auto* suite = app.add_subcommand("suite", "run every scenario in a directory");
    suite->add_option("dir", suite_dir, "directory of scenario JSON files")->required();
    suite->add_option("--out", out_dir, "output directory (default: .)");
    suite->add_option("--jobs", jobs, "worker threads");
    auto* suite_seed_opt =
        suite->add_option("--seed-override", seed_value, "replace every scenario seed");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        std::optional<std::uint64_t> seed;
        if (seed_opt->count() > 0) seed = seed_value;
        return cmd_run(scenario_path, out_dir, seed);
    }
    if (validate->parsed()) return cmd_validate(scenario_path);
    if (suite->parsed()) {
        std::optional<std::uint64_t> seed;
        if (suite_seed_opt->count() > 0) seed = seed_value;
        return cmd_suite(suite_dir, out_dir, jobs, seed);
    }
    return 1;
}
