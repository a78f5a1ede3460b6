// Experiment CLI: config-driven runs, grid sweeps, SVG plots and record
// integrity reports. Exit codes: 0 success, 2 invalid config, 3 training
// abort (diagnostics file written next to the records).

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prd/errors.hpp"
#include "prd/plot.hpp"
#include "prd/runconfig.hpp"
#include "prd/runrecord.hpp"
#include "prd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> set_overrides;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    std::string mode;
    bool no_env = false;
};

prd::RunConfig load_config(const CommonOpts& opts) {
    std::vector<std::string> overrides = opts.set_overrides;
    if (!opts.out_dir.empty()) overrides.push_back("out_dir=" + opts.out_dir);
    if (!opts.mode.empty()) overrides.push_back("mode=" + opts.mode);
    if (!opts.seeds.empty()) {
        std::string list = "[";
        for (std::size_t i = 0; i < opts.seeds.size(); ++i)
            list += (i ? "," : "") + std::to_string(opts.seeds[i]);
        list += "]";
        overrides.push_back("seeds=" + list);
    }
    return prd::load_run_config(opts.config_path, overrides, !opts.no_env);
}

void print_summary(const prd::AggregateSummary& summary) {
    std::cout << "metric,mean,stderr\n";
    for (const auto& [k, v] : summary.mean)
        std::cout << k << "," << v << "," << summary.stderr_.at(k) << "\n";
}

int handle_abort(const prd::TrainingAbort& abort, const std::string& out_dir) {
    json diag{{"session", abort.session},
              {"epoch", abort.epoch},
              {"step", abort.step},
              {"sc", abort.breakdown.sc},
              {"proto", abort.breakdown.proto},
              {"distill", abort.breakdown.distill},
              {"total", abort.breakdown.total},
              {"grad_norm", abort.grad_norm}};
    fs::create_directories(out_dir);
    const fs::path path = fs::path(out_dir) / "abort_diagnostics.json";
    std::ofstream(path) << diag.dump(2) << "\n";
    std::cerr << "training aborted: " << abort.what() << "\n"
              << "diagnostics: " << path.string() << "\n";
    return 3;
}

int cmd_run(const CommonOpts& opts) {
    prd::RunConfig cfg = load_config(opts);
    try {
        const prd::RunOutput output = prd::run_experiment(cfg);
        for (const auto& p : output.record_paths)
            std::cout << "record: " << p.string() << "\n";
        std::cout << "aggregate: " << output.aggregate_path.string() << "\n";
        print_summary(output.summary);
        return 0;
    } catch (const prd::TrainingAbort& abort) {
        return handle_abort(abort, cfg.out_dir);
    }
}

std::map<std::string, json> parse_grid(const std::string& grid_arg) {
    json grid;
    if (fs::exists(grid_arg)) {
        std::ifstream in(grid_arg);
        try {
            in >> grid;
        } catch (const json::exception& e) {
            throw prd::ConfigError("grid file " + grid_arg + ": " + e.what());
        }
    } else {
        grid = json::parse(grid_arg, nullptr, false);
        if (grid.is_discarded())
            throw prd::ConfigError("--grid: not a JSON object or readable file: " + grid_arg);
    }
    if (!grid.is_object()) throw prd::ConfigError("--grid: expected a JSON object");
    std::map<std::string, json> out;
    for (const auto& [key, values] : grid.items()) {
        if (!values.is_array() || values.empty())
            throw prd::ConfigError("--grid: '" + key + "' must map to a non-empty array");
        out[key] = values;
    }
    return out;
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
    return out;
}

int cmd_sweep(const CommonOpts& opts, const std::string& grid_arg) {
    const auto grid = parse_grid(grid_arg);
    prd::RunConfig base = load_config(opts);
    const std::string base_out = base.out_dir;

    // cross product in deterministic key order
    std::vector<std::map<std::string, json>> points{{}};
    for (const auto& [key, values] : grid) {
        std::vector<std::map<std::string, json>> next;
        for (const auto& point : points)
            for (const auto& v : values) {
                auto p = point;
                p[key] = v;
                next.push_back(std::move(p));
            }
        points = std::move(next);
    }

    std::ostringstream table;
    table << "point";
    for (const auto& [key, _] : grid) table << "," << key;
    table << ",avg_observed_accuracy_mean,avg_observed_accuracy_stderr\n";

    for (std::size_t i = 0; i < points.size(); ++i) {
        std::vector<std::string> overrides = opts.set_overrides;
        std::string tag = "grid_" + std::to_string(i);
        for (const auto& [key, value] : points[i]) {
            overrides.push_back(key + "=" + value.dump());
            tag += "_" + sanitize(key + "-" + value.dump());
        }
        overrides.push_back("out_dir=" + (fs::path(base_out) / tag).string());
        if (!opts.mode.empty()) overrides.push_back("mode=" + opts.mode);

        prd::RunConfig cfg = prd::load_run_config(opts.config_path, overrides, !opts.no_env);
        if (!opts.seeds.empty()) cfg.seeds = opts.seeds;
        std::cout << "== " << tag << " ==\n";
        try {
            const prd::RunOutput output = prd::run_experiment(cfg);
            print_summary(output.summary);
            table << tag;
            for (const auto& [key, _] : grid) table << "," << points[i].at(key).dump();
            table << "," << output.summary.mean.at("avg_observed_accuracy") << ","
                  << output.summary.stderr_.at("avg_observed_accuracy") << "\n";
        } catch (const prd::TrainingAbort& abort) {
            return handle_abort(abort, cfg.out_dir);
        }
    }

    fs::create_directories(base_out);
    const fs::path table_path = fs::path(base_out) / "sweep_summary.csv";
    std::ofstream(table_path) << table.str();
    std::cout << "sweep table: " << table_path.string() << "\n" << table.str();
    return 0;
}

int cmd_plot(const std::vector<std::string>& records, const std::string& out_dir) {
    std::vector<fs::path> paths(records.begin(), records.end());
    const prd::PlotOutput output = prd::plot_records(paths, out_dir);
    for (const auto& w : output.warnings) std::cerr << "warning: skipped " << w << "\n";
    for (const auto& p : output.written) std::cout << "plot: " << p.string() << "\n";
    return 0;
}

int cmd_report(std::vector<std::string> records, const std::string& dir) {
    if (!dir.empty())
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("record_", 0) == 0 && entry.path().extension() == ".json")
                records.push_back(entry.path().string());
        }
    if (records.empty()) {
        std::cerr << "report: no records found\n";
        return 2;
    }
    std::sort(records.begin(), records.end());

    bool ok = true;
    std::cout << "record,seed,avg_observed_accuracy,forgetting,integrity\n";
    for (const auto& path : records) {
        const prd::RunRecord r = prd::read_record(path);
        const double dev = prd::record_metric_deviation(r);
        const bool good = dev <= 1e-9;
        ok = ok && good;
        std::cout << fs::path(path).filename().string() << "," << r.seed << ","
                  << r.metrics.at("avg_observed_accuracy") << ",";
        if (r.metrics.count("forgetting")) std::cout << r.metrics.at("forgetting");
        std::cout << "," << (good ? "ok" : "MISMATCH") << "\n";
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prototype-relation continual-learning experiment runner"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string grid_arg;
    std::vector<std::string> record_args;
    std::string plot_out = "plots";
    std::string report_dir;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "run config file (JSON)")->required();
        sub->add_option("--set", opts.set_overrides,
                        "override a config field: path.to.field=value");
        sub->add_option("--seed", opts.seeds, "override the seed list");
        sub->add_option("--out", opts.out_dir, "override the output directory");
        sub->add_option("--mode", opts.mode,
                        "task_incremental | class_incremental | domain_incremental");
        sub->add_flag("--no-env", opts.no_env, "ignore PRD_* environment overrides");
    };

    CLI::App* run = app.add_subcommand("run", "execute every seed of a config");
    add_common(run);

    CLI::App* sweep = app.add_subcommand("sweep", "cross-product grid of runs");
    add_common(sweep);
    sweep->add_option("--grid", grid_arg, "JSON object of field -> value list, inline or a file")
        ->required();

    CLI::App* plot = app.add_subcommand("plot", "render SVG charts from records");
    plot->add_option("records", record_args, "record files")->required();
    plot->add_option("--out", plot_out, "output directory for images");

    CLI::App* report = app.add_subcommand("report", "summarize records and verify integrity");
    report->add_option("records", record_args, "record files");
    report->add_option("--dir", report_dir, "directory to scan for record_*.json");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(opts);
        if (sweep->parsed()) return cmd_sweep(opts, grid_arg);
        if (plot->parsed()) return cmd_plot(record_args, plot_out);
        if (report->parsed()) return cmd_report(record_args, report_dir);
    } catch (const prd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
