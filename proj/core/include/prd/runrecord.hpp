#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prd/runconfig.hpp"

namespace prd {

// Persisted outcome of one seeded run. Append-only: records are written once
// (temp file + rename) and never mutated.
struct RunRecord {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string config_json;  // resolved config
    AccuracyMatrix matrix;
    std::vector<SessionDiagnostics> diagnostics;
    std::vector<double> cumulative_phase_accuracy;
    ClassAccuracyTable class_table;  // domain-incremental runs only
    std::vector<double> task1_probe_by_session;
    std::vector<StepTrace> loss_trace;
    std::map<std::string, double> metrics;  // final scalar metrics
    std::string final_prototypes_json;
    double wall_clock_seconds = 0.0;

    std::string to_json_string() const;
    static RunRecord from_json_string(const std::string& text);
};

void write_record(const std::filesystem::path& path, const RunRecord& record);
RunRecord read_record(const std::filesystem::path& path);

// Executes run_stream for one seed of the config and assembles the record.
RunRecord execute_single(const RunConfig& cfg, std::uint64_t seed);

// mean and standard error of each metric over the given records
struct AggregateSummary {
    std::size_t runs = 0;
    std::map<std::string, double> mean;
    std::map<std::string, double> stderr_;

    std::string to_json_string() const;
};
AggregateSummary aggregate(const std::vector<RunRecord>& records);

struct RunOutput {
    std::vector<std::filesystem::path> record_paths;
    std::filesystem::path aggregate_path;
    AggregateSummary summary;
};

// Runs every seed of the config, writing one record per seed plus an
// aggregate and CSV summaries under out_dir.
RunOutput run_experiment(const RunConfig& cfg);

// Recomputes every metric of a record from its persisted accuracy matrix and
// returns the largest absolute deviation from the stored values.
double record_metric_deviation(const RunRecord& record);

// Teacher snapshot persistence: prototypes as versioned JSON next to a binary
// encoder checkpoint.
void save_teacher_snapshot(const std::filesystem::path& dir, const TeacherSnapshot& snap);
TeacherSnapshot load_teacher_snapshot(const std::filesystem::path& dir);

}  // namespace prd
