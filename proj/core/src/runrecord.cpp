#include "prd/runrecord.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prd/errors.hpp"
#include "prd/version.hpp"

namespace prd {

using nlohmann::json;

namespace {

json matrix_to_json(const AccuracyMatrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(m.row(i));
    return rows;
}

AccuracyMatrix matrix_from_json(const json& rows) {
    AccuracyMatrix m;
    for (const auto& r : rows) m.append_row(r.get<std::vector<double>>());
    return m;
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

std::string RunRecord::to_json_string() const {
    json j;
    j["format_version"] = kRecordFormatVersion;
    j["library_version"] = kLibraryVersion;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["config"] = json::parse(config_json);
    j["matrix"] = matrix_to_json(matrix);

    json diags = json::array();
    for (const auto& d : diagnostics) {
        json e{{"session", d.session}, {"current_task_accuracy", d.current_task_accuracy}};
        if (d.old_task_accuracy)
            e["old_task_accuracy"] = *d.old_task_accuracy;
        else
            e["old_task_accuracy"] = nullptr;
        diags.push_back(std::move(e));
    }
    j["diagnostics"] = std::move(diags);
    j["cumulative_phase_accuracy"] = cumulative_phase_accuracy;

    if (!class_table.values.empty())
        j["class_table"] = {{"classes", class_table.classes}, {"values", class_table.values}};
    if (!task1_probe_by_session.empty()) j["task1_probe_by_session"] = task1_probe_by_session;

    json trace = json::array();
    for (const auto& t : loss_trace)
        trace.push_back({{"session", t.session},
                         {"epoch", t.epoch},
                         {"step", t.step},
                         {"sc", t.loss.sc},
                         {"proto", t.loss.proto},
                         {"distill", t.loss.distill},
                         {"total", t.loss.total},
                         {"grad_norm", t.grad_norm}});
    j["loss_trace"] = std::move(trace);
    j["metrics"] = metrics;
    if (!final_prototypes_json.empty())
        j["final_prototypes"] = json::parse(final_prototypes_json);
    j["wall_clock_seconds"] = wall_clock_seconds;
    return j.dump(2);
}

RunRecord RunRecord::from_json_string(const std::string& text) {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != kRecordFormatVersion)
        throw std::runtime_error("RunRecord: unsupported format version");
    RunRecord r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_json = j.at("config").dump();
    r.matrix = matrix_from_json(j.at("matrix"));
    for (const auto& e : j.at("diagnostics")) {
        SessionDiagnostics d;
        d.session = e.at("session").get<int>();
        d.current_task_accuracy = e.at("current_task_accuracy").get<double>();
        if (!e.at("old_task_accuracy").is_null())
            d.old_task_accuracy = e.at("old_task_accuracy").get<double>();
        r.diagnostics.push_back(d);
    }
    r.cumulative_phase_accuracy =
        j.at("cumulative_phase_accuracy").get<std::vector<double>>();
    if (j.contains("class_table")) {
        r.class_table.classes = j.at("class_table").at("classes").get<std::vector<int>>();
        r.class_table.values =
            j.at("class_table").at("values").get<std::vector<std::vector<double>>>();
    }
    if (j.contains("task1_probe_by_session"))
        r.task1_probe_by_session = j.at("task1_probe_by_session").get<std::vector<double>>();
    for (const auto& t : j.at("loss_trace")) {
        StepTrace st;
        st.session = t.at("session").get<int>();
        st.epoch = t.at("epoch").get<int>();
        st.step = t.at("step").get<int>();
        st.loss.sc = t.at("sc").get<double>();
        st.loss.proto = t.at("proto").get<double>();
        st.loss.distill = t.at("distill").get<double>();
        st.loss.total = t.at("total").get<double>();
        st.grad_norm = t.at("grad_norm").get<double>();
        r.loss_trace.push_back(st);
    }
    r.metrics = j.at("metrics").get<std::map<std::string, double>>();
    if (j.contains("final_prototypes")) r.final_prototypes_json = j.at("final_prototypes").dump();
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    return r;
}

void write_record(const std::filesystem::path& path, const RunRecord& record) {
    atomic_write(path, record.to_json_string());
}

RunRecord read_record(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read record " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return RunRecord::from_json_string(buf.str());
}

RunRecord execute_single(const RunConfig& cfg, std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();

    const Dataset data = build_dataset(cfg.stream);
    const std::vector<SessionSpec> sessions = build_sessions(cfg.stream, data, cfg.mode);
    const BackboneSpec backbone = resolved_backbone(cfg, data, seed);
    const TrainConfig train = resolved_train_config(cfg, seed);

    StreamOptions options;
    options.task1_probe = cfg.probe;
    StreamResult result = run_stream(data, sessions, backbone, train, cfg.mode, options);

    RunRecord record;
    record.config_hash = config_hash(cfg);
    record.seed = seed;
    record.config_json = run_config_to_json_string(cfg);
    record.matrix = result.matrix;
    record.diagnostics = result.diagnostics;
    record.cumulative_phase_accuracy = result.cumulative_phase_accuracy;
    record.class_table = result.class_table;
    record.task1_probe_by_session = result.task1_probe_by_session;
    record.loss_trace = result.traces;

    record.metrics["avg_observed_accuracy"] = avg_observed_accuracy(result.matrix);
    if (result.matrix.rows() >= 2) record.metrics["forgetting"] = forgetting(result.matrix);
    record.metrics["avg_cumulative_incremental_accuracy"] =
        avg_cumulative_incremental_accuracy(result.cumulative_phase_accuracy);
    if (!result.class_table.values.empty()) record.metrics["amca"] = amca(result.class_table);
    if (result.task1_probe_accuracy)
        record.metrics["task1_probe_accuracy"] = *result.task1_probe_accuracy;
    if (result.task1_prototype_accuracy)
        record.metrics["task1_prototype_accuracy"] = *result.task1_prototype_accuracy;
    record.metrics["prior_session_training_reads"] =
        static_cast<double>(result.access_log.prior_session_reads());

    // Final prototype state in the shared versioned format.
    record.final_prototypes_json = result.final_prototypes.to_json_string();

    const auto t1 = std::chrono::steady_clock::now();
    record.wall_clock_seconds = std::chrono::duration<double>(t1 - t0).count();
    return record;
}

std::string AggregateSummary::to_json_string() const {
    json j;
    j["format_version"] = kRecordFormatVersion;
    j["runs"] = runs;
    j["mean"] = mean;
    j["stderr"] = stderr_;
    return j.dump(2);
}

AggregateSummary aggregate(const std::vector<RunRecord>& records) {
    if (records.empty()) throw std::domain_error("aggregate: no records");
    AggregateSummary out;
    out.runs = records.size();
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : records)
        for (const auto& [k, v] : r.metrics) values[k].push_back(v);
    for (const auto& [k, vs] : values) {
        double m = 0.0;
        for (double v : vs) m += v;
        m /= static_cast<double>(vs.size());
        out.mean[k] = m;
        double var = 0.0;
        for (double v : vs) var += (v - m) * (v - m);
        out.stderr_[k] = vs.size() > 1
                             ? std::sqrt(var / static_cast<double>(vs.size() - 1)) /
                                   std::sqrt(static_cast<double>(vs.size()))
                             : 0.0;
    }
    return out;
}

namespace {

std::filesystem::path fresh_record_path(const std::filesystem::path& dir, std::uint64_t seed) {
    std::filesystem::path p = dir / ("record_seed" + std::to_string(seed) + ".json");
    int counter = 2;
    while (std::filesystem::exists(p))
        p = dir / ("record_seed" + std::to_string(seed) + "_" + std::to_string(counter++) +
                   ".json");
    return p;
}

void write_matrix_csv(const std::filesystem::path& path, const AccuracyMatrix& m) {
    std::ostringstream os;
    os << "session,task,accuracy\n";
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j <= i; ++j)
            os << (i + 1) << "," << (j + 1) << "," << m.at(i, j) << "\n";
    atomic_write(path, os.str());
}

}  // namespace

RunOutput run_experiment(const RunConfig& cfg) {
    validate_run_config(cfg);
    const std::filesystem::path out_dir(cfg.out_dir);
    std::filesystem::create_directories(out_dir);

    RunOutput output;
    std::vector<RunRecord> records;
    for (std::uint64_t seed : cfg.seeds) {
        RunRecord record = execute_single(cfg, seed);
        const std::filesystem::path path = fresh_record_path(out_dir, seed);
        write_record(path, record);
        write_matrix_csv(out_dir / ("matrix_seed" + std::to_string(seed) + ".csv"),
                         record.matrix);
        output.record_paths.push_back(path);
        records.push_back(std::move(record));
    }

    output.summary = aggregate(records);
    output.aggregate_path = out_dir / "aggregate.json";
    atomic_write(output.aggregate_path, output.summary.to_json_string());

    std::ostringstream csv;
    csv << "seed";
    for (const auto& [k, _] : output.summary.mean) csv << "," << k;
    csv << "\n";
    for (const auto& r : records) {
        csv << r.seed;
        for (const auto& [k, _] : output.summary.mean) {
            auto it = r.metrics.find(k);
            csv << ",";
            if (it != r.metrics.end()) csv << it->second;
        }
        csv << "\n";
    }
    csv << "mean";
    for (const auto& [_, v] : output.summary.mean) csv << "," << v;
    csv << "\nstderr";
    for (const auto& [_, v] : output.summary.stderr_) csv << "," << v;
    csv << "\n";
    atomic_write(out_dir / "summary.csv", csv.str());
    return output;
}

double record_metric_deviation(const RunRecord& record) {
    double dev = 0.0;
    auto check = [&](const std::string& key, double recomputed) {
        auto it = record.metrics.find(key);
        if (it != record.metrics.end())
            dev = std::max(dev, std::abs(it->second - recomputed));
    };
    check("avg_observed_accuracy", avg_observed_accuracy(record.matrix));
    if (record.matrix.rows() >= 2) check("forgetting", forgetting(record.matrix));
    if (!record.cumulative_phase_accuracy.empty())
        check("avg_cumulative_incremental_accuracy",
              avg_cumulative_incremental_accuracy(record.cumulative_phase_accuracy));
    if (!record.class_table.values.empty()) check("amca", amca(record.class_table));
    return dev;
}

void save_teacher_snapshot(const std::filesystem::path& dir, const TeacherSnapshot& snap) {
    std::filesystem::create_directories(dir);
    atomic_write(dir / "prototypes.json", snap.prototypes().to_json_string());
    json meta{{"format_version", 1}, {"session", snap.session()}};
    atomic_write(dir / "snapshot.json", meta.dump(2));
    save_checkpoint(dir / "encoder.ckpt", snap.encoder());
}

TeacherSnapshot load_teacher_snapshot(const std::filesystem::path& dir) {
    std::ifstream pin(dir / "prototypes.json");
    if (!pin) throw std::runtime_error("cannot read " + (dir / "prototypes.json").string());
    std::stringstream pbuf;
    pbuf << pin.rdbuf();
    PrototypeSet protos = PrototypeSet::from_json_string(pbuf.str());

    std::ifstream min(dir / "snapshot.json");
    if (!min) throw std::runtime_error("cannot read " + (dir / "snapshot.json").string());
    std::stringstream mbuf;
    mbuf << min.rdbuf();
    const json meta = json::parse(mbuf.str());

    Network encoder = load_checkpoint(dir / "encoder.ckpt");
    return TeacherSnapshot(std::move(encoder), std::move(protos),
                           meta.at("session").get<int>());
}

}  // namespace prd
