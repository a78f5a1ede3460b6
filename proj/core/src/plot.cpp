#include "prd/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "prd/runrecord.hpp"

namespace prd {

namespace {

constexpr double kWidth = 640.0, kHeight = 400.0;
constexpr double kLeft = 56.0, kRight = 16.0, kTop = 20.0, kBottom = 44.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

struct Series {
    std::string label;
    std::vector<double> y;  // x = 1..y.size()
    const char* color;
};

// Fixed-axis line chart: x = session index, y in [0, 1].
std::string render_chart(const std::string& title, const std::vector<Series>& series) {
    std::size_t max_x = 1;
    for (const auto& s : series) max_x = std::max(max_x, s.y.size());

    const double plot_w = kWidth - kLeft - kRight;
    const double plot_h = kHeight - kTop - kBottom;
    auto px = [&](double session) {
        return max_x == 1 ? kLeft + plot_w / 2
                          : kLeft + plot_w * (session - 1.0) / (static_cast<double>(max_x) - 1.0);
    };
    auto py = [&](double v) { return kTop + plot_h * (1.0 - v); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kLeft << "\" y=\"14\" font-family=\"sans-serif\" font-size=\"13\">"
       << title << "</text>\n";

    for (int g = 0; g <= 4; ++g) {
        const double v = g / 4.0;
        os << "<line x1=\"" << fmt(kLeft) << "\" y1=\"" << fmt(py(v)) << "\" x2=\""
           << fmt(kWidth - kRight) << "\" y2=\"" << fmt(py(v))
           << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        os << "<text x=\"" << fmt(kLeft - 8) << "\" y=\"" << fmt(py(v) + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(v)
           << "</text>\n";
    }
    for (std::size_t x = 1; x <= max_x; ++x) {
        os << "<text x=\"" << fmt(px(static_cast<double>(x))) << "\" y=\""
           << fmt(kHeight - kBottom + 18)
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << x
           << "</text>\n";
    }
    os << "<text x=\"" << fmt(kLeft + plot_w / 2) << "\" y=\"" << fmt(kHeight - 8)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">session</text>\n";

    for (const auto& s : series) {
        if (s.y.empty()) continue;
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.y.size(); ++i) {
            if (i) os << " ";
            os << fmt(px(static_cast<double>(i + 1))) << "," << fmt(py(s.y[i]));
        }
        os << "\"/>\n";
        for (std::size_t i = 0; i < s.y.size(); ++i)
            os << "<circle cx=\"" << fmt(px(static_cast<double>(i + 1))) << "\" cy=\""
               << fmt(py(s.y[i])) << "\" r=\"2.5\" fill=\"" << s.color << "\"/>\n";
    }

    double ly = kTop + 8;
    for (const auto& s : series) {
        os << "<line x1=\"" << fmt(kLeft + 10) << "\" y1=\"" << fmt(ly) << "\" x2=\""
           << fmt(kLeft + 34) << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << s.color
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << fmt(kLeft + 40) << "\" y=\"" << fmt(ly + 4)
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
        ly += 16;
    }
    os << "</svg>\n";
    return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

}  // namespace

PlotOutput plot_records(const std::vector<std::filesystem::path>& record_paths,
                        const std::filesystem::path& out_dir) {
    if (record_paths.empty()) throw std::domain_error("plot_records: no records given");

    struct Loaded {
        std::string name;
        RunRecord record;
    };
    std::vector<Loaded> loaded;
    PlotOutput out;
    for (const auto& path : record_paths) {
        try {
            loaded.push_back({path.stem().string(), read_record(path)});
        } catch (const std::exception& e) {
            out.warnings.push_back(path.string() + ": " + e.what());
        }
    }
    if (loaded.empty()) throw std::runtime_error("plot_records: every record failed to load");

    std::filesystem::create_directories(out_dir);

    std::vector<Series> observed;
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        Series s;
        s.label = loaded[i].name;
        s.color = kPalette[i % std::size(kPalette)];
        const auto& m = loaded[i].record.matrix;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            double sum = 0.0;
            for (double v : m.row(r)) sum += v;
            s.y.push_back(sum / static_cast<double>(m.row(r).size()));
        }
        observed.push_back(std::move(s));
    }
    const auto observed_path = out_dir / "observed_accuracy.svg";
    write_file(observed_path, render_chart("average observed accuracy", observed));
    out.written.push_back(observed_path);

    std::vector<Series> decomp;
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        Series cur, old;
        cur.label = loaded[i].name + " (current)";
        cur.color = kPalette[(2 * i) % std::size(kPalette)];
        old.label = loaded[i].name + " (old)";
        old.color = kPalette[(2 * i + 1) % std::size(kPalette)];
        for (const auto& d : loaded[i].record.diagnostics) {
            cur.y.push_back(d.current_task_accuracy);
            old.y.push_back(d.old_task_accuracy.value_or(0.0));
        }
        decomp.push_back(std::move(cur));
        decomp.push_back(std::move(old));
    }
    const auto decomp_path = out_dir / "decomposition.svg";
    write_file(decomp_path, render_chart("current-task vs old-task accuracy", decomp));
    out.written.push_back(decomp_path);

    std::vector<Series> probe;
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        if (loaded[i].record.task1_probe_by_session.empty()) continue;
        Series s;
        s.label = loaded[i].name;
        s.color = kPalette[i % std::size(kPalette)];
        s.y = loaded[i].record.task1_probe_by_session;
        probe.push_back(std::move(s));
    }
    if (!probe.empty()) {
        const auto probe_path = out_dir / "task1_probe.svg";
        write_file(probe_path, render_chart("task-1 linear-probe accuracy", probe));
        out.written.push_back(probe_path);
    }
    return out;
}

}  // namespace prd
