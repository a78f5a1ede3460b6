#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace prd {

struct PlotOutput {
    std::vector<std::filesystem::path> written;
    std::vector<std::string> warnings;  // malformed records skipped
};

// Renders deterministic SVG charts from run records:
//   observed_accuracy.svg - average observed accuracy after each session
//   decomposition.svg     - current-task vs mean old-task accuracy
//   task1_probe.svg       - task-1 linear-probe curve (records with probes)
// Malformed records are skipped with a warning; throws only if none load.
PlotOutput plot_records(const std::vector<std::filesystem::path>& record_paths,
                        const std::filesystem::path& out_dir);

}  // namespace prd
