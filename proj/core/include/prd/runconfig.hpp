#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prd/encoder.hpp"
#include "prd/stream.hpp"
#include "prd/trainer.hpp"

namespace prd {

// Data source + continual partition, as declared in a run config file.
struct StreamConfig {
    std::string kind = "synthetic_gaussian";  // synthetic_gaussian | tiny_images | directory
    SyntheticSpec synthetic;
    TinyImageSpec tiny;
    std::string directory;
    int num_tasks = 5;
    int classes_per_task = 2;
    std::uint64_t partition_seed = 1;
    int phases = 0;            // > 0 selects the domain-incremental generator
    double phase_drift = 0.25;
    AugmentationSpec augmentation;
};

// Full experiment description. `method` presets:
//   prd      - the full objective, replay per train.replay_capacity
//   finetune - alpha = beta = 0, class-mean prototype refit, replay-free
//   er       - beta = 0 with a replay buffer (requires replay_capacity > 0)
struct RunConfig {
    StreamConfig stream;
    BackboneSpec backbone;  // input_shape and seed are filled per run
    TrainConfig train;
    std::string method = "prd";
    EvalMode mode = EvalMode::ClassIncremental;
    bool probe = true;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string out_dir = "runs/out";
};

std::string run_config_to_json_string(const RunConfig& cfg);
RunConfig run_config_from_json_string(const std::string& text);

// Loads a config file and applies overrides with precedence
// flag (`set_overrides`, "path.to.field=value") > environment (PRD_ prefix,
// "__" as the path separator, e.g. PRD_TRAIN__EPOCHS=5) > file > default.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& set_overrides = {},
                          bool use_env = true);

// FNV-1a hash of the canonical config serialization.
std::string config_hash(const RunConfig& cfg);

// Builds the dataset and session list a config describes.
Dataset build_dataset(const StreamConfig& stream);
std::vector<SessionSpec> build_sessions(const StreamConfig& stream, const Dataset& data,
                                        EvalMode mode);

// TrainConfig with the method preset and per-run seed applied.
TrainConfig resolved_train_config(const RunConfig& cfg, std::uint64_t seed);
// BackboneSpec bound to the dataset's input shape and the per-run seed.
BackboneSpec resolved_backbone(const RunConfig& cfg, const Dataset& data, std::uint64_t seed);

void validate_run_config(const RunConfig& cfg);

}  // namespace prd
