#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prd/encoder.hpp"
#include "prd/evalkit.hpp"
#include "prd/losses.hpp"
#include "prd/protomem.hpp"
#include "prd/stream.hpp"

namespace prd {

enum class EvalMode { TaskIncremental, ClassIncremental, DomainIncremental };

std::string eval_mode_name(EvalMode m);
EvalMode eval_mode_from_name(const std::string& name);

struct OptimizerSpec {
    double momentum = 0.9;
    double weight_decay = 0.0;
};

struct TrainConfig {
    int epochs = 100;
    std::size_t batch_sources = 128;  // source samples per step; each yields two views
    double learning_rate = 0.01;
    OptimizerSpec optimizer;
    LossConfig loss;
    std::size_t replay_capacity = 0;  // M; 0 keeps the run replay-free
    bool refit_prototypes = false;    // fine-tuning baseline: class-mean prototypes per session
    bool allow_repeated_classes = false;  // domain-incremental streams
    AugmentationSpec augmentation;
    std::uint64_t seed = 0;
    // Testing hook: evaluate the distillation term even when beta == 0 to
    // show the evaluation itself perturbs nothing.
    bool force_distill_eval = false;

    void validate() const;
};

struct StepTrace {
    int session = 0;
    int epoch = 0;
    int step = 0;
    LossBreakdown loss;
    double grad_norm = 0.0;
};

// Stability/plasticity decomposition recorded at each session boundary.
struct SessionDiagnostics {
    int session = 0;
    double current_task_accuracy = 0.0;
    std::optional<double> old_task_accuracy;  // absent at session 1
};

// Raised when a step produces a non-finite loss. Continual runs abort loudly
// rather than clipping.
struct TrainingAbort : std::runtime_error {
    TrainingAbort(int session, int epoch, int step, const LossBreakdown& bd, double grad_norm);
    int session, epoch, step;
    LossBreakdown breakdown;
    double grad_norm;
};

// Mutable state of one continual run.
struct RunState {
    Network net;
    PrototypeSet protos;
    std::optional<TeacherSnapshot> teacher;
    std::optional<ReplayBuffer> replay;
    int completed_sessions = 0;

    // SGD momentum buffers (reset at each session boundary)
    ParameterState net_velocity;
    std::map<int, Vector> proto_velocity;
    Rng replay_rng{0};

    explicit RunState(const BackboneSpec& spec, const TrainConfig& cfg);
};

// Trains one session: creates prototypes for the session's new classes,
// runs epochs of two-view batches (half-batch replay when the buffer is
// active), applies joint SGD updates, then snapshots the teacher, advances
// the session index and, when M > 0, stores the session's data.
void run_session(RunState& state, const Dataset& data, const SessionSpec& session,
                 const TrainConfig& cfg, std::vector<StepTrace>* traces = nullptr,
                 AccessLog* access_log = nullptr);

struct StreamOptions {
    bool task1_probe = false;  // linear-probe task 1 features after every session
    std::function<void(const RunState&, const SessionDiagnostics&)> on_session_end;
};

struct StreamResult {
    AccuracyMatrix matrix;
    std::vector<SessionDiagnostics> diagnostics;
    std::vector<double> cumulative_phase_accuracy;  // over all classes seen so far
    ClassAccuracyTable class_table;                 // filled for domain-incremental runs
    std::vector<StepTrace> traces;
    AccessLog access_log;
    std::vector<double> task1_probe_by_session;
    std::optional<double> task1_probe_accuracy;      // final entry of the curve
    std::optional<double> task1_prototype_accuracy;  // same features, nearest-prototype rule
    PrototypeSet final_prototypes;
};

// Runs the whole stream, evaluating A_ij for every j <= i after each session.
StreamResult run_stream(const Dataset& data, const std::vector<SessionSpec>& sessions,
                        const BackboneSpec& backbone, const TrainConfig& cfg, EvalMode mode,
                        const StreamOptions& options = {});

// Accuracy of nearest-prototype prediction on the given test rows.
double evaluate_accuracy(const Network& net, const PrototypeSet& protos, const Dataset& data,
                         const std::vector<std::size_t>& test_rows,
                         const std::optional<std::set<int>>& allowed);

}  // namespace prd
