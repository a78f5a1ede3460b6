#include "prd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "prd/errors.hpp"

namespace prd {

std::string eval_mode_name(EvalMode m) {
    switch (m) {
        case EvalMode::TaskIncremental: return "task_incremental";
        case EvalMode::ClassIncremental: return "class_incremental";
        case EvalMode::DomainIncremental: return "domain_incremental";
    }
    return "?";
}

EvalMode eval_mode_from_name(const std::string& name) {
    if (name == "task_incremental") return EvalMode::TaskIncremental;
    if (name == "class_incremental") return EvalMode::ClassIncremental;
    if (name == "domain_incremental") return EvalMode::DomainIncremental;
    throw ConfigError("unknown evaluation mode: " + name);
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_sources < 1) throw ConfigError("TrainConfig: batch_sources must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be > 0");
    if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0)
        throw ConfigError("TrainConfig: momentum must be in [0,1)");
    if (optimizer.weight_decay < 0.0)
        throw ConfigError("TrainConfig: weight_decay must be >= 0");
    loss.validate();
}

TrainingAbort::TrainingAbort(int session_, int epoch_, int step_, const LossBreakdown& bd,
                             double grad_norm_)
    : std::runtime_error([&] {
          std::ostringstream os;
          os << "non-finite loss at session " << session_ << " epoch " << epoch_ << " step "
             << step_ << " (sc=" << bd.sc << " proto=" << bd.proto << " distill=" << bd.distill
             << " total=" << bd.total << " grad_norm=" << grad_norm_ << ")";
          return os.str();
      }()),
      session(session_),
      epoch(epoch_),
      step(step_),
      breakdown(bd),
      grad_norm(grad_norm_) {}

RunState::RunState(const BackboneSpec& spec, const TrainConfig& cfg)
    : net(spec),
      net_velocity(net.zero_grads_like()),
      replay_rng(make_rng(cfg.seed, rng_tag::kReplayDraw)) {
    if (cfg.replay_capacity > 0) replay.emplace(cfg.replay_capacity);
}

namespace {

double grads_norm(const ParameterState& net_grads, const PrototypeGrads& proto_grads) {
    double s = 0.0;
    for (const auto& t : net_grads.tensors)
        for (double v : t.v) s += v * v;
    for (const auto& [_, g] : proto_grads)
        for (double v : g) s += v * v;
    return std::sqrt(s);
}

void sgd_update(RunState& state, const TrainConfig& cfg, const ParameterState& net_grads,
                const PrototypeGrads& proto_grads) {
    const double mu = cfg.optimizer.momentum;
    const double wd = cfg.optimizer.weight_decay;
    const double lr = cfg.learning_rate;

    for (std::size_t t = 0; t < net_grads.tensors.size(); ++t) {
        auto& theta = state.net.params().tensors[t].v;
        auto& vel = state.net_velocity.tensors[t].v;
        const auto& g = net_grads.tensors[t].v;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            vel[i] = mu * vel[i] + g[i] + wd * theta[i];
            theta[i] -= lr * vel[i];
        }
    }
    for (int c : state.protos.all_classes()) {
        auto& vel = state.proto_velocity[c];
        if (vel.empty()) vel.assign(state.protos.dim(), 0.0);
        auto& p = state.protos.mutable_vector(c);
        auto it = proto_grads.find(c);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = (it == proto_grads.end()) ? 0.0 : it->second[i];
            vel[i] = mu * vel[i] + g + wd * p[i];
            p[i] -= lr * vel[i];
        }
    }
}

// Class-mean feature prototypes for the fine-tuning baseline.
void refit_current_prototypes(RunState& state, const Dataset& data, const SessionSpec& session) {
    std::map<int, Vector> sums;
    std::map<int, std::size_t> counts;
    for (int c : session.classes) {
        sums[c] = Vector(state.net.spec().feature_dim, 0.0);
        counts[c] = 0;
    }
    Matrix inputs(1, data.input_size());
    for (std::size_t row : session.train_indices) {
        std::copy(data.train_x.row(row).begin(), data.train_x.row(row).end(),
                  inputs.row(0).begin());
        const Matrix f = state.net.forward_features(inputs);
        const int y = data.train_y[row];
        auto& s = sums.at(y);
        for (std::size_t j = 0; j < s.size(); ++j) s[j] += f(0, j);
        ++counts.at(y);
    }
    for (int c : session.classes) {
        if (counts.at(c) == 0) continue;
        auto& p = state.protos.mutable_vector(c);
        const auto& s = sums.at(c);
        for (std::size_t j = 0; j < p.size(); ++j)
            p[j] = s[j] / static_cast<double>(counts.at(c));
    }
}

}  // namespace

void run_session(RunState& state, const Dataset& data, const SessionSpec& session,
                 const TrainConfig& cfg, std::vector<StepTrace>* traces, AccessLog* access_log) {
    cfg.validate();
    if (session.index != state.completed_sessions + 1)
        throw StateError("run_session: expected session " +
                         std::to_string(state.completed_sessions + 1) + ", got " +
                         std::to_string(session.index));

    // New-class prototypes exist before the first optimizer step.
    std::vector<int> new_classes;
    for (int c : session.classes) {
        if (state.protos.has_class(c)) {
            if (!cfg.allow_repeated_classes)
                throw StateError("run_session: class " + std::to_string(c) +
                                 " was already trained");
        } else {
            new_classes.push_back(c);
        }
    }
    if (!new_classes.empty())
        state.protos.add_classes(new_classes, state.net.spec().feature_dim,
                                 derive_seed(cfg.seed, 2000 + session.index));

    // Momentum restarts at the session boundary.
    state.net_velocity = state.net.zero_grads_like();
    state.proto_velocity.clear();

    const bool replay_active =
        state.replay.has_value() && !state.replay->empty() && cfg.batch_sources >= 2;
    const std::size_t replay_n = replay_active ? cfg.batch_sources / 2 : 0;
    const std::size_t fresh_n = cfg.batch_sources - replay_n;

    BatchSampler sampler(data, session, cfg.augmentation, fresh_n,
                         derive_seed(cfg.seed, 1000 + session.index), access_log);
    Rng replay_aug_rng = make_rng(cfg.seed, 4000 + session.index);

    const std::size_t dim = data.input_size();
    const std::size_t steps_per_epoch = sampler.steps_per_epoch();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            TwoViewBatch batch = sampler.next();
            if (replay_n > 0) {
                const auto drawn = state.replay->sample(replay_n, state.replay_rng);
                const std::size_t base_rows = batch.inputs.rows();
                Matrix inputs(base_rows + 2 * drawn.size(), dim);
                std::copy(batch.inputs.data().begin(), batch.inputs.data().end(),
                          inputs.data().begin());
                for (std::size_t r = 0; r < drawn.size(); ++r) {
                    const auto& s = drawn[r];
                    if (access_log)
                        access_log->record(session.index, s.source_session, s.source_index);
                    augment_view(s.input, inputs.row(base_rows + 2 * r), cfg.augmentation,
                                 data.input_shape, replay_aug_rng);
                    augment_view(s.input, inputs.row(base_rows + 2 * r + 1), cfg.augmentation,
                                 data.input_shape, replay_aug_rng);
                    for (int v = 0; v < 2; ++v) {
                        batch.labels.push_back(s.label);
                        batch.view_of.push_back(static_cast<int>(fresh_n + r));
                        batch.source_session.push_back(s.source_session);
                        batch.source_index.push_back(s.source_index);
                    }
                }
                batch.inputs = std::move(inputs);
            }

            ForwardCache cache;
            const Matrix features = state.net.forward_features(batch.inputs, cache);
            const Matrix projections = state.net.forward_projection(features, cache);

            EmbeddingBatch emb;
            emb.projections = projections;
            emb.features = features;
            emb.labels = batch.labels;
            emb.view_of = batch.view_of;

            const bool distill_possible =
                state.teacher.has_value() && !state.protos.old_classes().empty();
            if (distill_possible && (cfg.loss.beta != 0.0 || cfg.force_distill_eval))
                emb.teacher_features = state.teacher->encoder().forward_features(batch.inputs);

            TotalLossResult result =
                total_loss(emb, state.protos, state.teacher ? &*state.teacher : nullptr, cfg.loss);
            if (cfg.force_distill_eval && cfg.loss.beta == 0.0 && distill_possible) {
                // Evaluation only; the result is discarded so the trajectory
                // matches a run that never computes the term.
                const DistillResult probe = relation_distill_loss(
                    emb, state.protos, *state.teacher, cfg.loss.tau_d);
                result.breakdown.distill = probe.value;
            }

            const ParameterState net_grads =
                state.net.backward(cache, result.d_projections, result.d_features);
            const double gnorm = grads_norm(net_grads, result.d_prototypes);

            if (!std::isfinite(result.breakdown.total) || !std::isfinite(gnorm))
                throw TrainingAbort(session.index, epoch, static_cast<int>(step),
                                    result.breakdown, gnorm);

            sgd_update(state, cfg, net_grads, result.d_prototypes);

            if (traces)
                traces->push_back({session.index, epoch, static_cast<int>(step),
                                   result.breakdown, gnorm});
        }
    }

    if (cfg.refit_prototypes) refit_current_prototypes(state, data, session);

    // Teacher snapshot of the end-of-session model, then the boundary advance.
    state.teacher.emplace(snapshot(state.protos, state.net));
    state.protos.advance_session();
    state.completed_sessions = session.index;

    if (state.replay.has_value()) {
        for (std::size_t row : session.train_indices) {
            ReplayBuffer::Stored s;
            s.input.assign(data.train_x.row(row).begin(), data.train_x.row(row).end());
            s.label = data.train_y[row];
            s.source_session = session.index;
            s.source_index = row;
            state.replay->insert(std::move(s));
        }
    }
}

double evaluate_accuracy(const Network& net, const PrototypeSet& protos, const Dataset& data,
                         const std::vector<std::size_t>& test_rows,
                         const std::optional<std::set<int>>& allowed) {
    if (test_rows.empty()) throw std::domain_error("evaluate_accuracy: no test rows");
    Matrix inputs(test_rows.size(), data.input_size());
    for (std::size_t i = 0; i < test_rows.size(); ++i)
        std::copy(data.test_x.row(test_rows[i]).begin(), data.test_x.row(test_rows[i]).end(),
                  inputs.row(i).begin());
    const Matrix feats = net.forward_features(inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_rows.size(); ++i)
        if (protos.predict(feats.row(i), allowed) == data.test_y[test_rows[i]]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(test_rows.size());
}

namespace {

Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(src.row(rows[i]).begin(), src.row(rows[i]).end(), out.row(i).begin());
    return out;
}

}  // namespace

StreamResult run_stream(const Dataset& data, const std::vector<SessionSpec>& sessions,
                        const BackboneSpec& backbone, const TrainConfig& cfg, EvalMode mode,
                        const StreamOptions& options) {
    if (sessions.empty()) throw ConfigError("run_stream: empty session list");
    TrainConfig session_cfg = cfg;
    session_cfg.allow_repeated_classes = (mode == EvalMode::DomainIncremental);
    session_cfg.validate();

    StreamResult result;
    RunState state(backbone, session_cfg);

    Matrix probe_train_in, probe_test_in;
    std::vector<int> probe_train_labels, probe_test_labels;
    if (options.task1_probe) {
        const auto& first = sessions.front();
        probe_train_in = gather_rows(data.train_x, first.train_indices);
        probe_test_in = gather_rows(data.test_x, first.test_indices);
        for (std::size_t r : first.train_indices) probe_train_labels.push_back(data.train_y[r]);
        for (std::size_t r : first.test_indices) probe_test_labels.push_back(data.test_y[r]);
    }

    for (std::size_t i = 0; i < sessions.size(); ++i) {
        run_session(state, data, sessions[i], session_cfg, &result.traces, &result.access_log);

        // Row i of the observed-accuracy matrix: tasks 1..i+1.
        std::vector<double> row;
        row.reserve(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
            std::optional<std::set<int>> allowed;
            if (mode == EvalMode::TaskIncremental)
                allowed.emplace(sessions[j].classes.begin(), sessions[j].classes.end());
            row.push_back(
                evaluate_accuracy(state.net, state.protos, data, sessions[j].test_indices, allowed));
        }

        SessionDiagnostics diag;
        diag.session = sessions[i].index;
        diag.current_task_accuracy = row[i];
        if (i > 0) {
            double old_sum = 0.0;
            for (std::size_t j = 0; j < i; ++j) old_sum += row[j];
            diag.old_task_accuracy = old_sum / static_cast<double>(i);
        }
        result.matrix.append_row(std::move(row));
        result.diagnostics.push_back(diag);

        // Accuracy over all test data seen so far, global prediction.
        std::vector<std::size_t> pooled;
        for (std::size_t j = 0; j <= i; ++j)
            pooled.insert(pooled.end(), sessions[j].test_indices.begin(),
                          sessions[j].test_indices.end());
        result.cumulative_phase_accuracy.push_back(
            evaluate_accuracy(state.net, state.protos, data, pooled, std::nullopt));

        if (options.task1_probe) {
            const Matrix train_feats = state.net.forward_features(probe_train_in);
            const Matrix test_feats = state.net.forward_features(probe_test_in);
            result.task1_probe_by_session.push_back(
                linear_probe(train_feats, probe_train_labels, test_feats, probe_test_labels));
            if (i + 1 == sessions.size()) {
                result.task1_probe_accuracy = result.task1_probe_by_session.back();
                std::optional<std::set<int>> allowed;
                allowed.emplace(sessions.front().classes.begin(),
                                sessions.front().classes.end());
                std::size_t correct = 0;
                for (std::size_t r = 0; r < probe_test_labels.size(); ++r)
                    if (state.protos.predict(test_feats.row(r), allowed) == probe_test_labels[r])
                        ++correct;
                result.task1_prototype_accuracy = static_cast<double>(correct) /
                                                  static_cast<double>(probe_test_labels.size());
            }
        }

        if (options.on_session_end) options.on_session_end(state, diag);
    }

    if (mode == EvalMode::DomainIncremental) {
        // Final-model per-(phase, class) accuracies.
        result.class_table.classes = data.class_ids();
        for (const auto& session : sessions) {
            Matrix inputs = gather_rows(data.test_x, session.test_indices);
            const Matrix feats = state.net.forward_features(inputs);
            std::map<int, std::pair<std::size_t, std::size_t>> tally;  // class -> {correct, total}
            for (std::size_t i = 0; i < session.test_indices.size(); ++i) {
                const int y = data.test_y[session.test_indices[i]];
                auto& [correct, total_count] = tally[y];
                if (state.protos.predict(feats.row(i), std::nullopt) == y) ++correct;
                ++total_count;
            }
            std::vector<double> row;
            for (int c : result.class_table.classes) {
                auto it = tally.find(c);
                row.push_back(it == tally.end() || it->second.second == 0
                                  ? std::numeric_limits<double>::quiet_NaN()
                                  : static_cast<double>(it->second.first) /
                                        static_cast<double>(it->second.second));
            }
            result.class_table.values.push_back(std::move(row));
        }
    }

    result.final_prototypes = state.protos;
    return result;
}

}  // namespace prd
