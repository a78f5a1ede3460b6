#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "prd/errors.hpp"
#include "prd/trainer.hpp"

using namespace prd;

namespace {

Dataset desk_data() {
    SyntheticSpec spec;
    spec.classes = 6;
    spec.dim = 8;
    spec.train_per_class = 16;
    spec.test_per_class = 8;
    spec.cluster_spread = 0.3;
    spec.seed = 5;
    return Dataset::synthetic_gaussian(spec);
}

BackboneSpec desk_backbone() {
    BackboneSpec spec;
    spec.arch = Arch::Mlp;
    spec.input_shape = {8};
    spec.hidden_dims = {16};
    spec.feature_dim = 12;
    spec.projection_dim = 6;
    return spec;
}

TrainConfig desk_config() {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_sources = 8;
    cfg.learning_rate = 0.05;
    cfg.seed = 7;
    cfg.augmentation.kind = AugmentationSpec::Kind::VectorJitter;
    cfg.augmentation.jitter_sigma = 0.05;
    return cfg;
}

}  // namespace

TEST_CASE("session 1 contributes no distillation to any step") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    RunState state(desk_backbone(), desk_config());

    std::vector<StepTrace> traces;
    run_session(state, data, sessions[0], desk_config(), &traces);
    CHECK(!traces.empty());
    for (const auto& t : traces) CHECK(t.loss.distill == 0.0);
    CHECK(state.teacher.has_value());
    CHECK(state.protos.current_session() == 2);
}

TEST_CASE("teacher snapshot is staleness-correct across a session") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    TrainConfig cfg = desk_config();
    RunState state(desk_backbone(), cfg);

    run_session(state, data, sessions[0], cfg);
    const std::string teacher_before = state.teacher->prototypes().to_json_string();
    const ParameterState teacher_params = state.teacher->encoder().params();

    run_session(state, data, sessions[1], cfg);
    // the snapshot object was replaced only at the boundary; during session 2
    // the session-1 snapshot was read, and afterwards the new one matches the
    // live end-of-session-2 model
    CHECK(state.teacher->session() == 2);
    CHECK(state.teacher->encoder().params() == state.net.params());
    CHECK(!(state.teacher->encoder().params() == teacher_params));
    (void)teacher_before;
}

TEST_CASE("beta = 0 trajectory equals a run with the distillation term evaluated and discarded") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);

    TrainConfig skip_cfg = desk_config();
    skip_cfg.loss.beta = 0.0;

    TrainConfig eval_cfg = skip_cfg;
    eval_cfg.force_distill_eval = true;

    RunState a(desk_backbone(), skip_cfg);
    RunState b(desk_backbone(), eval_cfg);
    for (const auto& s : sessions) {
        run_session(a, data, s, skip_cfg);
        run_session(b, data, s, eval_cfg);
    }
    CHECK(a.net.params() == b.net.params());
    CHECK(a.protos == b.protos);
}

TEST_CASE("two identical runs agree on every reported metric") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    TrainConfig cfg = desk_config();
    StreamOptions options;
    options.task1_probe = true;

    const StreamResult r1 = run_stream(data, sessions, desk_backbone(), cfg,
                                       EvalMode::ClassIncremental, options);
    const StreamResult r2 = run_stream(data, sessions, desk_backbone(), cfg,
                                       EvalMode::ClassIncremental, options);

    REQUIRE(r1.matrix.rows() == r2.matrix.rows());
    for (std::size_t i = 0; i < r1.matrix.rows(); ++i)
        for (std::size_t j = 0; j <= i; ++j)
            CHECK(std::abs(r1.matrix.at(i, j) - r2.matrix.at(i, j)) <= 1e-6);
    CHECK(std::abs(avg_observed_accuracy(r1.matrix) - avg_observed_accuracy(r2.matrix)) <= 1e-6);
    REQUIRE(r1.task1_probe_by_session.size() == r2.task1_probe_by_session.size());
    for (std::size_t i = 0; i < r1.task1_probe_by_session.size(); ++i)
        CHECK(std::abs(r1.task1_probe_by_session[i] - r2.task1_probe_by_session[i]) <= 1e-6);
}

TEST_CASE("a step with every loss coefficient at zero leaves parameters unchanged") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    TrainConfig cfg = desk_config();
    cfg.loss.sc_weight = 0.0;
    cfg.loss.alpha = 0.0;
    cfg.loss.beta = 0.0;
    cfg.epochs = 2;

    RunState state(desk_backbone(), cfg);
    const ParameterState before = state.net.params();
    run_session(state, data, sessions[0], cfg);
    CHECK(state.net.params() == before);
}

TEST_CASE("prototype stop-gradient: alpha-only training never moves the encoder") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    TrainConfig cfg = desk_config();
    cfg.loss.sc_weight = 0.0;  // isolate the tightness term
    cfg.loss.alpha = 2.0;
    cfg.loss.beta = 0.0;
    cfg.epochs = 2;

    RunState state(desk_backbone(), cfg);
    const ParameterState before = state.net.params();
    const PrototypeSet protos_before = state.protos;
    run_session(state, data, sessions[0], cfg);
    CHECK(state.net.params() == before);       // exactly zero encoder gradient
    CHECK(!(state.protos == protos_before));   // prototypes did train
}

TEST_CASE("repeated classes are rejected unless domain-incremental") {
    const Dataset data = desk_data();
    auto sessions = build_stream(data, 3, 2, 1);
    TrainConfig cfg = desk_config();
    cfg.epochs = 1;

    RunState state(desk_backbone(), cfg);
    run_session(state, data, sessions[0], cfg);

    SessionSpec repeat = sessions[1];
    repeat.classes = sessions[0].classes;
    repeat.train_indices = sessions[0].train_indices;
    repeat.test_indices = sessions[0].test_indices;
    CHECK_THROWS_AS(run_session(state, data, repeat, cfg), StateError);

    TrainConfig domain_cfg = cfg;
    domain_cfg.allow_repeated_classes = true;
    CHECK_NOTHROW(run_session(state, data, repeat, domain_cfg));
}

TEST_CASE("session ordering is enforced") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    TrainConfig cfg = desk_config();
    RunState state(desk_backbone(), cfg);
    CHECK_THROWS_AS(run_session(state, data, sessions[1], cfg), StateError);
}

TEST_CASE("diagnostics: decomposition recombines to the observed average") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    const StreamResult result = run_stream(data, sessions, desk_backbone(), desk_config(),
                                           EvalMode::TaskIncremental);

    REQUIRE(result.diagnostics.size() == 3);
    CHECK(!result.diagnostics[0].old_task_accuracy.has_value());
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& d = result.diagnostics[i];
        double avg = d.current_task_accuracy;
        if (d.old_task_accuracy) avg = (static_cast<double>(i) * *d.old_task_accuracy +
                                        d.current_task_accuracy) /
                                       static_cast<double>(i + 1);
        double row_mean = 0.0;
        for (double v : result.matrix.row(i)) row_mean += v;
        row_mean /= static_cast<double>(i + 1);
        CHECK(avg == doctest::Approx(row_mean).epsilon(1e-9));
    }
}

TEST_CASE("replay-free runs never read prior-session training data") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    const StreamResult result = run_stream(data, sessions, desk_backbone(), desk_config(),
                                           EvalMode::ClassIncremental);
    CHECK(result.access_log.prior_session_reads() == 0);
    CHECK(!result.access_log.entries.empty());
}

TEST_CASE("replay runs mix prior-session data and fill per-class rings") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    TrainConfig cfg = desk_config();
    cfg.replay_capacity = 5;

    AccessLog log;
    RunState state(desk_backbone(), cfg);
    run_session(state, data, sessions[0], cfg, nullptr, &log);
    CHECK(log.prior_session_reads() == 0);  // buffer still empty in session 1
    for (const auto& [c, n] : state.replay->per_class_counts()) CHECK(n == 5);

    run_session(state, data, sessions[1], cfg, nullptr, &log);
    CHECK(log.prior_session_reads() > 0);
    CHECK(state.replay->total() == 20);  // 4 classes x 5
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    TrainConfig cfg = desk_config();
    cfg.learning_rate = 1e12;  // blow the parameters up
    cfg.epochs = 30;

    RunState state(desk_backbone(), cfg);
    try {
        run_session(state, data, sessions[0], cfg);
        for (int i = 1; i < 3; ++i) run_session(state, data, sessions[i], cfg);
        FAIL("expected TrainingAbort");
    } catch (const TrainingAbort& abort) {
        CHECK(abort.session >= 1);
        CHECK(std::string(abort.what()).find("non-finite loss") != std::string::npos);
    }
}

TEST_CASE("fine-tuning baseline refits current prototypes to class means") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 3, 2, 1);
    TrainConfig cfg = desk_config();
    cfg.loss.alpha = 0.0;
    cfg.loss.beta = 0.0;
    cfg.refit_prototypes = true;

    RunState state(desk_backbone(), cfg);
    run_session(state, data, sessions[0], cfg);

    // prototypes equal the class-mean features of the session's train data
    for (int c : sessions[0].classes) {
        Vector mean(state.net.spec().feature_dim, 0.0);
        std::size_t count = 0;
        Matrix one(1, data.input_size());
        for (std::size_t row : sessions[0].train_indices) {
            if (data.train_y[row] != c) continue;
            std::copy(data.train_x.row(row).begin(), data.train_x.row(row).end(),
                      one.row(0).begin());
            const Matrix f = state.net.forward_features(one);
            for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += f(0, j);
            ++count;
        }
        for (double& v : mean) v /= static_cast<double>(count);
        const Vector& p = state.protos.vector_of(c);
        for (std::size_t j = 0; j < mean.size(); ++j)
            CHECK(p[j] == doctest::Approx(mean[j]).epsilon(1e-9));
    }
}

TEST_CASE("K = 1 stream yields a single-row matrix") {
    const Dataset data = desk_data();
    const auto sessions = build_stream(data, 1, 6, 1);
    TrainConfig cfg = desk_config();
    cfg.epochs = 2;
    const StreamResult result =
        run_stream(data, sessions, desk_backbone(), cfg, EvalMode::ClassIncremental);
    CHECK(result.matrix.rows() == 1);
    CHECK(result.diagnostics.size() == 1);
}

TEST_CASE("domain-incremental stream produces a full class table for amca") {
    SyntheticSpec spec;
    spec.classes = 4;
    spec.dim = 6;
    spec.train_per_class = 10;
    spec.test_per_class = 6;
    spec.seed = 9;
    const Dataset data = Dataset::synthetic_gaussian_domain(spec, 3, 0.3);
    const auto sessions = build_domain_stream(data, 3);

    BackboneSpec backbone = desk_backbone();
    backbone.input_shape = {6};
    TrainConfig cfg = desk_config();
    cfg.epochs = 2;

    const StreamResult result =
        run_stream(data, sessions, backbone, cfg, EvalMode::DomainIncremental);
    REQUIRE(result.class_table.num_tasks() == 3);
    REQUIRE(result.class_table.classes.size() == 4);
    CHECK(amca(result.class_table) >= 0.0);
}
