#include "prd/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "prd/errors.hpp"

extern char** environ;

namespace prd {

using nlohmann::json;

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
}

// Typed field reads with path-qualified error messages.
template <typename T>
T get_field(const json& obj, const std::string& scope, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        field_error(scope + key, e.what());
    }
}

void check_known_keys(const json& obj, const std::string& scope,
                      const std::set<std::string>& known) {
    for (const auto& [k, _] : obj.items())
        if (!known.count(k)) field_error(scope + k, "unknown field");
}

std::string aug_kind_name(AugmentationSpec::Kind k) {
    switch (k) {
        case AugmentationSpec::Kind::Identity: return "identity";
        case AugmentationSpec::Kind::VectorJitter: return "vector_jitter";
        case AugmentationSpec::Kind::ImagePipeline: return "image_pipeline";
    }
    return "?";
}

AugmentationSpec::Kind aug_kind_from_name(const std::string& s) {
    if (s == "identity") return AugmentationSpec::Kind::Identity;
    if (s == "vector_jitter") return AugmentationSpec::Kind::VectorJitter;
    if (s == "image_pipeline") return AugmentationSpec::Kind::ImagePipeline;
    throw ConfigError("stream.augmentation.kind: unknown kind '" + s + "'");
}

json augmentation_to_json(const AugmentationSpec& a) {
    return json{{"kind", aug_kind_name(a.kind)},
                {"jitter_sigma", a.jitter_sigma},
                {"crop_padding", a.crop_padding},
                {"flip_prob", a.flip_prob},
                {"color_jitter", a.color_jitter},
                {"grayscale_prob", a.grayscale_prob}};
}

AugmentationSpec augmentation_from_json(const json& j) {
    AugmentationSpec a;
    const std::string scope = "stream.augmentation.";
    check_known_keys(j, scope,
                     {"kind", "jitter_sigma", "crop_padding", "flip_prob", "color_jitter",
                      "grayscale_prob"});
    a.kind = aug_kind_from_name(get_field<std::string>(j, scope, "kind", "vector_jitter"));
    a.jitter_sigma = get_field<double>(j, scope, "jitter_sigma", a.jitter_sigma);
    a.crop_padding = get_field<int>(j, scope, "crop_padding", a.crop_padding);
    a.flip_prob = get_field<double>(j, scope, "flip_prob", a.flip_prob);
    a.color_jitter = get_field<double>(j, scope, "color_jitter", a.color_jitter);
    a.grayscale_prob = get_field<double>(j, scope, "grayscale_prob", a.grayscale_prob);
    return a;
}

json config_to_json(const RunConfig& cfg) {
    json j;
    j["stream"] = {{"kind", cfg.stream.kind},
                   {"classes", cfg.stream.synthetic.classes},
                   {"dim", cfg.stream.synthetic.dim},
                   {"train_per_class", cfg.stream.synthetic.train_per_class},
                   {"test_per_class", cfg.stream.synthetic.test_per_class},
                   {"center_radius", cfg.stream.synthetic.center_radius},
                   {"cluster_spread", cfg.stream.synthetic.cluster_spread},
                   {"data_seed", cfg.stream.synthetic.seed},
                   {"image_size", cfg.stream.tiny.size},
                   {"image_noise", cfg.stream.tiny.noise},
                   {"directory", cfg.stream.directory},
                   {"num_tasks", cfg.stream.num_tasks},
                   {"classes_per_task", cfg.stream.classes_per_task},
                   {"partition_seed", cfg.stream.partition_seed},
                   {"phases", cfg.stream.phases},
                   {"phase_drift", cfg.stream.phase_drift},
                   {"augmentation", augmentation_to_json(cfg.stream.augmentation)}};
    j["backbone"] = {{"arch", arch_name(cfg.backbone.arch)},
                     {"hidden_dims", cfg.backbone.hidden_dims},
                     {"feature_dim", cfg.backbone.feature_dim},
                     {"projection_dim", cfg.backbone.projection_dim}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_sources", cfg.train.batch_sources},
                  {"learning_rate", cfg.train.learning_rate},
                  {"momentum", cfg.train.optimizer.momentum},
                  {"weight_decay", cfg.train.optimizer.weight_decay},
                  {"tau_sc", cfg.train.loss.tau_sc.tau},
                  {"tau_d", cfg.train.loss.tau_d.tau},
                  {"alpha", cfg.train.loss.alpha},
                  {"beta", cfg.train.loss.beta},
                  {"sc_weight", cfg.train.loss.sc_weight},
                  {"replay_capacity", cfg.train.replay_capacity}};
    j["method"] = cfg.method;
    j["mode"] = eval_mode_name(cfg.mode);
    j["probe"] = cfg.probe;
    j["seeds"] = cfg.seeds;
    j["out_dir"] = cfg.out_dir;
    return j;
}

RunConfig config_from_json(const json& j) {
    RunConfig cfg;
    check_known_keys(j, "", {"stream", "backbone", "train", "method", "mode", "probe", "seeds",
                             "out_dir"});

    if (j.contains("stream")) {
        const json& s = j.at("stream");
        const std::string scope = "stream.";
        check_known_keys(s, scope,
                         {"kind", "classes", "dim", "train_per_class", "test_per_class",
                          "center_radius", "cluster_spread", "data_seed", "image_size",
                          "image_noise", "directory", "num_tasks", "classes_per_task",
                          "partition_seed", "phases", "phase_drift", "augmentation"});
        cfg.stream.kind = get_field<std::string>(s, scope, "kind", cfg.stream.kind);
        cfg.stream.synthetic.classes = get_field<int>(s, scope, "classes", 10);
        cfg.stream.synthetic.dim = get_field<int>(s, scope, "dim", 16);
        cfg.stream.synthetic.train_per_class = get_field<int>(s, scope, "train_per_class", 100);
        cfg.stream.synthetic.test_per_class = get_field<int>(s, scope, "test_per_class", 40);
        cfg.stream.synthetic.center_radius = get_field<double>(s, scope, "center_radius", 1.0);
        cfg.stream.synthetic.cluster_spread = get_field<double>(s, scope, "cluster_spread", 0.3);
        cfg.stream.synthetic.seed = get_field<std::uint64_t>(s, scope, "data_seed", 1);
        cfg.stream.tiny.classes = cfg.stream.synthetic.classes;
        cfg.stream.tiny.size = get_field<int>(s, scope, "image_size", 32);
        cfg.stream.tiny.train_per_class = cfg.stream.synthetic.train_per_class;
        cfg.stream.tiny.test_per_class = cfg.stream.synthetic.test_per_class;
        cfg.stream.tiny.noise = get_field<double>(s, scope, "image_noise", 0.05);
        cfg.stream.tiny.seed = cfg.stream.synthetic.seed;
        cfg.stream.directory = get_field<std::string>(s, scope, "directory", "");
        cfg.stream.num_tasks = get_field<int>(s, scope, "num_tasks", 5);
        cfg.stream.classes_per_task = get_field<int>(s, scope, "classes_per_task", 2);
        cfg.stream.partition_seed = get_field<std::uint64_t>(s, scope, "partition_seed", 1);
        cfg.stream.phases = get_field<int>(s, scope, "phases", 0);
        cfg.stream.phase_drift = get_field<double>(s, scope, "phase_drift", 0.25);
        if (s.contains("augmentation"))
            cfg.stream.augmentation = augmentation_from_json(s.at("augmentation"));
    }

    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        const std::string scope = "backbone.";
        check_known_keys(b, scope, {"arch", "hidden_dims", "feature_dim", "projection_dim"});
        cfg.backbone.arch = arch_from_name(get_field<std::string>(b, scope, "arch", "mlp"));
        cfg.backbone.hidden_dims =
            get_field<std::vector<std::size_t>>(b, scope, "hidden_dims", {64, 64});
        cfg.backbone.feature_dim = get_field<std::size_t>(b, scope, "feature_dim", 32);
        cfg.backbone.projection_dim = get_field<std::size_t>(b, scope, "projection_dim", 16);
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        const std::string scope = "train.";
        check_known_keys(t, scope,
                         {"epochs", "batch_sources", "learning_rate", "momentum", "weight_decay",
                          "tau_sc", "tau_d", "alpha", "beta", "sc_weight", "replay_capacity"});
        cfg.train.epochs = get_field<int>(t, scope, "epochs", 100);
        cfg.train.batch_sources = get_field<std::size_t>(t, scope, "batch_sources", 128);
        cfg.train.learning_rate = get_field<double>(t, scope, "learning_rate", 0.01);
        cfg.train.optimizer.momentum = get_field<double>(t, scope, "momentum", 0.9);
        cfg.train.optimizer.weight_decay = get_field<double>(t, scope, "weight_decay", 0.0);
        try {
            cfg.train.loss.tau_sc = Temperature(get_field<double>(t, scope, "tau_sc", 0.1));
            cfg.train.loss.tau_d = Temperature(get_field<double>(t, scope, "tau_d", 0.1));
        } catch (const std::domain_error& e) {
            field_error(scope + "tau", e.what());
        }
        cfg.train.loss.alpha = get_field<double>(t, scope, "alpha", 2.0);
        cfg.train.loss.beta = get_field<double>(t, scope, "beta", 4.0);
        cfg.train.loss.sc_weight = get_field<double>(t, scope, "sc_weight", 1.0);
        cfg.train.replay_capacity = get_field<std::size_t>(t, scope, "replay_capacity", 0);
    }

    cfg.method = get_field<std::string>(j, "", "method", "prd");
    cfg.mode = eval_mode_from_name(get_field<std::string>(j, "", "mode", "class_incremental"));
    cfg.probe = get_field<bool>(j, "", "probe", true);
    cfg.seeds = get_field<std::vector<std::uint64_t>>(j, "", "seeds", {1, 2, 3});
    cfg.out_dir = get_field<std::string>(j, "", "out_dir", "runs/out");
    return cfg;
}

// "a.b.c" -> pointer into nested objects, creating objects along the way.
json* navigate(json& root, const std::string& dotted, std::string& leaf) {
    json* cur = &root;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = dotted.find('.', start);
        if (dot == std::string::npos) {
            leaf = dotted.substr(start);
            return cur;
        }
        const std::string key = dotted.substr(start, dot - start);
        if (!cur->contains(key)) (*cur)[key] = json::object();
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

json parse_override_value(const std::string& text) {
    const json parsed = json::parse(text, nullptr, false);
    if (!parsed.is_discarded()) return parsed;
    return json(text);  // plain string
}

void apply_override(json& root, const std::string& dotted, const std::string& value) {
    std::string leaf;
    json* obj = navigate(root, dotted, leaf);
    (*obj)[leaf] = parse_override_value(value);
}

void apply_env_overrides(json& root) {
    const std::string prefix = "PRD_";
    for (char** env = environ; env && *env; ++env) {
        const std::string entry(*env);
        if (entry.rfind(prefix, 0) != 0) continue;
        const std::size_t eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(prefix.size(), eq - prefix.size());
        const std::string value = entry.substr(eq + 1);
        // PRD_TRAIN__EPOCHS -> train.epochs
        std::string dotted;
        for (std::size_t i = 0; i < key.size(); ++i) {
            if (key[i] == '_' && i + 1 < key.size() && key[i + 1] == '_') {
                dotted += '.';
                ++i;
            } else {
                dotted += static_cast<char>(std::tolower(key[i]));
            }
        }
        apply_override(root, dotted, value);
    }
}

}  // namespace

std::string run_config_to_json_string(const RunConfig& cfg) {
    return config_to_json(cfg).dump(2);
}

RunConfig run_config_from_json_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& set_overrides,
                          bool use_env) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();

    json j;
    try {
        j = json::parse(buf.str());
    } catch (const json::exception& e) {
        throw ConfigError(path + ": parse error: " + e.what());
    }

    if (use_env) apply_env_overrides(j);
    for (const std::string& ov : set_overrides) {
        const std::size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects path.to.field=value, got '" + ov + "'");
        apply_override(j, ov.substr(0, eq), ov.substr(eq + 1));
    }
    RunConfig cfg = config_from_json(j);
    validate_run_config(cfg);
    return cfg;
}

std::string config_hash(const RunConfig& cfg) {
    const std::string canonical = config_to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << "fnv1a64:" << std::hex << h;
    return os.str();
}

Dataset build_dataset(const StreamConfig& stream) {
    if (stream.kind == "synthetic_gaussian") {
        if (stream.phases > 0)
            return Dataset::synthetic_gaussian_domain(stream.synthetic, stream.phases,
                                                      stream.phase_drift);
        return Dataset::synthetic_gaussian(stream.synthetic);
    }
    if (stream.kind == "tiny_images") return Dataset::tiny_images(stream.tiny);
    if (stream.kind == "directory") {
        if (stream.directory.empty())
            throw ConfigError("stream.directory: required for kind 'directory'");
        return Dataset::load_dir(stream.directory);
    }
    throw ConfigError("stream.kind: unknown kind '" + stream.kind + "'");
}

std::vector<SessionSpec> build_sessions(const StreamConfig& stream, const Dataset& data,
                                        EvalMode mode) {
    if (mode == EvalMode::DomainIncremental)
        return build_domain_stream(data, stream.phases);
    return build_stream(data, stream.num_tasks, stream.classes_per_task, stream.partition_seed);
}

TrainConfig resolved_train_config(const RunConfig& cfg, std::uint64_t seed) {
    TrainConfig t = cfg.train;
    t.seed = seed;
    t.augmentation = cfg.stream.augmentation;
    if (cfg.method == "finetune") {
        t.loss.alpha = 0.0;
        t.loss.beta = 0.0;
        t.refit_prototypes = true;
        t.replay_capacity = 0;
    } else if (cfg.method == "er") {
        t.loss.beta = 0.0;
    } else if (cfg.method != "prd") {
        throw ConfigError("method: unknown method '" + cfg.method + "'");
    }
    return t;
}

BackboneSpec resolved_backbone(const RunConfig& cfg, const Dataset& data, std::uint64_t seed) {
    BackboneSpec spec = cfg.backbone;
    spec.input_shape = data.input_shape;
    spec.seed = seed;
    spec.validate();
    return spec;
}

void validate_run_config(const RunConfig& cfg) {
    if (cfg.seeds.empty()) throw ConfigError("seeds: must list at least one seed");
    if (cfg.method == "er" && cfg.train.replay_capacity == 0)
        throw ConfigError("train.replay_capacity: method 'er' needs a replay buffer (M > 0)");
    if (cfg.mode == EvalMode::DomainIncremental) {
        if (cfg.stream.phases < 1)
            throw ConfigError("stream.phases: domain-incremental mode needs phases >= 1");
    } else if (cfg.stream.phases > 0) {
        throw ConfigError("stream.phases: only valid in domain-incremental mode");
    }
    cfg.train.validate();
    (void)resolved_train_config(cfg, cfg.seeds.front());  // validates the method name
}

}  // namespace prd
