#include "partflow/config.hpp"

#include "partflow/common.hpp"

namespace partflow {

using nlohmann::json;

namespace {

// Missing keys keep defaults; wrong types raise ConfigError.
template <typename T>
void pull(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        raise(ErrorCode::ConfigError, std::string("bad value for ") + key);
    }
}

void require_object(const json& j, const char* what) {
    if (!j.is_object()) raise(ErrorCode::ConfigError, std::string(what) + " must be an object");
}

}  // namespace

void PlannerConfig::validate() const {
    if (resolution < 2) raise(ErrorCode::ConfigError, "planner resolution must be >= 2");
    if (d <= 0 || heads <= 0 || blocks <= 0 || L <= 0 || K < 2 || mask_hw <= 0) {
        raise(ErrorCode::ConfigError, "planner dimensions must be positive (K >= 2)");
    }
    if (d % heads != 0) raise(ErrorCode::ConfigError, "planner d must divide evenly into heads");
    if (max_boxes <= 0) raise(ErrorCode::ConfigError, "planner max_boxes must be positive");
    if (lambda_cov < 0.0) raise(ErrorCode::ConfigError, "lambda_cov must be >= 0");
    if (lr <= 0.0 || steps <= 0 || eval_every <= 0) {
        raise(ErrorCode::ConfigError, "planner training knobs must be positive");
    }
}

void SynthConfig::validate() const {
    if (resolution < 2) raise(ErrorCode::ConfigError, "synth resolution must be >= 2");
    if (D <= 0 || d <= 0 || heads <= 0 || blocks <= 0) {
        raise(ErrorCode::ConfigError, "synth dimensions must be positive");
    }
    if (d % heads != 0) raise(ErrorCode::ConfigError, "synth d must divide evenly into heads");
    if (d % 2 != 0) raise(ErrorCode::ConfigError, "synth d must be even for the time sinusoid");
    if (alpha <= 0.0) raise(ErrorCode::ConfigError, "alpha must be > 0");
    if (beta <= 0.0 || beta >= 1.0) raise(ErrorCode::ConfigError, "beta must lie in (0,1)");
    if (steps <= 0 || train_steps <= 0 || lr <= 0.0) {
        raise(ErrorCode::ConfigError, "synth training knobs must be positive");
    }
    if (max_parts <= 0 || whole_cap <= 0) {
        raise(ErrorCode::ConfigError, "synth capacities must be positive");
    }
}

void DatagenConfig::validate() const {
    if (count <= 0) raise(ErrorCode::ConfigError, "datagen count must be positive");
    if (resolution < 4) raise(ErrorCode::ConfigError, "datagen resolution must be >= 4");
    if (mask_hw <= 0) raise(ErrorCode::ConfigError, "mask_hw must be positive");
    if (min_parts < 2 || max_parts < min_parts) {
        raise(ErrorCode::ConfigError, "part counts need 2 <= min <= max");
    }
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0) {
        raise(ErrorCode::ConfigError, "split ratios must be non-negative");
    }
    const double total = train_ratio + val_ratio + test_ratio;
    if (total < 0.999 || total > 1.001) {
        raise(ErrorCode::ConfigError, "split ratios must sum to 1");
    }
    if (pair_fraction < 0.0 || pair_fraction > 1.0) {
        raise(ErrorCode::ConfigError, "pair_fraction must lie in [0,1]");
    }
}

void EvalSettings::validate() const {
    if (tau_loose <= 0.0 || tau_tight <= 0.0) raise(ErrorCode::ConfigError, "taus must be > 0");
    if (unmatched_penalty < 0.0) raise(ErrorCode::ConfigError, "penalty must be >= 0");
}

void PipelineConfig::validate() const {
    if (data_dir.empty() || out_dir.empty()) {
        raise(ErrorCode::ConfigError, "data and out directories required");
    }
    if (threads <= 0) raise(ErrorCode::ConfigError, "threads must be positive");
    planner.validate();
    synth.validate();
    datagen.validate();
    eval.validate();
}

json to_json(const PlannerConfig& c) {
    return json{{"resolution", c.resolution},
                {"d", c.d},
                {"heads", c.heads},
                {"blocks", c.blocks},
                {"L", c.L},
                {"K", c.K},
                {"mask_hw", c.mask_hw},
                {"max_boxes", c.max_boxes},
                {"lambda_cov", c.lambda_cov},
                {"lr", c.lr},
                {"steps", c.steps},
                {"eval_every", c.eval_every},
                {"early_stop", c.early_stop},
                {"seed", c.seed}};
}

json to_json(const SynthConfig& c) {
    return json{{"resolution", c.resolution},
                {"D", c.D},
                {"alpha", c.alpha},
                {"beta", c.beta},
                {"d", c.d},
                {"heads", c.heads},
                {"blocks", c.blocks},
                {"steps", c.steps},
                {"train_steps", c.train_steps},
                {"lr", c.lr},
                {"max_parts", c.max_parts},
                {"whole_cap", c.whole_cap},
                {"seed", c.seed}};
}

json to_json(const DatagenConfig& c) {
    return json{{"count", c.count},
                {"resolution", c.resolution},
                {"mask_hw", c.mask_hw},
                {"min_parts", c.min_parts},
                {"max_parts", c.max_parts},
                {"train_ratio", c.train_ratio},
                {"val_ratio", c.val_ratio},
                {"test_ratio", c.test_ratio},
                {"pair_fraction", c.pair_fraction},
                {"seed", c.seed}};
}

json to_json(const EvalSettings& c) {
    return json{{"tau_loose", c.tau_loose},
                {"tau_tight", c.tau_tight},
                {"unmatched_penalty", c.unmatched_penalty},
                {"oracle", c.oracle}};
}

json to_json(const PipelineConfig& c) {
    return json{{"data_dir", c.data_dir}, {"out_dir", c.out_dir},
                {"seed", c.seed},         {"threads", c.threads},
                {"planner", to_json(c.planner)}, {"synth", to_json(c.synth)},
                {"datagen", to_json(c.datagen)}, {"eval", to_json(c.eval)}};
}

PlannerConfig planner_config_from_json(const json& j) {
    require_object(j, "planner config");
    PlannerConfig c;
    pull(j, "resolution", c.resolution);
    pull(j, "d", c.d);
    pull(j, "heads", c.heads);
    pull(j, "blocks", c.blocks);
    pull(j, "L", c.L);
    pull(j, "K", c.K);
    pull(j, "mask_hw", c.mask_hw);
    pull(j, "max_boxes", c.max_boxes);
    pull(j, "lambda_cov", c.lambda_cov);
    pull(j, "lr", c.lr);
    pull(j, "steps", c.steps);
    pull(j, "eval_every", c.eval_every);
    pull(j, "early_stop", c.early_stop);
    pull(j, "seed", c.seed);
    c.validate();
    return c;
}

SynthConfig synth_config_from_json(const json& j) {
    require_object(j, "synth config");
    SynthConfig c;
    pull(j, "resolution", c.resolution);
    pull(j, "D", c.D);
    pull(j, "alpha", c.alpha);
    pull(j, "beta", c.beta);
    pull(j, "d", c.d);
    pull(j, "heads", c.heads);
    pull(j, "blocks", c.blocks);
    pull(j, "steps", c.steps);
    pull(j, "train_steps", c.train_steps);
    pull(j, "lr", c.lr);
    pull(j, "max_parts", c.max_parts);
    pull(j, "whole_cap", c.whole_cap);
    pull(j, "seed", c.seed);
    c.validate();
    return c;
}

DatagenConfig datagen_config_from_json(const json& j) {
    require_object(j, "datagen config");
    DatagenConfig c;
    pull(j, "count", c.count);
    pull(j, "resolution", c.resolution);
    pull(j, "mask_hw", c.mask_hw);
    pull(j, "min_parts", c.min_parts);
    pull(j, "max_parts", c.max_parts);
    pull(j, "train_ratio", c.train_ratio);
    pull(j, "val_ratio", c.val_ratio);
    pull(j, "test_ratio", c.test_ratio);
    pull(j, "pair_fraction", c.pair_fraction);
    pull(j, "seed", c.seed);
    c.validate();
    return c;
}

EvalSettings eval_settings_from_json(const json& j) {
    require_object(j, "eval settings");
    EvalSettings c;
    pull(j, "tau_loose", c.tau_loose);
    pull(j, "tau_tight", c.tau_tight);
    pull(j, "unmatched_penalty", c.unmatched_penalty);
    pull(j, "oracle", c.oracle);
    c.validate();
    return c;
}

PipelineConfig pipeline_config_from_json(const json& j) {
    require_object(j, "pipeline config");
    PipelineConfig c;
    pull(j, "data_dir", c.data_dir);
    pull(j, "out_dir", c.out_dir);
    pull(j, "seed", c.seed);
    pull(j, "threads", c.threads);
    if (j.contains("planner")) c.planner = planner_config_from_json(j.at("planner"));
    if (j.contains("synth")) c.synth = synth_config_from_json(j.at("synth"));
    if (j.contains("datagen")) c.datagen = datagen_config_from_json(j.at("datagen"));
    if (j.contains("eval")) c.eval = eval_settings_from_json(j.at("eval"));
    c.validate();
    return c;
}

uint64_t config_hash(const PipelineConfig& c) {
    // json::dump sorts object keys, so the fingerprint is layout-stable.
    // Runtime placement knobs (paths, thread count) are excluded: they change
    // where artifacts live and how fast they are produced, never their bytes.
    nlohmann::json j = to_json(c);
    j.erase("data_dir");
    j.erase("out_dir");
    j.erase("threads");
    return fnv1a64(j.dump());
}

}  // namespace partflow
