#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace partflow {

// Stage-one structure planner: depth/occupancy view features + mask tokens +
// pooled voxel tokens form the conditioning prefix, then box tokens.
struct PlannerConfig {
    int resolution = 32;  // N
    int d = 64;
    int heads = 4;
    int blocks = 4;
    int L = 16;           // pooled voxel-token count
    int K = 64;           // mask embedding table rows (incl. background)
    int mask_hw = 8;      // conditioning mask side; prefix grows with its square
    int max_boxes = 12;
    double lambda_cov = 0.1;
    double lr = 1e-3;
    int steps = 5000;
    int eval_every = 100;
    bool early_stop = true;  // stop once teacher-forced accuracy hits 100%
    uint64_t seed = 1;

    int vocab() const { return resolution + 3; }
    int prefix_len() const { return mask_hw * mask_hw + L; }

    void validate() const;
};

// Stage-two flow-matching synthesizer over per-voxel latents.
struct SynthConfig {
    int resolution = 32;
    int D = 8;            // content channels; one validity channel on top
    double alpha = 1.0;   // validity target magnitude
    double beta = 0.5;    // retention threshold on sigmoid(f_valid)
    int d = 48;
    int heads = 4;
    int blocks = 2;
    int steps = 25;       // Euler steps at sampling time
    int train_steps = 3000;
    double lr = 1e-3;
    int max_parts = 12;
    int whole_cap = 512;  // whole-shape context tokens kept after striding
    uint64_t seed = 2;

    void validate() const;
};

struct DatagenConfig {
    int count = 512;
    int resolution = 32;
    int mask_hw = 8;
    int min_parts = 2;
    int max_parts = 12;
    double train_ratio = 0.8;
    double val_ratio = 0.1;
    double test_ratio = 0.1;
    double pair_fraction = 0.5;  // objects also emitted with a coarser labeling
    uint64_t seed = 3;

    void validate() const;
};

struct EvalSettings {
    double tau_loose = 0.1;
    double tau_tight = 0.05;
    double unmatched_penalty = 1.0;
    bool oracle = false;

    void validate() const;
};

struct PipelineConfig {
    std::string data_dir = "data";
    std::string out_dir = "out";
    uint64_t seed = 7;
    int threads = 1;
    PlannerConfig planner;
    SynthConfig synth;
    DatagenConfig datagen;
    EvalSettings eval;

    void validate() const;
};

// JSON round-trips. Parsers accept partial documents (missing keys keep
// defaults) and validate() the result.
nlohmann::json to_json(const PlannerConfig& c);
nlohmann::json to_json(const SynthConfig& c);
nlohmann::json to_json(const DatagenConfig& c);
nlohmann::json to_json(const EvalSettings& c);
nlohmann::json to_json(const PipelineConfig& c);

PlannerConfig planner_config_from_json(const nlohmann::json& j);
SynthConfig synth_config_from_json(const nlohmann::json& j);
DatagenConfig datagen_config_from_json(const nlohmann::json& j);
EvalSettings eval_settings_from_json(const nlohmann::json& j);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

// Stable fingerprint of the full configuration; stamped into every artifact.
uint64_t config_hash(const PipelineConfig& c);

}  // namespace partflow
