#pragma once

#include <vector>

#include "partflow/box_codec.hpp"
#include "partflow/config.hpp"
#include "partflow/nn.hpp"
#include "partflow/voxel.hpp"

namespace partflow::planner {

// Sinusoid dims per axis for voxel-position features.
constexpr size_t kAxisDims = 10;

// One training object: labeled surface grid, its 2D part mask, and the
// target boxes (canonicalized before tokenization).
struct PlanExample {
    SparseVoxelGrid grid;
    LabelMask2D mask;
    std::vector<Aabb> boxes;
};

// Teacher-forcing views of a box list.
struct EncodedExample {
    BoxTokenSequence seq;
    TokenRoleMap roles;
    std::vector<int> input;    // BOS + interior coordinate tokens
    std::vector<int> targets;  // interior coordinate tokens + EOS
};
EncodedExample encode_example(const std::vector<Aabb>& boxes, int resolution);

void register_model(ad::ParamStore& store, const PlannerConfig& cfg);

// --- graph builders (training path) -----------------------------------------

// Depth+occupancy render, embedded per pixel to d channels; h=w default to
// the grid resolution.
ad::Value featurize_view(const ad::Leaves& leaves, const SparseVoxelGrid& grid, int h = -1,
                         int w = -1);

// f'_{ij} = f_{ij} + E[M_{ij}]
ad::Value fuse_mask(const ad::Leaves& leaves, const ad::Value& f, const LabelMask2D& mask, int K);

// Active voxel positions -> sinusoids -> linear -> L pooled tokens.
ad::Value encode_voxel_tokens(const ad::Leaves& leaves, const SparseVoxelGrid& grid);

// [fused mask tokens; voxel tokens] + learned prefix positions.
ad::Value conditioning_prefix(const ad::Leaves& leaves, const PlannerConfig& cfg,
                              const SparseVoxelGrid& grid, const LabelMask2D& mask);

// Causal transformer over [prefix; embedded inputs]; logits for the token
// positions only, shape [len(input) x vocab].
ad::Value forward_logits(const ad::Leaves& leaves, const PlannerConfig& cfg,
                         const ad::Value& prefix, const std::vector<int>& input);

// Mean next-token NLL.
ad::Value loss_base(const ad::Value& logits, const std::vector<int>& targets);

// Soft coverage penalty via expected coordinates; see coverage_hard for the
// argmax variant of the same formula.
ad::Value loss_coverage_soft(const ad::Value& logits, const TokenRoleMap& roles,
                             const BoxTokenSequence& gt);

ad::Value loss_total(const ad::Value& base, const ad::Value& coverage, double lambda_cov);

// Hard variant on already-decoded boxes, paired by index:
// (1/6n) sum_k sum_axis relu(dec_min-gt_min) + relu(gt_max-dec_max).
double coverage_hard(const std::vector<Aabb>& decoded, const std::vector<Aabb>& gt);

// Hard variant from logits: argmax coordinate per Min/Max position.
double coverage_hard_from_logits(const Tensor& logits, const TokenRoleMap& roles,
                                 const BoxTokenSequence& gt);

// --- raw path (inference) ----------------------------------------------------

Tensor prefix_raw(const ad::ParamStore& store, const PlannerConfig& cfg,
                  const SparseVoxelGrid& grid, const LabelMask2D& mask);

Tensor forward_logits_raw(const ad::ParamStore& store, const PlannerConfig& cfg,
                          const Tensor& prefix, const std::vector<int>& input);

struct SampleOptions {
    double temperature = 0.0;  // 0 = greedy
    uint64_t seed = 0;
};

struct SampleResult {
    std::vector<Aabb> boxes;  // canonicalized, swap-repaired
    bool truncated = false;   // budget exhausted before the model chose EOS
};

// Constrained decoding: PAD/BOS never; EOS only at box boundaries; stops at
// EOS or after 6*max_boxes coordinates.
SampleResult sample_boxes(const ad::ParamStore& store, const PlannerConfig& cfg,
                          const SparseVoxelGrid& grid, const LabelMask2D& mask,
                          const SampleOptions& opts = {});

// --- training ----------------------------------------------------------------

struct TrainStats {
    int steps_run = 0;
    double final_loss = 0.0;
    double final_accuracy = 0.0;
    bool early_stopped = false;
};

// Round-robin Adam training; evaluates teacher-forced accuracy every
// eval_every steps and stops early at 100% when cfg.early_stop.
TrainStats train(ad::ParamStore& store, const PlannerConfig& cfg,
                 const std::vector<PlanExample>& examples);

// Fraction of target tokens predicted exactly under teacher forcing.
double teacher_forced_accuracy(const ad::ParamStore& store, const PlannerConfig& cfg,
                               const std::vector<PlanExample>& examples);

}  // namespace partflow::planner
