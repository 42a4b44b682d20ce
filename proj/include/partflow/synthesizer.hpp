#pragma once
// Stage two: rectified-flow generation of per-part voxel latents, conditioned
// on the box layout and the whole-shape voxel set. Each token is one voxel
// carrying D content channels plus a validity channel used to discard noise
// voxels after sampling.

#include <cstdint>
#include <vector>

#include "partflow/autodiff.hpp"
#include "partflow/config.hpp"
#include "partflow/voxel.hpp"

namespace partflow::synth {

struct PartTokens {
    int part_id = 0;              // index into the box list
    std::vector<IVec3> positions;
    Tensor latent;                // [n, D+1]; column D is f_valid
};

struct PartLatentSet {
    PartTokens whole;             // context group; never discarded
    std::vector<PartTokens> parts;
    int D = 0;
    int resolution = 0;

    size_t total_tokens() const;
};

// The fixed projection applied to raw geometric descriptors. A function of
// (seed, D) only, so every caller with the same seed sees the same map.
Tensor descriptor_projection(int D, uint64_t seed);

// Ground-truth latents. Part k's tokens are all grid voxels inside boxes[k];
// tokens whose true label differs from k get validity -alpha and zeroed
// content. Whole-shape tokens cover the full active set at +alpha.
PartLatentSet build_targets(const SparseVoxelGrid& grid, const std::vector<Aabb>& boxes,
                            double alpha, int D, uint64_t seed);

// x(t) = (1-t) x0 + t eps. Bit-exact at both endpoints.
Tensor interpolate(const Tensor& x0, const Tensor& eps, double t);

// Flattened token sequence: whole-shape group first (ppe 0), then each part
// in order (ppe 1..P). whole_cap strides the whole group down when the
// object has more active voxels than the context budget.
struct TokenBatch {
    std::vector<IVec3> positions;
    std::vector<int> ppe;
    Tensor x;                     // [n, D+1]
    int resolution = 0;

    size_t size() const { return positions.size(); }
};

TokenBatch flatten(const PartLatentSet& set, int whole_cap);

// 2x spatial pooling cells, grouped strictly within each ppe group.
struct CoarseGroups {
    std::vector<std::vector<int>> members;  // coarse cell -> fine token rows
    std::vector<int> fine_to_coarse;
    std::vector<IVec3> positions;           // coarse cell coordinates
    std::vector<int> ppe;
};

CoarseGroups coarse_groups(const TokenBatch& batch);

void register_model(ad::ParamStore& store, const SynthConfig& cfg);

// Velocity prediction v(x, t), one row per fine token.
ad::Value denoiser_forward(const ad::Leaves& leaves, const SynthConfig& cfg,
                           const TokenBatch& batch, const ad::Value& x, double t);

// Mean over tokens and channels of |v - (eps - x0)|^2.
ad::Value loss_cfm(const ad::Value& v, const Tensor& x0, const Tensor& eps);

struct SampleResult {
    PartLatentSet set;
    std::vector<int> skipped_boxes;  // boxes with no voxels inside
    int forward_passes = 0;
};

// Joint generation for all parts: Gaussian init at t=1, fixed-step Euler on
// dx/dt = -v(x, t) down to t=0. One forward pass per step.
SampleResult sample_parts(const ad::ParamStore& store, const SynthConfig& cfg,
                          const std::vector<Aabb>& boxes, const SparseVoxelGrid& whole,
                          int steps, uint64_t seed);

// Retention predicate: sigmoid(f_valid) > beta. At beta = 0.5 this is
// exactly f_valid > 0.
bool retained(double f_valid, double beta);

struct RetainedPart {
    int part_id = 0;
    std::vector<IVec3> positions;
    Tensor content;               // [n, D]
    std::vector<double> score;    // sigmoid(f_valid), kept for merging
};

std::vector<RetainedPart> discard_voxels(const PartLatentSet& set, double beta);

// Union of retained voxels with part labels; contested positions go to the
// higher score, ties to the lower part index.
SparseVoxelGrid merge_parts(const std::vector<RetainedPart>& parts, int resolution);

struct TrainExample {
    TokenBatch batch;             // x holds the ground-truth x0
};

struct TrainStats {
    int steps_run = 0;
    double final_loss = 0.0;
};

TrainStats train(ad::ParamStore& store, const SynthConfig& cfg,
                 const std::vector<TrainExample>& examples);

// Fraction of part tokens whose validity sign matches the grid labels.
double validity_sign_accuracy(const PartLatentSet& generated, const SparseVoxelGrid& gt);

}  // namespace partflow::synth
