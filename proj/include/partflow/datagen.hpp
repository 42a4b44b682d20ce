#pragma once
// Procedural multi-part objects with exact labels, plus the training-pair
// builders for both stages and the stratified corpus split.

#include <cstdint>
#include <string>
#include <vector>

#include "partflow/box_codec.hpp"
#include "partflow/config.hpp"
#include "partflow/synthesizer.hpp"
#include "partflow/voxel.hpp"

namespace partflow::datagen {

enum class PrimitiveKind { Box, Sphere, Cylinder };

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Box;
    IVec3 center;
    IVec3 half;      // per-axis half extents, >= 1
    int axis = 2;    // cylinder spine
};

// Solid cell fill, clipped to the grid.
std::vector<IVec3> voxelize_primitive(const Primitive& prim, int resolution);

struct ProceduralObject {
    std::vector<Primitive> parts;                  // part id = index
    std::vector<int> anchors;                      // anchors[k] = part k grew from; -1 for root
    std::vector<std::vector<int>> granularities;   // merge maps, fine id -> coarse id
};

struct GeneratedObject {
    ProceduralObject object;
    SparseVoxelGrid grid;  // labeled, one connected component
};

// Seeded assembly: parts placed with 1-2 cells of interpenetration so at
// least one part box contains voxels of a neighbour (the stage-two noise
// guarantee). Bounded retries, then GenerationFailed.
GeneratedObject generate_object(uint64_t seed, int min_parts, int max_parts, int resolution);

// Relabel through a merge map and renumber contiguously.
SparseVoxelGrid apply_granularity(const SparseVoxelGrid& grid, const std::vector<int>& merge_map);

// Tight boxes indexed by part id (labels must be contiguous from 0).
std::vector<Aabb> part_boxes(const SparseVoxelGrid& grid);

struct TrainingPairS1 {
    LabelMask2D mask;
    std::vector<Aabb> boxes;   // canonical order
    BoxTokenSequence seq;
};

// num_parts sizes the mask index space (background = num_parts-1); pass the
// planner's K so the two stages agree.
TrainingPairS1 make_pair_s1(const SparseVoxelGrid& grid, int mask_hw, int num_parts);

struct TrainingPairS2 {
    std::vector<Aabb> boxes;   // part-id order, aligned with labels
    synth::PartLatentSet targets;
    double noise_fraction = 0.0;
};

TrainingPairS2 make_pair_s2(const SparseVoxelGrid& grid, double alpha, int D, uint64_t seed);

struct SplitManifest {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

// Stratified by part-count buckets 2-3 / 4-6 / 7-9 / 10+, each split within
// one object of the exact ratio share per bucket.
SplitManifest split_corpus(const std::vector<int>& part_counts, double train_ratio,
                           double val_ratio, double test_ratio, uint64_t seed);

}  // namespace partflow::datagen
