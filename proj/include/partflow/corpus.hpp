#pragma once
// Dataset directory layout shared by the CLI and tests:
//   <dir>/objects/<id>/{voxels,boxes,mask,s2_targets}.json
//   <dir>/manifest.json
// Objects are stored with labels renumbered to canonical box order, so
// boxes.json is simultaneously the tokenization order and the label order.

#include <cstdint>
#include <string>
#include <vector>

#include "partflow/config.hpp"
#include "partflow/voxel.hpp"

namespace partflow::corpus {

struct ObjectRecord {
    std::string id;
    int parts = 0;
    int granularity = 0;  // 0 fine, 1 merged
    double noise_fraction = 0.0;
};

struct Manifest {
    uint64_t config_hash = 0;
    int resolution = 0;
    int mask_hw = 0;
    std::vector<ObjectRecord> objects;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

Manifest write_corpus(const std::string& dir, const PipelineConfig& cfg);

Manifest load_manifest(const std::string& dir);

struct LoadedObject {
    SparseVoxelGrid grid;
    LabelMask2D mask;
    std::vector<Aabb> boxes;  // canonical == label order
};

LoadedObject load_object(const std::string& dir, const std::string& id);

// The stored stage-two supervision, for audits; training rebuilds the full
// latents from (grid, boxes) deterministically.
struct StoredValidity {
    int part = 0;
    std::vector<IVec3> positions;
    std::vector<double> validity;
};

std::vector<StoredValidity> load_s2_validity(const std::string& dir, const std::string& id);

}  // namespace partflow::corpus
