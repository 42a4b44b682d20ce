#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "partflow/autodiff.hpp"
#include "partflow/box_codec.hpp"
#include "partflow/voxel.hpp"

namespace partflow::io {

using json = nlohmann::json;

json load_json(const std::string& path);
void save_json(const std::string& path, const json& j);

// { "resolution": N, "voxels": [[x,y,z],...], "labels": [l,...] | null }
json grid_to_json(const SparseVoxelGrid& grid);
SparseVoxelGrid grid_from_json(const json& j);
void save_grid(const std::string& path, const SparseVoxelGrid& grid);
SparseVoxelGrid load_grid(const std::string& path);

// [ {"min":[x,y,z], "max":[x,y,z]}, ... ]; the parser also unwraps an
// object envelope {"boxes": [...], ...} so stamped artifacts stay loadable.
json boxes_to_json(const std::vector<Aabb>& boxes);
std::vector<Aabb> boxes_from_json(const json& j);
void save_boxes(const std::string& path, const std::vector<Aabb>& boxes);
std::vector<Aabb> load_boxes(const std::string& path);

// { "height": h, "width": w, "num_parts": k, "entries": [...] } row-major
json mask_to_json(const LabelMask2D& mask);
LabelMask2D mask_from_json(const json& j);
void save_mask(const std::string& path, const LabelMask2D& mask);
LabelMask2D load_mask(const std::string& path);

// Text stream: first line "N=<resolution>", then whitespace-separated ids.
void save_tokens(const std::string& path, const BoxTokenSequence& seq);
BoxTokenSequence load_tokens(const std::string& path);

// Wavefront OBJ: `v x y z` and `f a b c ...` (1-based, slash forms allowed,
// polygons fan-triangulated). Everything else is ignored.
TriMesh load_obj(const std::string& path);
TriMesh obj_from_string(const std::string& text);

// Binary weight file: magic, version, config hash, optimizer step, then
// (name, shape, float32 values) per parameter.
void save_checkpoint(const std::string& path, const ad::ParamStore& store, uint64_t config_hash);

struct CheckpointMeta {
    uint64_t config_hash = 0;
    int64_t step = 0;
};

// Loads weights into the store. Parameters already registered must match
// shapes exactly; unknown names are added.
CheckpointMeta load_checkpoint(const std::string& path, ad::ParamStore& store);

}  // namespace partflow::io
