#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "partflow/common.hpp"

namespace partflow {

// Inclusive integer axis-aligned box over voxel indices.
// Volume counts cells: prod(max - min + 1).
struct Aabb {
    IVec3 min;
    IVec3 max;

    bool valid() const { return min.x <= max.x && min.y <= max.y && min.z <= max.z; }
    bool inside_grid(int resolution) const {
        auto in = [resolution](const IVec3& v) {
            return v.x >= 0 && v.y >= 0 && v.z >= 0 && v.x < resolution && v.y < resolution &&
                   v.z < resolution;
        };
        return in(min) && in(max);
    }
    bool contains(const IVec3& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
               p.z <= max.z;
    }
    int64_t volume() const {
        return static_cast<int64_t>(max.x - min.x + 1) * (max.y - min.y + 1) * (max.z - min.z + 1);
    }
    Vec3 center() const {
        return {0.5 * (min.x + max.x), 0.5 * (min.y + max.y), 0.5 * (min.z + max.z)};
    }

    friend bool operator==(const Aabb& a, const Aabb& b) { return a.min == b.min && a.max == b.max; }
    friend bool operator!=(const Aabb& a, const Aabb& b) { return !(a == b); }
};

// Sparse voxel grid: active positions stored sorted in (z, y, x) order with
// no duplicates, optionally labeled with one part id per position. The
// canonical order makes every downstream computation independent of
// construction order.
class SparseVoxelGrid {
public:
    SparseVoxelGrid() = default;

    // Unlabeled. Positions are validated, sorted and deduplicated.
    SparseVoxelGrid(int resolution, std::vector<IVec3> positions);

    // Labeled: labels[i] belongs to positions[i]. Duplicate positions must
    // carry identical labels.
    SparseVoxelGrid(int resolution, std::vector<IVec3> positions, std::vector<int> labels);

    int resolution() const { return resolution_; }
    const std::vector<IVec3>& positions() const { return positions_; }
    bool labeled() const { return labeled_; }
    const std::vector<int>& labels() const { return labels_; }
    size_t size() const { return positions_.size(); }
    bool empty() const { return positions_.empty(); }

    bool contains(const IVec3& p) const;
    // Index of a position in the canonical order, or -1.
    int64_t index_of(const IVec3& p) const;
    // Label of an active position; throws MissingLabels / OutOfBounds.
    int label_at(const IVec3& p) const;

    // Distinct labels in ascending order.
    std::vector<int> part_ids() const;

private:
    void normalize();

    int resolution_ = 0;
    std::vector<IVec3> positions_;
    std::vector<int> labels_;
    bool labeled_ = false;
};

// 2D label mask. entries[i * width + j] is the part index of pixel (i, j);
// all entries lie in {0 .. num_parts-1} where num_parts includes the
// reserved background index num_parts-1.
struct LabelMask2D {
    int height = 0;
    int width = 0;
    int num_parts = 0;
    std::vector<int> entries;

    int at(int i, int j) const { return entries[static_cast<size_t>(i) * width + j]; }
    int& at(int i, int j) { return entries[static_cast<size_t>(i) * width + j]; }
    void validate() const;
};

// Triangle mesh in unit-cube coordinates [-0.5, 0.5]^3.
struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;

    // Checks index ranges, drops zero-area triangles. Throws OutOfBounds on
    // bad indices.
    TriMesh validated() const;
    bool empty() const { return triangles.empty(); }
};

enum class ViewAxis { X = 0, Y = 1, Z = 2 };

// Orthographic view: rays travel along `axis` in direction `sign`
// (+1 or -1). Default view is -y ("front"): pixel (i,j) maps to the grid
// column (x=j, z=h-1-i) and the first active voxel with the largest y wins.
struct View {
    ViewAxis axis = ViewAxis::Y;
    int sign = -1;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Conservative triangle-box overlap (separating axis test); boxes are closed.
bool triangle_box_overlap(const Vec3& box_center, const Vec3& box_half, const Vec3& v0,
                          const Vec3& v1, const Vec3& v2);

// Surface voxelization: a cell is active iff it intersects any triangle.
// Mesh must be non-empty (after dropping degenerate triangles) and lie in
// the unit cube.
SparseVoxelGrid voxelize(const TriMesh& mesh, int resolution);

// Union of parts with labels; overlapping positions take the lowest part id.
struct LabeledPart {
    int part_id = 0;
    SparseVoxelGrid grid;
};
SparseVoxelGrid compose(const std::vector<LabeledPart>& parts);

// Tight inclusive bounding box of one part's voxels.
Aabb part_aabb(const SparseVoxelGrid& grid, int part_id);

// Active voxels inside the box, regardless of label.
std::vector<IVec3> voxels_in_box(const SparseVoxelGrid& grid, const Aabb& box);

// Orthographic projection of a labeled grid to a part-index mask. Background
// pixels take the reserved index num_parts-1. Pixels may cover several grid
// columns when out_h/out_w differ from the resolution; the nearest active
// voxel across the pixel footprint wins.
LabelMask2D project_mask(const SparseVoxelGrid& grid, const View& view, int out_h, int out_w,
                         int num_parts);

// Depth+occupancy render used by the planner featurizer. Returns two planes
// of out_h*out_w values: occupancy in {0,1} and normalized depth in [0,1]
// (background depth = 1).
struct DepthRender {
    int height = 0;
    int width = 0;
    std::vector<double> occupancy;
    std::vector<double> depth;
};
DepthRender render_depth(const SparseVoxelGrid& grid, const View& view, int out_h, int out_w);

}  // namespace partflow
