#include "partflow/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace partflow {

namespace {

bool in_grid(const IVec3& p, int resolution) {
    return p.x >= 0 && p.y >= 0 && p.z >= 0 && p.x < resolution && p.y < resolution &&
           p.z < resolution;
}

}  // namespace

SparseVoxelGrid::SparseVoxelGrid(int resolution, std::vector<IVec3> positions)
    : resolution_(resolution), positions_(std::move(positions)) {
    normalize();
}

SparseVoxelGrid::SparseVoxelGrid(int resolution, std::vector<IVec3> positions,
                                 std::vector<int> labels)
    : resolution_(resolution),
      positions_(std::move(positions)),
      labels_(std::move(labels)),
      labeled_(true) {
    if (labels_.size() != positions_.size()) {
        raise(ErrorCode::MissingLabels, "label count " + std::to_string(labels_.size()) +
                                            " does not match position count " +
                                            std::to_string(positions_.size()));
    }
    normalize();
}

void SparseVoxelGrid::normalize() {
    if (resolution_ <= 0 && !positions_.empty()) {
        raise(ErrorCode::OutOfBounds, "non-positive resolution with active voxels");
    }
    for (const IVec3& p : positions_) {
        if (!in_grid(p, resolution_)) {
            raise(ErrorCode::OutOfBounds, "voxel (" + std::to_string(p.x) + "," +
                                              std::to_string(p.y) + "," + std::to_string(p.z) +
                                              ") outside grid of resolution " +
                                              std::to_string(resolution_));
        }
    }
    if (labels_.empty()) {
        std::sort(positions_.begin(), positions_.end());
        positions_.erase(std::unique(positions_.begin(), positions_.end()), positions_.end());
        return;
    }
    for (int l : labels_) {
        if (l < 0) raise(ErrorCode::OutOfBounds, "negative part id " + std::to_string(l));
    }
    std::vector<size_t> order(positions_.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [this](size_t a, size_t b) {
        if (positions_[a] != positions_[b]) return positions_[a] < positions_[b];
        return labels_[a] < labels_[b];
    });
    std::vector<IVec3> pos;
    std::vector<int> lab;
    pos.reserve(positions_.size());
    lab.reserve(labels_.size());
    for (size_t idx : order) {
        if (!pos.empty() && pos.back() == positions_[idx]) {
            if (lab.back() != labels_[idx]) {
                raise(ErrorCode::Malformed, "duplicate position with conflicting labels");
            }
            continue;
        }
        pos.push_back(positions_[idx]);
        lab.push_back(labels_[idx]);
    }
    positions_ = std::move(pos);
    labels_ = std::move(lab);
}

bool SparseVoxelGrid::contains(const IVec3& p) const { return index_of(p) >= 0; }

int64_t SparseVoxelGrid::index_of(const IVec3& p) const {
    auto it = std::lower_bound(positions_.begin(), positions_.end(), p);
    if (it == positions_.end() || *it != p) return -1;
    return it - positions_.begin();
}

int SparseVoxelGrid::label_at(const IVec3& p) const {
    if (!labeled()) raise(ErrorCode::MissingLabels, "grid has no labels");
    int64_t idx = index_of(p);
    if (idx < 0) raise(ErrorCode::OutOfBounds, "position not active");
    return labels_[static_cast<size_t>(idx)];
}

std::vector<int> SparseVoxelGrid::part_ids() const {
    std::vector<int> ids(labels_);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

void LabelMask2D::validate() const {
    if (height <= 0 || width <= 0) raise(ErrorCode::ShapeError, "mask dimensions must be positive");
    if (entries.size() != static_cast<size_t>(height) * width) {
        raise(ErrorCode::ShapeError, "mask entry count mismatch");
    }
    for (int e : entries) {
        if (e < 0 || e >= num_parts) {
            raise(ErrorCode::LabelOverflow,
                  "mask entry " + std::to_string(e) + " outside [0," + std::to_string(num_parts) + ")");
        }
    }
}

TriMesh TriMesh::validated() const {
    TriMesh out;
    out.vertices = vertices;
    const int nv = static_cast<int>(vertices.size());
    for (const auto& tri : triangles) {
        for (int idx : tri) {
            if (idx < 0 || idx >= nv) {
                raise(ErrorCode::OutOfBounds, "triangle index " + std::to_string(idx) +
                                                  " out of range for " + std::to_string(nv) +
                                                  " vertices");
            }
        }
        const Vec3& a = vertices[tri[0]];
        const Vec3& b = vertices[tri[1]];
        const Vec3& c = vertices[tri[2]];
        const Vec3 ab = b - a;
        const Vec3 ac = c - a;
        const Vec3 n = {ab.y * ac.z - ab.z * ac.y, ab.z * ac.x - ab.x * ac.z,
                        ab.x * ac.y - ab.y * ac.x};
        const double area2 = n.x * n.x + n.y * n.y + n.z * n.z;
        if (area2 < 1e-30) continue;  // degenerate
        out.triangles.push_back(tri);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Triangle-box separating axis test (closed boxes: touching counts as overlap)
// ---------------------------------------------------------------------------

namespace {

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline bool axis_separates(const Vec3& axis, const Vec3& v0, const Vec3& v1, const Vec3& v2,
                           const Vec3& half) {
    const double p0 = dot(v0, axis);
    const double p1 = dot(v1, axis);
    const double p2 = dot(v2, axis);
    const double r = half.x * std::fabs(axis.x) + half.y * std::fabs(axis.y) +
                     half.z * std::fabs(axis.z);
    const double lo = std::min(p0, std::min(p1, p2));
    const double hi = std::max(p0, std::max(p1, p2));
    return lo > r || hi < -r;
}

}  // namespace

bool triangle_box_overlap(const Vec3& box_center, const Vec3& box_half, const Vec3& tv0,
                          const Vec3& tv1, const Vec3& tv2) {
    const Vec3 v0 = tv0 - box_center;
    const Vec3 v1 = tv1 - box_center;
    const Vec3 v2 = tv2 - box_center;

    // Box axes.
    const double minx = std::min(v0.x, std::min(v1.x, v2.x));
    const double maxx = std::max(v0.x, std::max(v1.x, v2.x));
    if (minx > box_half.x || maxx < -box_half.x) return false;
    const double miny = std::min(v0.y, std::min(v1.y, v2.y));
    const double maxy = std::max(v0.y, std::max(v1.y, v2.y));
    if (miny > box_half.y || maxy < -box_half.y) return false;
    const double minz = std::min(v0.z, std::min(v1.z, v2.z));
    const double maxz = std::max(v0.z, std::max(v1.z, v2.z));
    if (minz > box_half.z || maxz < -box_half.z) return false;

    const Vec3 f0 = v1 - v0;
    const Vec3 f1 = v2 - v1;
    const Vec3 f2 = v0 - v2;

    // Nine cross-product axes e_i x f_j.
    const Vec3 axes[9] = {
        {0.0, -f0.z, f0.y}, {0.0, -f1.z, f1.y}, {0.0, -f2.z, f2.y},
        {f0.z, 0.0, -f0.x}, {f1.z, 0.0, -f1.x}, {f2.z, 0.0, -f2.x},
        {-f0.y, f0.x, 0.0}, {-f1.y, f1.x, 0.0}, {-f2.y, f2.x, 0.0},
    };
    for (const Vec3& axis : axes) {
        if (axis_separates(axis, v0, v1, v2, box_half)) return false;
    }

    // Triangle plane.
    const Vec3 n = cross(f0, f1);
    if (axis_separates(n, v0, v1, v2, box_half)) return false;

    return true;
}

SparseVoxelGrid voxelize(const TriMesh& mesh, int resolution) {
    if (resolution <= 0) raise(ErrorCode::DomainError, "resolution must be positive");
    const TriMesh m = mesh.validated();
    if (m.empty()) raise(ErrorCode::EmptyInput, "mesh has no non-degenerate triangles");

    constexpr double kBoundEps = 1e-9;
    for (const Vec3& v : m.vertices) {
        if (v.x < -0.5 - kBoundEps || v.x > 0.5 + kBoundEps || v.y < -0.5 - kBoundEps ||
            v.y > 0.5 + kBoundEps || v.z < -0.5 - kBoundEps || v.z > 0.5 + kBoundEps) {
            raise(ErrorCode::OutOfBounds, "mesh vertex outside the unit cube");
        }
    }

    const double cell = 1.0 / resolution;
    const Vec3 half = {0.5 * cell, 0.5 * cell, 0.5 * cell};
    auto cell_index = [&](double coord) {
        int idx = static_cast<int>(std::floor((coord + 0.5) * resolution));
        return std::clamp(idx, 0, resolution - 1);
    };

    std::vector<IVec3> active;
    for (const auto& tri : m.triangles) {
        const Vec3& a = m.vertices[tri[0]];
        const Vec3& b = m.vertices[tri[1]];
        const Vec3& c = m.vertices[tri[2]];
        // Cell range of the triangle AABB, padded by one cell so that
        // boundary-touching cells are decided by the SAT rather than the
        // floor rounding.
        int lo[3], hi[3];
        for (int axis = 0; axis < 3; ++axis) {
            const double mn = std::min(a[axis], std::min(b[axis], c[axis]));
            const double mx = std::max(a[axis], std::max(b[axis], c[axis]));
            lo[axis] = std::max(cell_index(mn) - 1, 0);
            hi[axis] = std::min(cell_index(mx) + 1, resolution - 1);
        }
        for (int x = lo[0]; x <= hi[0]; ++x) {
            for (int y = lo[1]; y <= hi[1]; ++y) {
                for (int z = lo[2]; z <= hi[2]; ++z) {
                    const Vec3 center = {-0.5 + (x + 0.5) * cell, -0.5 + (y + 0.5) * cell,
                                         -0.5 + (z + 0.5) * cell};
                    if (triangle_box_overlap(center, half, a, b, c)) {
                        active.push_back({x, y, z});
                    }
                }
            }
        }
    }
    return SparseVoxelGrid(resolution, std::move(active));
}

SparseVoxelGrid compose(const std::vector<LabeledPart>& parts) {
    if (parts.empty()) return SparseVoxelGrid(0, {}, {});
    const int resolution = parts[0].grid.resolution();
    for (const LabeledPart& part : parts) {
        if (part.grid.resolution() != resolution) {
            raise(ErrorCode::ResolutionMismatch,
                  "part resolutions " + std::to_string(resolution) + " vs " +
                      std::to_string(part.grid.resolution()));
        }
        if (part.part_id < 0) raise(ErrorCode::OutOfBounds, "negative part id");
    }
    // Collect (position, id) and keep the lowest id per position.
    std::vector<std::pair<IVec3, int>> cells;
    for (const LabeledPart& part : parts) {
        for (const IVec3& p : part.grid.positions()) cells.emplace_back(p, part.part_id);
    }
    std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    });
    std::vector<IVec3> positions;
    std::vector<int> labels;
    for (const auto& [p, id] : cells) {
        if (!positions.empty() && positions.back() == p) continue;
        positions.push_back(p);
        labels.push_back(id);
    }
    return SparseVoxelGrid(resolution, std::move(positions), std::move(labels));
}

Aabb part_aabb(const SparseVoxelGrid& grid, int part_id) {
    if (!grid.labeled()) raise(ErrorCode::MissingLabels, "grid has no labels");
    bool found = false;
    Aabb box;
    const auto& positions = grid.positions();
    const auto& labels = grid.labels();
    for (size_t i = 0; i < positions.size(); ++i) {
        if (labels[i] != part_id) continue;
        const IVec3& p = positions[i];
        if (!found) {
            box.min = box.max = p;
            found = true;
        } else {
            box.min.x = std::min(box.min.x, p.x);
            box.min.y = std::min(box.min.y, p.y);
            box.min.z = std::min(box.min.z, p.z);
            box.max.x = std::max(box.max.x, p.x);
            box.max.y = std::max(box.max.y, p.y);
            box.max.z = std::max(box.max.z, p.z);
        }
    }
    if (!found) raise(ErrorCode::UnknownPart, "part id " + std::to_string(part_id));
    return box;
}

std::vector<IVec3> voxels_in_box(const SparseVoxelGrid& grid, const Aabb& box) {
    std::vector<IVec3> out;
    for (const IVec3& p : grid.positions()) {
        if (box.contains(p)) out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Orthographic projection
// ---------------------------------------------------------------------------

namespace {

// In-plane axes (u, v) per view axis; u maps to the pixel column, v to the
// flipped pixel row.
void plane_axes(ViewAxis axis, int& u_axis, int& v_axis) {
    switch (axis) {
        case ViewAxis::X: u_axis = 1; v_axis = 2; return;  // side
        case ViewAxis::Z: u_axis = 0; v_axis = 1; return;  // top/bottom
        case ViewAxis::Y: break;
    }
    u_axis = 0;  // front/back
    v_axis = 2;
}

struct HitResult {
    bool hit = false;
    size_t voxel_index = 0;
    int depth_steps = 0;
};

// Dense index of active voxels for O(1) lookups during the ray march.
std::vector<int64_t> build_dense_index(const SparseVoxelGrid& grid) {
    const size_t n = static_cast<size_t>(grid.resolution());
    std::vector<int64_t> dense(n * n * n, -1);
    const auto& positions = grid.positions();
    for (size_t i = 0; i < positions.size(); ++i) {
        const IVec3& p = positions[i];
        dense[(static_cast<size_t>(p.z) * n + p.y) * n + p.x] = static_cast<int64_t>(i);
    }
    return dense;
}

// First active voxel over the pixel footprint [u_lo,u_hi] x [v_lo,v_hi],
// marching along the view axis. Ties at equal depth resolve to the smallest
// (u, v) scanned.
HitResult march_footprint(const SparseVoxelGrid& grid, const std::vector<int64_t>& dense,
                          const View& view, int u_axis, int v_axis, int u_lo, int u_hi, int v_lo,
                          int v_hi) {
    const int n = grid.resolution();
    const int march_axis = static_cast<int>(view.axis);
    HitResult best;
    for (int step = 0; step < n && !best.hit; ++step) {
        const int a = view.sign < 0 ? n - 1 - step : step;
        for (int u = u_lo; u <= u_hi && !best.hit; ++u) {
            for (int v = v_lo; v <= v_hi; ++v) {
                IVec3 p;
                p[march_axis] = a;
                p[u_axis] = u;
                p[v_axis] = v;
                const int64_t idx =
                    dense[(static_cast<size_t>(p.z) * n + p.y) * n + p.x];
                if (idx >= 0) {
                    best.hit = true;
                    best.voxel_index = static_cast<size_t>(idx);
                    best.depth_steps = step;
                    break;
                }
            }
        }
    }
    return best;
}

void footprint_range(int pixel, int out_extent, int resolution, int& lo, int& hi) {
    lo = static_cast<int>((static_cast<int64_t>(pixel) * resolution) / out_extent);
    hi = static_cast<int>(((static_cast<int64_t>(pixel) + 1) * resolution) / out_extent) - 1;
    if (hi < lo) hi = lo;  // out size larger than the grid
    lo = std::clamp(lo, 0, resolution - 1);
    hi = std::clamp(hi, 0, resolution - 1);
}

}  // namespace

LabelMask2D project_mask(const SparseVoxelGrid& grid, const View& view, int out_h, int out_w,
                         int num_parts) {
    if (!grid.labeled()) raise(ErrorCode::MissingLabels, "project_mask needs a labeled grid");
    if (out_h <= 0 || out_w <= 0) raise(ErrorCode::ShapeError, "mask size must be positive");
    if (num_parts < 2) raise(ErrorCode::DomainError, "num_parts must be at least 2");
    for (int l : grid.labels()) {
        if (l >= num_parts - 1) {
            raise(ErrorCode::LabelOverflow, "part id " + std::to_string(l) +
                                                " collides with background index " +
                                                std::to_string(num_parts - 1));
        }
    }

    LabelMask2D mask;
    mask.height = out_h;
    mask.width = out_w;
    mask.num_parts = num_parts;
    mask.entries.assign(static_cast<size_t>(out_h) * out_w, num_parts - 1);
    if (grid.empty()) return mask;

    int u_axis, v_axis;
    plane_axes(view.axis, u_axis, v_axis);
    const auto dense = build_dense_index(grid);
    const int n = grid.resolution();

    for (int i = 0; i < out_h; ++i) {
        const int v_pix = out_h - 1 - i;
        int v_lo, v_hi;
        footprint_range(v_pix, out_h, n, v_lo, v_hi);
        for (int j = 0; j < out_w; ++j) {
            int u_lo, u_hi;
            footprint_range(j, out_w, n, u_lo, u_hi);
            const HitResult hit =
                march_footprint(grid, dense, view, u_axis, v_axis, u_lo, u_hi, v_lo, v_hi);
            if (hit.hit) mask.at(i, j) = grid.labels()[hit.voxel_index];
        }
    }
    return mask;
}

DepthRender render_depth(const SparseVoxelGrid& grid, const View& view, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) raise(ErrorCode::ShapeError, "render size must be positive");
    DepthRender render;
    render.height = out_h;
    render.width = out_w;
    render.occupancy.assign(static_cast<size_t>(out_h) * out_w, 0.0);
    render.depth.assign(static_cast<size_t>(out_h) * out_w, 1.0);
    if (grid.empty()) return render;

    int u_axis, v_axis;
    plane_axes(view.axis, u_axis, v_axis);
    const auto dense = build_dense_index(grid);
    const int n = grid.resolution();

    for (int i = 0; i < out_h; ++i) {
        const int v_pix = out_h - 1 - i;
        int v_lo, v_hi;
        footprint_range(v_pix, out_h, n, v_lo, v_hi);
        for (int j = 0; j < out_w; ++j) {
            int u_lo, u_hi;
            footprint_range(j, out_w, n, u_lo, u_hi);
            const HitResult hit =
                march_footprint(grid, dense, view, u_axis, v_axis, u_lo, u_hi, v_lo, v_hi);
            if (hit.hit) {
                const size_t px = static_cast<size_t>(i) * out_w + j;
                render.occupancy[px] = 1.0;
                render.depth[px] = static_cast<double>(hit.depth_steps) / n;
            }
        }
    }
    return render;
}

}  // namespace partflow
