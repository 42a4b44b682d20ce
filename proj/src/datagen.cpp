#include "partflow/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>

namespace partflow::datagen {

namespace {

bool cell_inside(const Primitive& prim, const IVec3& p) {
    const double dx = p.x - prim.center.x;
    const double dy = p.y - prim.center.y;
    const double dz = p.z - prim.center.z;
    const double rx = prim.half.x + 0.5;
    const double ry = prim.half.y + 0.5;
    const double rz = prim.half.z + 0.5;
    switch (prim.kind) {
        case PrimitiveKind::Box:
            return std::abs(dx) <= prim.half.x && std::abs(dy) <= prim.half.y &&
                   std::abs(dz) <= prim.half.z;
        case PrimitiveKind::Sphere: {
            const double q = (dx / rx) * (dx / rx) + (dy / ry) * (dy / ry) + (dz / rz) * (dz / rz);
            return q <= 1.0;
        }
        case PrimitiveKind::Cylinder: {
            double a = dx / rx, b = dy / ry, axial = dz, span = prim.half.z;
            if (prim.axis == 0) {
                a = dy / ry;
                b = dz / rz;
                axial = dx;
                span = prim.half.x;
            } else if (prim.axis == 1) {
                a = dx / rx;
                b = dz / rz;
                axial = dy;
                span = prim.half.y;
            }
            return a * a + b * b <= 1.0 && std::abs(axial) <= span;
        }
    }
    return false;
}

int64_t pack(const IVec3& p) {
    return (static_cast<int64_t>(p.x) << 42) | (static_cast<int64_t>(p.y) << 21) |
           static_cast<int64_t>(p.z);
}

bool connected26(const SparseVoxelGrid& grid) {
    const std::vector<IVec3>& pos = grid.positions();
    if (pos.empty()) return false;
    std::map<int64_t, bool> seen;
    std::deque<IVec3> frontier{pos.front()};
    seen[pack(pos.front())] = true;
    size_t reached = 1;
    while (!frontier.empty()) {
        const IVec3 p = frontier.front();
        frontier.pop_front();
        for (int dz = -1; dz <= 1; ++dz) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0 && dz == 0) continue;
                    const IVec3 q{p.x + dx, p.y + dy, p.z + dz};
                    if (!grid.contains(q)) continue;
                    auto [it, fresh] = seen.try_emplace(pack(q), true);
                    (void)it;
                    if (fresh) {
                        ++reached;
                        frontier.push_back(q);
                    }
                }
            }
        }
    }
    return reached == pos.size();
}

size_t count_noise_voxels(const SparseVoxelGrid& grid) {
    size_t noise = 0;
    for (int id : grid.part_ids()) {
        for (const IVec3& p : voxels_in_box(grid, part_aabb(grid, id))) {
            noise += grid.label_at(p) != id ? 1 : 0;
        }
    }
    return noise;
}

// One merge map besides the identity: parts attached deeper than the root's
// direct children collapse into their anchor's group; if nothing collapses
// (a pure star), the last part folds into its anchor instead.
std::vector<int> coarse_map(const std::vector<int>& anchors) {
    const size_t n = anchors.size();
    std::vector<int> group(n);
    std::iota(group.begin(), group.end(), 0);
    bool merged = false;
    for (size_t k = 1; k < n; ++k) {
        if (anchors[k] > 0) {
            group[k] = group[static_cast<size_t>(anchors[k])];
            merged = true;
        }
    }
    if (!merged && n >= 2) group[n - 1] = group[static_cast<size_t>(anchors[n - 1])];
    // renumber contiguously in first-appearance order
    std::vector<int> remap(n, -1);
    int next = 0;
    for (size_t k = 0; k < n; ++k) {
        if (remap[static_cast<size_t>(group[k])] < 0) remap[static_cast<size_t>(group[k])] = next++;
        group[k] = remap[static_cast<size_t>(group[k])];
    }
    return group;
}

struct Assembly {
    std::vector<Primitive> parts;
    std::vector<int> anchors;
    SparseVoxelGrid grid;
};

bool try_assemble(Rng& rng, int part_count, int resolution, Assembly& out) {
    std::vector<Primitive> parts;
    std::vector<int> anchors;
    std::vector<std::vector<IVec3>> cells;

    auto random_half = [&rng]() {
        return IVec3{rng.uniform_int(1, 3), rng.uniform_int(1, 3), rng.uniform_int(1, 3)};
    };
    auto random_kind = [&rng]() {
        const int pick = rng.uniform_int(0, 2);
        return pick == 0 ? PrimitiveKind::Box
                         : (pick == 1 ? PrimitiveKind::Sphere : PrimitiveKind::Cylinder);
    };
    auto in_bounds = [&](const Primitive& prim) {
        for (int a = 0; a < 3; ++a) {
            if (prim.center[a] - prim.half[a] < 0 ||
                prim.center[a] + prim.half[a] >= resolution) {
                return false;
            }
        }
        return true;
    };

    Primitive root;
    root.kind = random_kind();
    root.half = random_half();
    const int mid = resolution / 2;
    root.center = {mid + rng.uniform_int(-2, 2), mid + rng.uniform_int(-2, 2),
                   mid + rng.uniform_int(-2, 2)};
    root.axis = rng.uniform_int(0, 2);
    if (!in_bounds(root)) return false;
    parts.push_back(root);
    anchors.push_back(-1);
    cells.push_back(voxelize_primitive(root, resolution));

    for (int k = 1; k < part_count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            const int j = rng.uniform_int(0, k - 1);
            const int axis = rng.uniform_int(0, 2);
            const int dir = rng.uniform_int(0, 1) == 0 ? -1 : 1;
            const int overlap = rng.uniform_int(1, 2);

            Primitive prim;
            prim.kind = random_kind();
            prim.half = random_half();
            prim.axis = rng.uniform_int(0, 2);
            prim.center = parts[static_cast<size_t>(j)].center;
            prim.center[axis] += dir * (parts[static_cast<size_t>(j)].half[axis] +
                                        prim.half[axis] + 1 - overlap);
            for (int a = 0; a < 3; ++a) {
                if (a == axis) continue;
                prim.center[a] += rng.uniform_int(-1, 1);
            }
            if (!in_bounds(prim)) continue;

            std::vector<IVec3> fresh = voxelize_primitive(prim, resolution);
            size_t shared = 0;
            for (const IVec3& p : fresh) {
                for (const IVec3& q : cells[static_cast<size_t>(j)]) {
                    if (p == q) {
                        ++shared;
                        break;
                    }
                }
            }
            // interpenetrate, but never swallow the new part
            if (shared < 1 || shared * 2 >= fresh.size()) continue;
            parts.push_back(prim);
            anchors.push_back(j);
            cells.push_back(std::move(fresh));
            placed = true;
        }
        if (!placed) return false;
    }

    std::vector<LabeledPart> labeled;
    for (size_t k = 0; k < cells.size(); ++k) {
        labeled.push_back({static_cast<int>(k), SparseVoxelGrid(resolution, cells[k])});
    }
    SparseVoxelGrid grid = compose(labeled);

    // every part must survive composition with a few cells of its own
    std::vector<size_t> kept(parts.size(), 0);
    for (int label : grid.labels()) ++kept[static_cast<size_t>(label)];
    for (size_t count : kept) {
        if (count < 2) return false;
    }
    if (!connected26(grid)) return false;
    if (count_noise_voxels(grid) == 0) return false;

    out.parts = std::move(parts);
    out.anchors = std::move(anchors);
    out.grid = std::move(grid);
    return true;
}

}  // namespace

std::vector<IVec3> voxelize_primitive(const Primitive& prim, int resolution) {
    if (prim.half.x < 1 || prim.half.y < 1 || prim.half.z < 1) {
        raise(ErrorCode::DomainError, "primitive half extents must be >= 1");
    }
    std::vector<IVec3> cells;
    for (int z = std::max(0, prim.center.z - prim.half.z);
         z <= std::min(resolution - 1, prim.center.z + prim.half.z); ++z) {
        for (int y = std::max(0, prim.center.y - prim.half.y);
             y <= std::min(resolution - 1, prim.center.y + prim.half.y); ++y) {
            for (int x = std::max(0, prim.center.x - prim.half.x);
                 x <= std::min(resolution - 1, prim.center.x + prim.half.x); ++x) {
                if (cell_inside(prim, {x, y, z})) cells.push_back({x, y, z});
            }
        }
    }
    return cells;
}

GeneratedObject generate_object(uint64_t seed, int min_parts, int max_parts, int resolution) {
    if (min_parts < 2 || max_parts < min_parts) {
        raise(ErrorCode::DomainError, "part count range must start at 2");
    }
    if (resolution < 16) raise(ErrorCode::DomainError, "assembly needs resolution >= 16");

    for (int round = 0; round < 32; ++round) {
        Rng rng(derive_seed(seed, "datagen.object") + 0x9e3779b97f4a7c15ull * round);
        const int count = rng.uniform_int(min_parts, max_parts);
        Assembly assembly;
        if (!try_assemble(rng, count, resolution, assembly)) continue;

        GeneratedObject out;
        out.object.parts = std::move(assembly.parts);
        out.object.anchors = std::move(assembly.anchors);
        std::vector<int> identity(out.object.parts.size());
        std::iota(identity.begin(), identity.end(), 0);
        out.object.granularities.push_back(identity);
        out.object.granularities.push_back(coarse_map(out.object.anchors));
        out.grid = std::move(assembly.grid);
        return out;
    }
    raise(ErrorCode::GenerationFailed,
          "no valid assembly for seed " + std::to_string(seed));
}

SparseVoxelGrid apply_granularity(const SparseVoxelGrid& grid, const std::vector<int>& merge_map) {
    if (!grid.labeled()) raise(ErrorCode::MissingLabels, "granularity needs part labels");
    std::vector<int> labels;
    labels.reserve(grid.labels().size());
    for (int label : grid.labels()) {
        if (label < 0 || static_cast<size_t>(label) >= merge_map.size()) {
            raise(ErrorCode::UnknownPart, "label outside the merge map");
        }
        labels.push_back(merge_map[static_cast<size_t>(label)]);
    }
    // renumber in case the map skips ids
    std::map<int, int> remap;
    for (int label : labels) remap.try_emplace(label, 0);
    int next = 0;
    for (auto& [from, to] : remap) to = next++;
    for (int& label : labels) label = remap[label];
    return SparseVoxelGrid(grid.resolution(), grid.positions(), std::move(labels));
}

std::vector<Aabb> part_boxes(const SparseVoxelGrid& grid) {
    const std::vector<int> ids = grid.part_ids();
    if (ids.empty()) raise(ErrorCode::EmptyInput, "no parts to box");
    for (size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] != static_cast<int>(k)) {
            raise(ErrorCode::Malformed, "part ids must be contiguous from 0");
        }
    }
    std::vector<Aabb> boxes;
    for (int id : ids) boxes.push_back(part_aabb(grid, id));
    return boxes;
}

TrainingPairS1 make_pair_s1(const SparseVoxelGrid& grid, int mask_hw, int num_parts) {
    TrainingPairS1 out;
    out.boxes = canonicalize(part_boxes(grid));
    out.seq = tokenize(out.boxes, grid.resolution());
    out.mask = project_mask(grid, View{}, mask_hw, mask_hw, num_parts);
    return out;
}

TrainingPairS2 make_pair_s2(const SparseVoxelGrid& grid, double alpha, int D, uint64_t seed) {
    TrainingPairS2 out;
    out.boxes = part_boxes(grid);
    out.targets = synth::build_targets(grid, out.boxes, alpha, D, seed);

    size_t total = 0;
    size_t noise = 0;
    const size_t dc = static_cast<size_t>(D);
    for (const synth::PartTokens& part : out.targets.parts) {
        total += part.positions.size();
        for (size_t i = 0; i < part.positions.size(); ++i) {
            noise += part.latent.at(i, dc) < 0.0 ? 1 : 0;
        }
    }
    out.noise_fraction = total == 0 ? 0.0 : static_cast<double>(noise) / static_cast<double>(total);
    return out;
}

SplitManifest split_corpus(const std::vector<int>& part_counts, double train_ratio,
                           double val_ratio, double test_ratio, uint64_t seed) {
    if (part_counts.empty()) raise(ErrorCode::EmptyInput, "nothing to split");
    if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0 ||
        std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
        raise(ErrorCode::DomainError, "split ratios must be nonnegative and sum to 1");
    }
    auto bucket_of = [](int parts) {
        if (parts <= 3) return 0;
        if (parts <= 6) return 1;
        if (parts <= 9) return 2;
        return 3;
    };
    std::vector<std::vector<int>> buckets(4);
    for (size_t i = 0; i < part_counts.size(); ++i) {
        buckets[static_cast<size_t>(bucket_of(part_counts[i]))].push_back(static_cast<int>(i));
    }

    Rng rng(derive_seed(seed, "datagen.split"));
    SplitManifest out;
    const double ratios[3] = {train_ratio, val_ratio, test_ratio};
    std::vector<int>* splits[3] = {&out.train, &out.val, &out.test};

    // Global counts by largest remainder, then per-bucket floors; each
    // bucket's leftover slots go to the splits still owed objects globally,
    // keeping every bucket within one object of its ratio share.
    size_t global_take[3];
    {
        const double n = static_cast<double>(part_counts.size());
        double frac[3];
        size_t assigned = 0;
        for (int s = 0; s < 3; ++s) {
            const double want = ratios[s] * n;
            global_take[s] = static_cast<size_t>(std::floor(want));
            frac[s] = want - std::floor(want);
            assigned += global_take[s];
        }
        while (assigned < part_counts.size()) {
            int best = 0;
            for (int s = 1; s < 3; ++s) {
                if (frac[s] > frac[best]) best = s;
            }
            ++global_take[best];
            frac[best] = -1.0;
            ++assigned;
        }
    }
    size_t deficit[3];
    std::vector<std::array<size_t, 3>> take(buckets.size());
    std::vector<std::array<double, 3>> frac(buckets.size());
    for (int s = 0; s < 3; ++s) deficit[s] = global_take[s];
    for (size_t b = 0; b < buckets.size(); ++b) {
        for (int s = 0; s < 3; ++s) {
            const double want = ratios[s] * static_cast<double>(buckets[b].size());
            take[b][s] = static_cast<size_t>(std::floor(want));
            frac[b][s] = want - std::floor(want);
            deficit[s] -= std::min(deficit[s], take[b][s]);
        }
    }
    for (size_t b = 0; b < buckets.size(); ++b) {
        size_t assigned = take[b][0] + take[b][1] + take[b][2];
        std::array<size_t, 3> extra{0, 0, 0};
        while (assigned < buckets[b].size()) {
            int best = -1;
            for (int s = 0; s < 3; ++s) {
                if (deficit[s] == 0 || extra[s] > 0) continue;
                if (best < 0 || deficit[s] > deficit[best] ||
                    (deficit[s] == deficit[best] && frac[b][s] > frac[b][best])) {
                    best = s;
                }
            }
            if (best < 0) {  // every owed split already took its slot here
                for (int s = 0; s < 3; ++s) {
                    if (deficit[s] > 0 && (best < 0 || deficit[s] > deficit[best])) best = s;
                }
            }
            ++take[b][best];
            ++extra[static_cast<size_t>(best)];
            --deficit[best];
            ++assigned;
        }
    }

    for (size_t b = 0; b < buckets.size(); ++b) {
        std::vector<int>& bucket = buckets[b];
        if (bucket.empty()) continue;
        for (size_t i = bucket.size(); i > 1; --i) {
            std::swap(bucket[i - 1], bucket[static_cast<size_t>(rng.uniform_int(
                                         0, static_cast<int>(i) - 1))]);
        }
        size_t cursor = 0;
        for (int s = 0; s < 3; ++s) {
            for (size_t i = 0; i < take[b][s]; ++i) splits[s]->push_back(bucket[cursor++]);
        }
    }
    for (int s = 0; s < 3; ++s) {
        if (ratios[s] > 0.0 && splits[s]->empty()) {
            raise(ErrorCode::StratificationError,
                  "corpus too small to populate every requested split");
        }
        std::sort(splits[s]->begin(), splits[s]->end());
    }
    return out;
}

}  // namespace partflow::datagen
