#include "partflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <map>
#include <tuple>

namespace partflow::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double vc(const Vec3& v, int axis) { return axis == 0 ? v.x : axis == 1 ? v.y : v.z; }

double dist_sq(const Vec3& a, const Vec3& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}

}  // namespace

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

double bbox_iou(const Aabb& a, const Aabb& b) {
    if (!a.valid() || !b.valid()) raise(ErrorCode::DomainError, "bbox_iou: invalid box");
    Aabb inter{{std::max(a.min.x, b.min.x), std::max(a.min.y, b.min.y),
                std::max(a.min.z, b.min.z)},
               {std::min(a.max.x, b.max.x), std::min(a.max.y, b.max.y),
                std::min(a.max.z, b.max.z)}};
    if (!inter.valid()) return 0.0;
    const double ivol = static_cast<double>(inter.volume());
    const double uvol = static_cast<double>(a.volume()) + static_cast<double>(b.volume()) - ivol;
    return ivol / uvol;
}

double Matching::total_iou(const std::vector<Aabb>& gt, const std::vector<Aabb>& pred) const {
    double total = 0.0;
    for (const auto& [g, p] : pairs) total += bbox_iou(gt[g], pred[p]);
    return total;
}

// Hungarian algorithm with potentials. a must have rows <= cols.
static std::vector<int> hungarian(const std::vector<std::vector<double>>& a, size_t n, size_t m) {
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<size_t> p(m + 1, 0), way(m + 1, 0);
    for (size_t i = 1; i <= n; ++i) {
        p[0] = i;
        size_t j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            size_t i0 = p[j0], j1 = 0;
            double delta = kInf;
            for (size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (size_t j = 1; j <= m; ++j) {
        if (p[j] > 0) row_to_col[p[j] - 1] = static_cast<int>(j) - 1;
    }
    return row_to_col;
}

std::vector<int> assign_min_cost(const std::vector<std::vector<double>>& cost) {
    const size_t n = cost.size();
    if (n == 0) return {};
    const size_t m = cost[0].size();
    for (const auto& row : cost) {
        if (row.size() != m) raise(ErrorCode::ShapeError, "assign_min_cost: ragged matrix");
    }
    if (m == 0) return std::vector<int>(n, -1);
    if (n <= m) return hungarian(cost, n, m);
    // More rows than columns: assign on the transpose and invert.
    std::vector<std::vector<double>> t(m, std::vector<double>(n));
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < m; ++j) t[j][i] = cost[i][j];
    }
    const std::vector<int> col_to_row = hungarian(t, m, n);
    std::vector<int> row_to_col(n, -1);
    for (size_t j = 0; j < m; ++j) {
        if (col_to_row[j] >= 0) row_to_col[col_to_row[j]] = static_cast<int>(j);
    }
    return row_to_col;
}

Matching match_boxes(const std::vector<Aabb>& gt, const std::vector<Aabb>& pred) {
    Matching out;
    const size_t n = gt.size(), m = pred.size();
    std::vector<char> gt_used(n, 0), pred_used(m, 0);

    if (n > 0 && m > 0) {
        std::vector<std::vector<double>> cost(n, std::vector<double>(m));
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j < m; ++j) cost[i][j] = 1.0 - bbox_iou(gt[i], pred[j]);
        }
        const std::vector<int> assigned = assign_min_cost(cost);
        for (size_t i = 0; i < n; ++i) {
            const int j = assigned[i];
            if (j >= 0 && bbox_iou(gt[i], pred[j]) > 0.0) {
                out.pairs.emplace_back(static_cast<int>(i), j);
                gt_used[i] = 1;
                pred_used[j] = 1;
            }
        }
        // Whatever overlap-free boxes remain get paired by centers. The
        // globally closest remaining pair is always mutually nearest.
        while (true) {
            double best = kInf;
            int bi = -1, bj = -1;
            for (size_t i = 0; i < n; ++i) {
                if (gt_used[i]) continue;
                for (size_t j = 0; j < m; ++j) {
                    if (pred_used[j]) continue;
                    const double d = dist_sq(gt[i].center(), pred[j].center());
                    if (d < best) {
                        best = d;
                        bi = static_cast<int>(i);
                        bj = static_cast<int>(j);
                    }
                }
            }
            if (bi < 0) break;
            out.pairs.emplace_back(bi, bj);
            gt_used[bi] = 1;
            pred_used[bj] = 1;
        }
    }

    std::sort(out.pairs.begin(), out.pairs.end());
    for (size_t i = 0; i < n; ++i) {
        if (!gt_used[i]) out.unmatched_gt.push_back(static_cast<int>(i));
    }
    for (size_t j = 0; j < m; ++j) {
        if (!pred_used[j]) out.unmatched_pred.push_back(static_cast<int>(j));
    }
    return out;
}

double voxel_recall(const std::vector<IVec3>& part_voxels, const Aabb& pred_box) {
    if (part_voxels.empty()) raise(ErrorCode::EmptyPart, "voxel_recall: part has no voxels");
    size_t inside = 0;
    for (const IVec3& p : part_voxels) inside += pred_box.contains(p) ? 1 : 0;
    return static_cast<double>(inside) / static_cast<double>(part_voxels.size());
}

double voxel_iou(const SparseVoxelGrid& grid, const Aabb& gt_box, const Aabb& pred_box) {
    const std::vector<IVec3> a = voxels_in_box(grid, gt_box);
    const std::vector<IVec3> b = voxels_in_box(grid, pred_box);
    if (a.empty() && b.empty()) return 0.0;
    size_t inter = 0, ia = 0, ib = 0;
    while (ia < a.size() && ib < b.size()) {
        if (a[ia] == b[ib]) {
            ++inter;
            ++ia;
            ++ib;
        } else if (a[ia] < b[ib]) {
            ++ia;
        } else {
            ++ib;
        }
    }
    const size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

PlanningScores planning_metrics(const SparseVoxelGrid& gt_grid, const std::vector<Aabb>& gt_boxes,
                                const std::vector<Aabb>& pred_boxes) {
    if (gt_boxes.empty()) raise(ErrorCode::EmptyInput, "planning_metrics: no gt boxes");
    if (!gt_grid.labeled()) raise(ErrorCode::MissingLabels, "planning_metrics: unlabeled grid");

    std::vector<std::vector<IVec3>> part_voxels(gt_boxes.size());
    for (size_t i = 0; i < gt_grid.size(); ++i) {
        const int label = gt_grid.labels()[i];
        if (label < 0 || static_cast<size_t>(label) >= gt_boxes.size()) {
            raise(ErrorCode::LabelOverflow, "planning_metrics: label outside the box list");
        }
        part_voxels[label].push_back(gt_grid.positions()[i]);
    }

    const Matching matching = match_boxes(gt_boxes, pred_boxes);
    PlanningScores scores;
    for (const auto& [g, p] : matching.pairs) {
        scores.bbox_iou_pct += bbox_iou(gt_boxes[g], pred_boxes[p]);
        if (!part_voxels[g].empty()) {
            scores.voxel_recall_pct += voxel_recall(part_voxels[g], pred_boxes[p]);
        }
        scores.voxel_iou_pct += voxel_iou(gt_grid, gt_boxes[g], pred_boxes[p]);
    }
    const double denom = static_cast<double>(gt_boxes.size());
    scores.bbox_iou_pct *= 100.0 / denom;
    scores.voxel_recall_pct *= 100.0 / denom;
    scores.voxel_iou_pct *= 100.0 / denom;
    return scores;
}

// ---------------------------------------------------------------------------
// Point sets
// ---------------------------------------------------------------------------

NormalizeTransform normalize_transform(const std::vector<Vec3>& points) {
    if (points.empty()) raise(ErrorCode::EmptyInput, "normalize: no points");
    Vec3 lo = points[0], hi = points[0];
    for (const Vec3& p : points) {
        lo.x = std::min(lo.x, p.x);
        lo.y = std::min(lo.y, p.y);
        lo.z = std::min(lo.z, p.z);
        hi.x = std::max(hi.x, p.x);
        hi.y = std::max(hi.y, p.y);
        hi.z = std::max(hi.z, p.z);
    }
    const double extent = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    if (extent <= 0.0) raise(ErrorCode::DegenerateShape, "normalize: zero extent");
    return {{0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), 0.5 * (lo.z + hi.z)}, 1.0 / extent};
}

std::vector<Vec3> normalize_points(const std::vector<Vec3>& points) {
    const NormalizeTransform t = normalize_transform(points);
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const Vec3& p : points) out.push_back(t.apply(p));
    return out;
}

namespace {

// Median-split kd-tree. Tie handling inside nth_element cannot change the
// nearest distance, only which equally-near point realizes it.
class KdTree {
public:
    explicit KdTree(std::vector<Vec3> points) : pts_(std::move(points)) {
        if (pts_.empty()) raise(ErrorCode::EmptyInput, "kd-tree: no points");
        index_.resize(pts_.size());
        for (size_t i = 0; i < index_.size(); ++i) index_[i] = static_cast<int>(i);
        nodes_.reserve(pts_.size());
        root_ = build(0, static_cast<int>(pts_.size()), 0);
    }

    double nearest_sq(const Vec3& q) const {
        double best = kInf;
        search(root_, q, best);
        return best;
    }

private:
    struct Node {
        int point;
        int left = -1;
        int right = -1;
        int axis;
    };

    int build(int lo, int hi, int depth) {
        if (lo >= hi) return -1;
        const int axis = depth % 3;
        const int mid = (lo + hi) / 2;
        std::nth_element(index_.begin() + lo, index_.begin() + mid, index_.begin() + hi,
                         [&](int a, int b) { return vc(pts_[a], axis) < vc(pts_[b], axis); });
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back({index_[mid], -1, -1, axis});
        nodes_[id].left = build(lo, mid, depth + 1);
        nodes_[id].right = build(mid + 1, hi, depth + 1);
        return id;
    }

    void search(int id, const Vec3& q, double& best) const {
        if (id < 0) return;
        const Node& n = nodes_[id];
        const double d = dist_sq(pts_[n.point], q);
        if (d < best) best = d;
        const double delta = vc(q, n.axis) - vc(pts_[n.point], n.axis);
        const int near_side = delta < 0.0 ? n.left : n.right;
        const int far_side = delta < 0.0 ? n.right : n.left;
        search(near_side, q, best);
        if (delta * delta < best) search(far_side, q, best);
    }

    std::vector<Vec3> pts_;
    std::vector<int> index_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

std::vector<double> nn_distances(const std::vector<Vec3>& from, const std::vector<Vec3>& to,
                                 bool oracle) {
    std::vector<double> out(from.size());
    if (oracle) {
        for (size_t i = 0; i < from.size(); ++i) {
            double best = kInf;
            for (const Vec3& t : to) best = std::min(best, dist_sq(from[i], t));
            out[i] = std::sqrt(best);
        }
        return out;
    }
    KdTree tree(to);
    for (size_t i = 0; i < from.size(); ++i) out[i] = std::sqrt(tree.nearest_sq(from[i]));
    return out;
}

}  // namespace

double chamfer(const std::vector<Vec3>& p, const std::vector<Vec3>& q, bool oracle) {
    if (p.empty() || q.empty()) raise(ErrorCode::EmptyInput, "chamfer: empty point set");
    double forward = 0.0, backward = 0.0;
    for (double d : nn_distances(p, q, oracle)) forward += d;
    for (double d : nn_distances(q, p, oracle)) backward += d;
    return 0.5 * (forward / static_cast<double>(p.size()) + backward / static_cast<double>(q.size()));
}

double f1_at(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, double tau, bool oracle) {
    if (pred.empty() || gt.empty()) raise(ErrorCode::EmptyInput, "f1_at: empty point set");
    if (tau <= 0.0) raise(ErrorCode::DomainError, "f1_at: threshold must be positive");
    size_t p_hit = 0, g_hit = 0;
    for (double d : nn_distances(pred, gt, oracle)) p_hit += d < tau ? 1 : 0;
    for (double d : nn_distances(gt, pred, oracle)) g_hit += d < tau ? 1 : 0;
    const double precision = static_cast<double>(p_hit) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(g_hit) / static_cast<double>(gt.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

Vec3 rotate_z(const Vec3& p, int k) {
    Vec3 out = p;
    const int turns = ((k % 4) + 4) % 4;
    for (int i = 0; i < turns; ++i) out = {-out.y, out.x, out.z};
    return out;
}

std::vector<Vec3> rotate_z(const std::vector<Vec3>& points, int k) {
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const Vec3& p : points) out.push_back(rotate_z(p, k));
    return out;
}

std::pair<double, int> best_over_rotations(
    const std::function<double(const std::vector<Vec3>&, const std::vector<Vec3>&)>& metric_fn,
    const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, bool minimize) {
    double best_value = 0.0;
    int best_k = -1;
    for (int k = 0; k < 4; ++k) {
        const double value = metric_fn(rotate_z(pred, k), gt);
        const bool better = best_k < 0 || (minimize ? value < best_value : value > best_value);
        if (better) {
            best_value = value;
            best_k = k;
        }
    }
    return {best_value, best_k};
}

// ---------------------------------------------------------------------------
// Object evaluation
// ---------------------------------------------------------------------------

std::vector<Vec3> part_points(const LabeledPart& part, const NormalizeTransform& t) {
    std::vector<Vec3> out;
    out.reserve(part.grid.size());
    for (const IVec3& p : part.grid.positions()) {
        out.push_back(t.apply({p.x + 0.5, p.y + 0.5, p.z + 0.5}));
    }
    return out;
}

namespace {

// Occupied box per part id; requires ids to be exactly 0..P-1.
std::vector<Aabb> boxes_from_parts(const std::vector<LabeledPart>& parts) {
    int max_id = -1;
    for (const LabeledPart& p : parts) max_id = std::max(max_id, p.part_id);
    std::vector<Aabb> boxes(static_cast<size_t>(max_id + 1));
    std::vector<char> seen(boxes.size(), 0);
    for (const LabeledPart& p : parts) {
        if (p.part_id < 0 || p.grid.empty()) {
            raise(ErrorCode::Malformed, "part box: empty part or negative id");
        }
        if (seen[p.part_id]) raise(ErrorCode::Malformed, "part box: duplicate part id");
        seen[p.part_id] = 1;
        IVec3 lo = p.grid.positions()[0], hi = lo;
        for (const IVec3& v : p.grid.positions()) {
            lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
            hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
        }
        boxes[p.part_id] = {lo, hi};
    }
    for (char s : seen) {
        if (!s) raise(ErrorCode::Malformed, "part box: part ids not contiguous");
    }
    return boxes;
}

std::vector<Vec3> merged_points(const std::vector<LabeledPart>& parts) {
    std::vector<Vec3> out;
    for (const LabeledPart& p : parts) {
        for (const IVec3& v : p.grid.positions()) out.push_back({v.x + 0.5, v.y + 0.5, v.z + 0.5});
    }
    return out;
}

}  // namespace

ObjectReport evaluate_object(const std::vector<LabeledPart>& pred_parts,
                             const std::vector<LabeledPart>& gt_parts, const EvalConfig& cfg,
                             const std::vector<Aabb>* pred_boxes,
                             const std::vector<Aabb>* gt_boxes) {
    if (gt_parts.empty()) raise(ErrorCode::EmptyInput, "evaluate_object: no gt parts");

    std::vector<LabeledPart> pred_live;
    for (const LabeledPart& p : pred_parts) {
        if (!p.grid.empty()) pred_live.push_back(p);
    }
    std::sort(pred_live.begin(), pred_live.end(),
              [](const LabeledPart& a, const LabeledPart& b) { return a.part_id < b.part_id; });

    ObjectReport report;
    report.gt_parts = gt_parts.size();
    report.pred_parts = pred_live.size();

    // Planning metrics run off the boxes and the gt grid alone, so they
    // survive an empty or degenerate prediction.
    const SparseVoxelGrid gt_grid = compose(gt_parts);
    const std::vector<Aabb> gt_box_list = gt_boxes ? *gt_boxes : boxes_from_parts(gt_parts);
    std::vector<Aabb> pred_box_list;
    if (pred_boxes) {
        pred_box_list = *pred_boxes;
    } else {
        for (const LabeledPart& p : pred_live) {
            IVec3 lo = p.grid.positions()[0], hi = lo;
            for (const IVec3& v : p.grid.positions()) {
                lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
                hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
            }
            pred_box_list.push_back({lo, hi});
        }
    }
    const PlanningScores planning = planning_metrics(gt_grid, gt_box_list, pred_box_list);
    report.bbox_iou_pct = planning.bbox_iou_pct;
    report.voxel_recall_pct = planning.voxel_recall_pct;
    report.voxel_iou_pct = planning.voxel_iou_pct;

    if (!pred_live.empty()) {
        const SparseVoxelGrid pred_grid = compose(pred_live);
        auto before = [](const IVec3& a, const IVec3& b) {
            return std::tie(a.z, a.y, a.x) < std::tie(b.z, b.y, b.x);
        };
        std::vector<IVec3> common;
        std::set_intersection(gt_grid.positions().begin(), gt_grid.positions().end(),
                              pred_grid.positions().begin(), pred_grid.positions().end(),
                              std::back_inserter(common), before);
        const double uni = static_cast<double>(gt_grid.size() + pred_grid.size() - common.size());
        report.whole_iou_pct = 100.0 * static_cast<double>(common.size()) / uni;
    }

    const std::vector<Vec3> gt_raw = merged_points(gt_parts);
    const NormalizeTransform gt_t = normalize_transform(gt_raw);

    auto sentinel = [&]() {
        report.empty_pred = true;
        report.overall_cd = cfg.unmatched_penalty;
        report.part_cd = cfg.unmatched_penalty;
        return report;
    };
    if (pred_live.empty()) return sentinel();
    NormalizeTransform pred_t;
    try {
        pred_t = normalize_transform(merged_points(pred_live));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::DegenerateShape) return sentinel();
        throw;
    }

    std::vector<Vec3> gt_pts;
    std::vector<std::vector<Vec3>> gt_part_pts;
    for (const LabeledPart& p : gt_parts) {
        gt_part_pts.push_back(part_points(p, gt_t));
        gt_pts.insert(gt_pts.end(), gt_part_pts.back().begin(), gt_part_pts.back().end());
    }
    std::vector<Vec3> pred_pts;
    std::vector<std::vector<Vec3>> pred_part_pts;
    for (const LabeledPart& p : pred_live) {
        pred_part_pts.push_back(part_points(p, pred_t));
        pred_pts.insert(pred_pts.end(), pred_part_pts.back().begin(), pred_part_pts.back().end());
    }

    auto cd_fn = [&cfg](const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
        return chamfer(a, b, cfg.oracle);
    };
    const auto [overall_cd, best_k] = best_over_rotations(cd_fn, pred_pts, gt_pts, true);
    report.overall_cd = overall_cd;
    report.best_rotation = best_k;

    const std::vector<Vec3> pred_rot = rotate_z(pred_pts, best_k);
    report.overall_f1_loose = f1_at(pred_rot, gt_pts, cfg.tau_loose, cfg.oracle);
    report.overall_f1_tight = f1_at(pred_rot, gt_pts, cfg.tau_tight, cfg.oracle);

    // Part pairing: optimal assignment on chamfer at the winning rotation.
    for (auto& pts : pred_part_pts) pts = rotate_z(pts, best_k);
    std::vector<std::vector<double>> cost(gt_part_pts.size(),
                                          std::vector<double>(pred_part_pts.size()));
    for (size_t i = 0; i < gt_part_pts.size(); ++i) {
        for (size_t j = 0; j < pred_part_pts.size(); ++j) {
            cost[i][j] = chamfer(pred_part_pts[j], gt_part_pts[i], cfg.oracle);
        }
    }
    const std::vector<int> assigned = assign_min_cost(cost);
    double cd_total = 0.0, f1l_total = 0.0, f1t_total = 0.0;
    for (size_t i = 0; i < gt_part_pts.size(); ++i) {
        const int j = assigned[i];
        if (j < 0) {
            cd_total += cfg.unmatched_penalty;
            continue;
        }
        cd_total += cost[i][j];
        f1l_total += f1_at(pred_part_pts[j], gt_part_pts[i], cfg.tau_loose, cfg.oracle);
        f1t_total += f1_at(pred_part_pts[j], gt_part_pts[i], cfg.tau_tight, cfg.oracle);
    }
    const double denom = static_cast<double>(gt_part_pts.size());
    report.part_cd = cd_total / denom;
    report.part_f1_loose = f1l_total / denom;
    report.part_f1_tight = f1t_total / denom;
    return report;
}

Aggregate aggregate(const std::vector<ObjectReport>& objects) {
    Aggregate mean;
    mean.count = objects.size();
    if (objects.empty()) return mean;
    for (const ObjectReport& r : objects) {
        mean.bbox_iou_pct += r.bbox_iou_pct;
        mean.voxel_recall_pct += r.voxel_recall_pct;
        mean.voxel_iou_pct += r.voxel_iou_pct;
        mean.whole_iou_pct += r.whole_iou_pct;
        mean.overall_cd += r.overall_cd;
        mean.overall_f1_loose += r.overall_f1_loose;
        mean.overall_f1_tight += r.overall_f1_tight;
        mean.part_cd += r.part_cd;
        mean.part_f1_loose += r.part_f1_loose;
        mean.part_f1_tight += r.part_f1_tight;
    }
    const double n = static_cast<double>(objects.size());
    mean.bbox_iou_pct /= n;
    mean.voxel_recall_pct /= n;
    mean.voxel_iou_pct /= n;
    mean.whole_iou_pct /= n;
    mean.overall_cd /= n;
    mean.overall_f1_loose /= n;
    mean.overall_f1_tight /= n;
    mean.part_cd /= n;
    mean.part_f1_loose /= n;
    mean.part_f1_tight /= n;
    return mean;
}

}  // namespace partflow::metrics
