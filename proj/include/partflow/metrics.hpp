#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "partflow/voxel.hpp"

namespace partflow::metrics {

// ---------------------------------------------------------------------------
// Box-level planning metrics
// ---------------------------------------------------------------------------

// Overlap ratio under inclusive voxel-index semantics: a 0..2 box spans
// three cells per axis.
double bbox_iou(const Aabb& a, const Aabb& b);

struct Matching {
    std::vector<std::pair<int, int>> pairs;  // (gt index, pred index)
    std::vector<int> unmatched_gt;
    std::vector<int> unmatched_pred;

    double total_iou(const std::vector<Aabb>& gt, const std::vector<Aabb>& pred) const;
};

// One-to-one assignment maximizing total IoU. Overlap-free leftovers are
// paired by mutually nearest centers so every box still gets a counterpart
// while a counterpart exists.
Matching match_boxes(const std::vector<Aabb>& gt, const std::vector<Aabb>& pred);

// Fraction of a part's voxels captured by the predicted box.
double voxel_recall(const std::vector<IVec3>& part_voxels, const Aabb& pred_box);

// IoU of the active-voxel subsets selected by the two boxes; 0 when both
// subsets are empty.
double voxel_iou(const SparseVoxelGrid& grid, const Aabb& gt_box, const Aabb& pred_box);

// Planning scores for one object, averaged over gt boxes (percent).
// Unmatched gt boxes contribute zeros. Grid labels index into gt_boxes.
struct PlanningScores {
    double bbox_iou_pct = 0.0;
    double voxel_recall_pct = 0.0;
    double voxel_iou_pct = 0.0;
};
PlanningScores planning_metrics(const SparseVoxelGrid& gt_grid, const std::vector<Aabb>& gt_boxes,
                                const std::vector<Aabb>& pred_boxes);

// ---------------------------------------------------------------------------
// Point-set geometry
// ---------------------------------------------------------------------------

// Centers on the point AABB and scales its longest edge to exactly 1.0.
struct NormalizeTransform {
    Vec3 center{0, 0, 0};
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
};
NormalizeTransform normalize_transform(const std::vector<Vec3>& points);
std::vector<Vec3> normalize_points(const std::vector<Vec3>& points);

// Symmetric mean nearest-neighbor distance. oracle switches the kd-tree for
// the quadratic scan (same result, used for verification).
double chamfer(const std::vector<Vec3>& p, const std::vector<Vec3>& q, bool oracle = false);

// Harmonic mean of precision/recall at threshold tau (strict <).
double f1_at(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, double tau,
             bool oracle = false);

// k quarter-turns about z: (x, y) -> (-y, x). Exact on doubles.
Vec3 rotate_z(const Vec3& p, int k);
std::vector<Vec3> rotate_z(const std::vector<Vec3>& points, int k);

// Evaluates metric_fn(rotate_z(pred, k), gt) for k in 0..3 and returns the
// best value and the smallest k achieving it.
std::pair<double, int> best_over_rotations(
    const std::function<double(const std::vector<Vec3>&, const std::vector<Vec3>&)>& metric_fn,
    const std::vector<Vec3>& pred, const std::vector<Vec3>& gt, bool minimize);

// ---------------------------------------------------------------------------
// Object-level evaluation
// ---------------------------------------------------------------------------

struct EvalConfig {
    double tau_loose = 0.1;
    double tau_tight = 0.05;
    double unmatched_penalty = 1.0;  // CD charged per gt part without a counterpart
    bool oracle = false;             // quadratic nearest-neighbor search
};

struct ObjectReport {
    std::string id;
    double bbox_iou_pct = 0.0;
    double voxel_recall_pct = 0.0;
    double voxel_iou_pct = 0.0;
    double whole_iou_pct = 0.0;  // IoU of pred/gt active sets, labels ignored
    double overall_cd = 0.0;
    double overall_f1_loose = 0.0;
    double overall_f1_tight = 0.0;
    double part_cd = 0.0;
    double part_f1_loose = 0.0;
    double part_f1_tight = 0.0;
    int best_rotation = 0;
    size_t gt_parts = 0;
    size_t pred_parts = 0;
    bool empty_pred = false;
};

struct Aggregate {
    double bbox_iou_pct = 0.0;
    double voxel_recall_pct = 0.0;
    double voxel_iou_pct = 0.0;
    double whole_iou_pct = 0.0;
    double overall_cd = 0.0;
    double overall_f1_loose = 0.0;
    double overall_f1_tight = 0.0;
    double part_cd = 0.0;
    double part_f1_loose = 0.0;
    double part_f1_tight = 0.0;
    size_t count = 0;
};

struct EvalReport {
    std::vector<ObjectReport> objects;
    Aggregate mean;
};

// Centers of a part's voxels mapped through an object-level transform.
std::vector<Vec3> part_points(const LabeledPart& part, const NormalizeTransform& t);

// Geometric + planning metrics for one object. Boxes default to the parts'
// occupied AABBs; the pipeline passes the planner's actual boxes instead.
ObjectReport evaluate_object(const std::vector<LabeledPart>& pred_parts,
                             const std::vector<LabeledPart>& gt_parts, const EvalConfig& cfg,
                             const std::vector<Aabb>* pred_boxes = nullptr,
                             const std::vector<Aabb>* gt_boxes = nullptr);

// Field-wise means in listing order.
Aggregate aggregate(const std::vector<ObjectReport>& objects);

// Min-cost one-to-one assignment on an n x m matrix; returns the assigned
// column per row (-1 when rows exceed columns). Deterministic.
std::vector<int> assign_min_cost(const std::vector<std::vector<double>>& cost);

}  // namespace partflow::metrics
