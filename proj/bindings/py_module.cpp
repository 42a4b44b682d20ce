// Python bindings for the core operations: voxel grids, the box token codec,
// procedural object generation, masks, metrics, and corpus writing.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <utility>
#include <vector>

#include "partflow/box_codec.hpp"
#include "partflow/config.hpp"
#include "partflow/corpus.hpp"
#include "partflow/datagen.hpp"
#include "partflow/metrics.hpp"
#include "partflow/planner.hpp"
#include "partflow/synthesizer.hpp"
#include "partflow/voxel.hpp"

namespace py = pybind11;
using namespace partflow;

namespace {

using I3 = std::array<int, 3>;
using Box = std::pair<I3, I3>;
using P3 = std::array<double, 3>;

std::vector<IVec3> to_positions(const std::vector<I3>& v) {
    std::vector<IVec3> out;
    out.reserve(v.size());
    for (const I3& p : v) out.push_back({p[0], p[1], p[2]});
    return out;
}

// Coordinates come back as tuples so callers can hash and compare them.
py::tuple from_position(const IVec3& p) { return py::make_tuple(p.x, p.y, p.z); }

std::vector<py::tuple> from_positions(const std::vector<IVec3>& v) {
    std::vector<py::tuple> out;
    out.reserve(v.size());
    for (const IVec3& p : v) out.push_back(from_position(p));
    return out;
}

Aabb to_box(const Box& b) {
    return {{b.first[0], b.first[1], b.first[2]}, {b.second[0], b.second[1], b.second[2]}};
}

std::vector<Aabb> to_boxes(const std::vector<Box>& v) {
    std::vector<Aabb> out;
    out.reserve(v.size());
    for (const Box& b : v) out.push_back(to_box(b));
    return out;
}

std::vector<py::tuple> from_boxes(const std::vector<Aabb>& v) {
    std::vector<py::tuple> out;
    out.reserve(v.size());
    for (const Aabb& b : v) {
        out.push_back(py::make_tuple(from_position(b.min), from_position(b.max)));
    }
    return out;
}

std::vector<Vec3> to_points(const std::vector<P3>& v) {
    std::vector<Vec3> out;
    out.reserve(v.size());
    for (const P3& p : v) out.push_back({p[0], p[1], p[2]});
    return out;
}

}  // namespace

PYBIND11_MODULE(_partflow, m) {
    m.doc() = "part-aware 3d generation core";

    py::class_<SparseVoxelGrid>(m, "Grid")
        .def(py::init([](int resolution, const std::vector<I3>& positions,
                         const std::vector<int>& labels) {
                 if (labels.empty()) return SparseVoxelGrid(resolution, to_positions(positions));
                 return SparseVoxelGrid(resolution, to_positions(positions), labels);
             }),
             py::arg("resolution"), py::arg("positions"),
             py::arg("labels") = std::vector<int>{})
        .def_property_readonly("resolution", &SparseVoxelGrid::resolution)
        .def_property_readonly("labeled", &SparseVoxelGrid::labeled)
        .def_property_readonly("positions",
                               [](const SparseVoxelGrid& g) { return from_positions(g.positions()); })
        .def_property_readonly("labels",
                               [](const SparseVoxelGrid& g) { return g.labels(); })
        .def("__len__", &SparseVoxelGrid::size)
        .def("label_at",
             [](const SparseVoxelGrid& g, const I3& p) { return g.label_at({p[0], p[1], p[2]}); })
        .def("part_ids", &SparseVoxelGrid::part_ids);

    // --- box codec -----------------------------------------------------------
    m.def(
        "canonicalize",
        [](const std::vector<Box>& boxes) { return from_boxes(canonicalize(to_boxes(boxes))); },
        py::arg("boxes"), "sort boxes by (z, y, x) of their min corner");
    m.def(
        "tokenize",
        [](const std::vector<Box>& boxes, int resolution) {
            return tokenize(to_boxes(boxes), resolution).tokens;
        },
        py::arg("boxes"), py::arg("resolution"));
    m.def(
        "detokenize",
        [](const std::vector<int>& ids, int resolution) {
            BoxTokenSequence seq;
            seq.tokens = ids;
            seq.resolution = resolution;
            return from_boxes(detokenize(seq));
        },
        py::arg("ids"), py::arg("resolution"));

    // --- voxel operations ------------------------------------------------------
    m.def(
        "part_boxes",
        [](const SparseVoxelGrid& g) { return from_boxes(datagen::part_boxes(g)); },
        py::arg("grid"), "per-part tight bounding boxes, indexed by label");
    m.def(
        "voxels_in_box",
        [](const SparseVoxelGrid& g, const Box& b) {
            return from_positions(voxels_in_box(g, to_box(b)));
        },
        py::arg("grid"), py::arg("box"));
    m.def(
        "project_mask",
        [](const SparseVoxelGrid& g, int h, int w, int num_parts) {
            const LabelMask2D mask = project_mask(g, View{}, h, w, num_parts);
            std::vector<std::vector<int>> rows(static_cast<size_t>(mask.height));
            for (int i = 0; i < mask.height; ++i) {
                rows[static_cast<size_t>(i)].assign(
                    mask.entries.begin() + static_cast<size_t>(i) * mask.width,
                    mask.entries.begin() + static_cast<size_t>(i + 1) * mask.width);
            }
            return rows;
        },
        py::arg("grid"), py::arg("height"), py::arg("width"), py::arg("num_parts"),
        "front-view part-label image; num_parts-1 is background");

    // --- procedural generation ---------------------------------------------------
    m.def(
        "generate_object",
        [](uint64_t seed, int min_parts, int max_parts, int resolution) {
            return datagen::generate_object(seed, min_parts, max_parts, resolution).grid;
        },
        py::arg("seed"), py::arg("min_parts"), py::arg("max_parts"), py::arg("resolution"),
        "seeded multi-part assembly as a labeled grid");

    // --- metrics --------------------------------------------------------------
    m.def(
        "bbox_iou", [](const Box& a, const Box& b) { return metrics::bbox_iou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "chamfer",
        [](const std::vector<P3>& p, const std::vector<P3>& q, bool oracle) {
            return metrics::chamfer(to_points(p), to_points(q), oracle);
        },
        py::arg("pred"), py::arg("gt"), py::arg("oracle") = false);
    m.def(
        "f1_at",
        [](const std::vector<P3>& p, const std::vector<P3>& q, double tau, bool oracle) {
            return metrics::f1_at(to_points(p), to_points(q), tau, oracle);
        },
        py::arg("pred"), py::arg("gt"), py::arg("tau"), py::arg("oracle") = false);
    m.def(
        "coverage_hard",
        [](const std::vector<Box>& decoded, const std::vector<Box>& gt) {
            return planner::coverage_hard(to_boxes(decoded), to_boxes(gt));
        },
        py::arg("decoded"), py::arg("gt"),
        "mean per-axis uncovered margin; 0 iff every gt box is enclosed");
    m.def("retained", &synth::retained, py::arg("f_valid"), py::arg("beta"),
          "keep a voxel iff sigmoid(f_valid) > beta");

    // --- config + corpus ---------------------------------------------------------
    m.def("default_config", [] { return to_json(PipelineConfig{}).dump(2); });
    m.def(
        "config_hash",
        [](const std::string& config_json) {
            return hex64(config_hash(pipeline_config_from_json(nlohmann::json::parse(config_json))));
        },
        py::arg("config_json"));
    m.def(
        "write_corpus",
        [](const std::string& dir, const std::string& config_json) {
            const PipelineConfig cfg =
                pipeline_config_from_json(nlohmann::json::parse(config_json));
            const corpus::Manifest man = corpus::write_corpus(dir, cfg);
            py::dict out;
            out["objects"] = man.objects.size();
            out["train"] = man.train;
            out["val"] = man.val;
            out["test"] = man.test;
            out["config_hash"] = hex64(man.config_hash);
            return out;
        },
        py::arg("dir"), py::arg("config_json"));
}
