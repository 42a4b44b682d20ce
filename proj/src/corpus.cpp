#include "partflow/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "partflow/datagen.hpp"
#include "partflow/io.hpp"

namespace fs = std::filesystem;

namespace partflow::corpus {

namespace {

std::string object_id(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "obj_%04d", index);
    return buf;
}

// Renumber labels so part k owns the k-th canonical box. Duplicate boxes are
// matched greedily, which is stable and label-preserving enough for metrics.
SparseVoxelGrid relabel_canonical(const SparseVoxelGrid& grid) {
    const std::vector<Aabb> by_id = datagen::part_boxes(grid);
    const std::vector<Aabb> canon = canonicalize(by_id);
    std::vector<int> old_to_new(by_id.size(), -1);
    std::vector<bool> used(by_id.size(), false);
    for (size_t n = 0; n < canon.size(); ++n) {
        for (size_t o = 0; o < by_id.size(); ++o) {
            if (!used[o] && by_id[o] == canon[n]) {
                old_to_new[o] = static_cast<int>(n);
                used[o] = true;
                break;
            }
        }
    }
    std::vector<int> labels;
    labels.reserve(grid.labels().size());
    for (int label : grid.labels()) labels.push_back(old_to_new[static_cast<size_t>(label)]);
    return SparseVoxelGrid(grid.resolution(), grid.positions(), std::move(labels));
}

nlohmann::json validity_json(const datagen::TrainingPairS2& pair, const SynthConfig& synth) {
    nlohmann::json parts = nlohmann::json::array();
    const size_t dc = static_cast<size_t>(synth.D);
    for (const synth::PartTokens& part : pair.targets.parts) {
        nlohmann::json positions = nlohmann::json::array();
        nlohmann::json validity = nlohmann::json::array();
        for (size_t i = 0; i < part.positions.size(); ++i) {
            positions.push_back({part.positions[i].x, part.positions[i].y, part.positions[i].z});
            validity.push_back(part.latent.at(i, dc));
        }
        parts.push_back({{"part", part.part_id},
                         {"positions", std::move(positions)},
                         {"validity", std::move(validity)}});
    }
    return {{"alpha", synth.alpha},
            {"D", synth.D},
            {"descriptor_seed", synth.seed},
            {"noise_fraction", pair.noise_fraction},
            {"parts", std::move(parts)}};
}

std::vector<std::string> names_from(const nlohmann::json& j, const char* key) {
    std::vector<std::string> out;
    if (!j.contains(key)) return out;
    for (const nlohmann::json& e : j.at(key)) out.push_back(e.get<std::string>());
    return out;
}

}  // namespace

Manifest write_corpus(const std::string& dir, const PipelineConfig& cfg) {
    cfg.validate();
    const DatagenConfig& dg = cfg.datagen;
    fs::create_directories(fs::path(dir) / "objects");

    Manifest manifest;
    manifest.config_hash = config_hash(cfg);
    manifest.resolution = dg.resolution;
    manifest.mask_hw = dg.mask_hw;

    std::vector<int> part_counts;
    for (int i = 0; i < dg.count; ++i) {
        const std::string id = object_id(i);
        const uint64_t object_seed = derive_seed(dg.seed, "datagen.object." + std::to_string(i));
        datagen::GeneratedObject gen =
            datagen::generate_object(object_seed, dg.min_parts, dg.max_parts, dg.resolution);

        Rng variant_rng(derive_seed(dg.seed, "datagen.variant." + std::to_string(i)));
        const std::vector<int>& coarse = gen.object.granularities[1];
        const int coarse_groups = 1 + *std::max_element(coarse.begin(), coarse.end());
        const bool merged = variant_rng.uniform() < dg.pair_fraction && coarse_groups >= 2;
        SparseVoxelGrid grid =
            merged ? datagen::apply_granularity(gen.grid, coarse) : gen.grid;
        grid = relabel_canonical(grid);

        const std::vector<Aabb> boxes = datagen::part_boxes(grid);
        const LabelMask2D mask =
            project_mask(grid, View{}, dg.mask_hw, dg.mask_hw, cfg.planner.K);
        const datagen::TrainingPairS2 s2 =
            datagen::make_pair_s2(grid, cfg.synth.alpha, cfg.synth.D, cfg.synth.seed);

        const fs::path obj_dir = fs::path(dir) / "objects" / id;
        fs::create_directories(obj_dir);
        io::save_grid((obj_dir / "voxels.json").string(), grid);
        io::save_boxes((obj_dir / "boxes.json").string(), boxes);
        io::save_mask((obj_dir / "mask.json").string(), mask);
        io::save_json((obj_dir / "s2_targets.json").string(), validity_json(s2, cfg.synth));

        ObjectRecord record;
        record.id = id;
        record.parts = static_cast<int>(boxes.size());
        record.granularity = merged ? 1 : 0;
        record.noise_fraction = s2.noise_fraction;
        manifest.objects.push_back(record);
        part_counts.push_back(record.parts);
    }

    datagen::SplitManifest split = datagen::split_corpus(
        part_counts, dg.train_ratio, dg.val_ratio, dg.test_ratio, dg.seed);
    for (int i : split.train) manifest.train.push_back(manifest.objects[static_cast<size_t>(i)].id);
    for (int i : split.val) manifest.val.push_back(manifest.objects[static_cast<size_t>(i)].id);
    for (int i : split.test) manifest.test.push_back(manifest.objects[static_cast<size_t>(i)].id);

    int buckets[4] = {0, 0, 0, 0};
    for (int parts : part_counts) {
        buckets[parts <= 3 ? 0 : (parts <= 6 ? 1 : (parts <= 9 ? 2 : 3))] += 1;
    }
    nlohmann::json objects = nlohmann::json::array();
    for (const ObjectRecord& r : manifest.objects) {
        objects.push_back({{"id", r.id},
                           {"parts", r.parts},
                           {"granularity", r.granularity},
                           {"noise_fraction", r.noise_fraction}});
    }
    io::save_json((fs::path(dir) / "manifest.json").string(),
                  {{"config_hash", hex64(manifest.config_hash)},
                   {"resolution", manifest.resolution},
                   {"mask_hw", manifest.mask_hw},
                   {"objects", std::move(objects)},
                   {"splits",
                    {{"train", manifest.train}, {"val", manifest.val}, {"test", manifest.test}}},
                   {"buckets",
                    {{"2-3", buckets[0]},
                     {"4-6", buckets[1]},
                     {"7-9", buckets[2]},
                     {"10+", buckets[3]}}}});
    return manifest;
}

Manifest load_manifest(const std::string& dir) {
    const nlohmann::json j = io::load_json((fs::path(dir) / "manifest.json").string());
    Manifest manifest;
    try {
        manifest.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
        manifest.resolution = j.at("resolution").get<int>();
        manifest.mask_hw = j.at("mask_hw").get<int>();
        for (const nlohmann::json& o : j.at("objects")) {
            ObjectRecord r;
            r.id = o.at("id").get<std::string>();
            r.parts = o.at("parts").get<int>();
            r.granularity = o.value("granularity", 0);
            r.noise_fraction = o.value("noise_fraction", 0.0);
            manifest.objects.push_back(std::move(r));
        }
        manifest.train = names_from(j.at("splits"), "train");
        manifest.val = names_from(j.at("splits"), "val");
        manifest.test = names_from(j.at("splits"), "test");
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::Malformed, std::string("manifest: ") + e.what());
    }
    return manifest;
}

LoadedObject load_object(const std::string& dir, const std::string& id) {
    const fs::path obj_dir = fs::path(dir) / "objects" / id;
    LoadedObject out;
    out.grid = io::load_grid((obj_dir / "voxels.json").string());
    out.mask = io::load_mask((obj_dir / "mask.json").string());
    out.boxes = io::load_boxes((obj_dir / "boxes.json").string());
    return out;
}

std::vector<StoredValidity> load_s2_validity(const std::string& dir, const std::string& id) {
    const fs::path path = fs::path(dir) / "objects" / id / "s2_targets.json";
    const nlohmann::json j = io::load_json(path.string());
    std::vector<StoredValidity> out;
    try {
        for (const nlohmann::json& p : j.at("parts")) {
            StoredValidity v;
            v.part = p.at("part").get<int>();
            for (const nlohmann::json& pos : p.at("positions")) {
                v.positions.push_back(
                    {pos.at(0).get<int>(), pos.at(1).get<int>(), pos.at(2).get<int>()});
            }
            for (const nlohmann::json& val : p.at("validity")) {
                v.validity.push_back(val.get<double>());
            }
            if (v.validity.size() != v.positions.size()) {
                raise(ErrorCode::Malformed, "validity rows do not match positions");
            }
            out.push_back(std::move(v));
        }
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::Malformed, std::string("s2_targets: ") + e.what());
    }
    return out;
}

}  // namespace partflow::corpus
