// Command-line front end: dataset generation, two-stage training, sampling,
// end-to-end inference, evaluation, ablations, and gradient checking.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "partflow/common.hpp"
#include "partflow/config.hpp"
#include "partflow/corpus.hpp"
#include "partflow/datagen.hpp"
#include "partflow/io.hpp"
#include "partflow/metrics.hpp"
#include "partflow/planner.hpp"
#include "partflow/synthesizer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace partflow;

namespace {

bool g_verbose = false;

void vlog(const std::string& line) {
    if (g_verbose) std::cerr << line << "\n";
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- config plumbing ---------------------------------------------------------

struct GlobalArgs {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    bool threads_set = false;
};

PipelineConfig make_config(const GlobalArgs& g) {
    PipelineConfig cfg;
    if (!g.config_path.empty()) cfg = pipeline_config_from_json(io::load_json(g.config_path));
    if (g.seed_set) {
        cfg.seed = g.seed;
        cfg.planner.seed = derive_seed(g.seed, "planner");
        cfg.synth.seed = derive_seed(g.seed, "synth");
        cfg.datagen.seed = derive_seed(g.seed, "datagen");
    }
    if (g.threads_set) cfg.threads = g.threads;
    cfg.validate();
    return cfg;
}

// Registers the model, loads the checkpoint, and refuses to run with weights
// produced under a different configuration.
io::CheckpointMeta load_stage(ad::ParamStore& store, const std::string& path,
                              uint64_t expected_hash, const std::string& stage) {
    io::CheckpointMeta meta = io::load_checkpoint(path, store);
    if (meta.config_hash != expected_hash) {
        raise(ErrorCode::ConfigError,
              stage + " checkpoint " + path + " was trained under config " +
                  hex64(meta.config_hash) + " but the current config hashes to " +
                  hex64(expected_hash) + "; rerun with the matching --config/--seed");
    }
    return meta;
}

// --- dataset access ----------------------------------------------------------

const std::vector<std::string>& split_ids(const corpus::Manifest& m, const std::string& split) {
    if (split == "train") return m.train;
    if (split == "val") return m.val;
    return m.test;
}

std::vector<planner::PlanExample> load_plan_examples(const std::string& dir,
                                                     const std::vector<std::string>& ids) {
    std::vector<planner::PlanExample> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
        corpus::LoadedObject obj = corpus::load_object(dir, id);
        out.push_back({std::move(obj.grid), std::move(obj.mask), std::move(obj.boxes)});
    }
    return out;
}

std::vector<synth::TrainExample> load_synth_examples(const std::string& dir,
                                                     const std::vector<std::string>& ids,
                                                     const SynthConfig& sc) {
    std::vector<synth::TrainExample> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
        corpus::LoadedObject obj = corpus::load_object(dir, id);
        synth::PartLatentSet set =
            synth::build_targets(obj.grid, obj.boxes, sc.alpha, sc.D, sc.seed);
        out.push_back({synth::flatten(set, sc.whole_cap)});
    }
    return out;
}

// One entry per part id in [0, count); empty parts stay empty.
std::vector<LabeledPart> parts_from_grid(const SparseVoxelGrid& grid, size_t count) {
    std::vector<std::vector<IVec3>> buckets(count);
    if (!grid.empty() && grid.labeled()) {
        for (size_t i = 0; i < grid.size(); ++i) {
            const int label = grid.labels()[i];
            if (label >= 0 && static_cast<size_t>(label) < count) {
                buckets[static_cast<size_t>(label)].push_back(grid.positions()[i]);
            }
        }
    }
    std::vector<LabeledPart> parts;
    parts.reserve(count);
    for (size_t k = 0; k < count; ++k) {
        parts.push_back({static_cast<int>(k), SparseVoxelGrid(grid.resolution(), buckets[k])});
    }
    return parts;
}

// --- report serialization ------------------------------------------------------

json report_entry(const metrics::ObjectReport& r) {
    return json{{"id", r.id},
                {"failed", false},
                {"bbox_iou_pct", r.bbox_iou_pct},
                {"voxel_recall_pct", r.voxel_recall_pct},
                {"voxel_iou_pct", r.voxel_iou_pct},
                {"whole_iou_pct", r.whole_iou_pct},
                {"overall_cd", r.overall_cd},
                {"overall_f1_loose", r.overall_f1_loose},
                {"overall_f1_tight", r.overall_f1_tight},
                {"part_cd", r.part_cd},
                {"part_f1_loose", r.part_f1_loose},
                {"part_f1_tight", r.part_f1_tight},
                {"best_rotation", r.best_rotation},
                {"gt_parts", r.gt_parts},
                {"pred_parts", r.pred_parts},
                {"empty_pred", r.empty_pred}};
}

json aggregate_entry(const metrics::Aggregate& a) {
    return json{{"bbox_iou_pct", a.bbox_iou_pct},
                {"voxel_recall_pct", a.voxel_recall_pct},
                {"voxel_iou_pct", a.voxel_iou_pct},
                {"whole_iou_pct", a.whole_iou_pct},
                {"overall_cd", a.overall_cd},
                {"overall_f1_loose", a.overall_f1_loose},
                {"overall_f1_tight", a.overall_f1_tight},
                {"part_cd", a.part_cd},
                {"part_f1_loose", a.part_f1_loose},
                {"part_f1_tight", a.part_f1_tight},
                {"count", a.count}};
}

json retained_parts_json(const std::vector<synth::RetainedPart>& parts,
                         const std::vector<int>& skipped, int resolution, uint64_t hash,
                         double beta) {
    json parts_j = json::array();
    for (const synth::RetainedPart& p : parts) {
        json positions = json::array();
        for (const IVec3& v : p.positions) positions.push_back({v.x, v.y, v.z});
        json content = json::array();
        for (size_t i = 0; i < p.positions.size(); ++i) {
            json row = json::array();
            for (size_t c = 0; c < p.content.cols(); ++c) row.push_back(p.content.at(i, c));
            content.push_back(row);
        }
        parts_j.push_back({{"index", p.part_id},
                           {"positions", positions},
                           {"content", content},
                           {"score", p.score}});
    }
    return json{{"config_hash", hex64(hash)},
                {"resolution", resolution},
                {"beta", beta},
                {"skipped", skipped},
                {"parts", parts_j}};
}

void ensure_parent_dir(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

// The pipeline treats the dataset as read-only; refuse output locations that
// would write into it.
void check_outside(const std::string& out_dir, const std::string& data_dir) {
    std::error_code ec;
    const fs::path out = fs::weakly_canonical(fs::path(out_dir), ec);
    if (ec) return;
    const fs::path data = fs::weakly_canonical(fs::path(data_dir), ec);
    if (ec) return;
    const fs::path rel = fs::relative(out, data, ec);
    if (ec || rel.empty()) return;
    if (rel.begin()->string() != "..") {
        raise(ErrorCode::ConfigError,
              "output directory " + out_dir + " lies inside the dataset " + data_dir);
    }
}

// --- subcommands ---------------------------------------------------------------

int cmd_datagen(const PipelineConfig& cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    corpus::Manifest m = corpus::write_corpus(out_dir, cfg);
    std::cout << "wrote " << m.objects.size() << " objects to " << out_dir << " (train "
              << m.train.size() << ", val " << m.val.size() << ", test " << m.test.size()
              << ", config " << hex64(m.config_hash) << ", " << seconds_since(t0) << "s)\n";
    return 0;
}

int cmd_plan_train(const PipelineConfig& cfg, const std::string& data_dir,
                   const std::string& out_path) {
    const auto t0 = std::chrono::steady_clock::now();
    corpus::Manifest m = corpus::load_manifest(data_dir);
    std::vector<planner::PlanExample> examples = load_plan_examples(data_dir, m.train);
    if (examples.empty()) raise(ErrorCode::EmptyInput, "train split is empty");
    vlog("loaded " + std::to_string(examples.size()) + " training objects");

    ad::ParamStore store;
    planner::register_model(store, cfg.planner);
    vlog("planner parameters: " + std::to_string(store.total_values()));
    planner::TrainStats stats = planner::train(store, cfg.planner, examples);

    ensure_parent_dir(out_path);
    io::save_checkpoint(out_path, store, config_hash(cfg));
    std::cout << "planner: " << stats.steps_run << " steps, loss " << stats.final_loss
              << ", teacher-forced accuracy " << stats.final_accuracy
              << (stats.early_stopped ? " (early stop)" : "") << ", saved " << out_path << " ("
              << seconds_since(t0) << "s)\n";
    return 0;
}

int cmd_plan_sample(const PipelineConfig& cfg, const std::string& ckpt,
                    const std::string& voxels_path, const std::string& mask_path,
                    const std::string& out_path, double temperature) {
    ad::ParamStore store;
    planner::register_model(store, cfg.planner);
    load_stage(store, ckpt, config_hash(cfg), "planner");

    SparseVoxelGrid grid = io::load_grid(voxels_path);
    LabelMask2D mask = io::load_mask(mask_path);
    planner::SampleOptions opts;
    opts.temperature = temperature;
    opts.seed = derive_seed(cfg.seed, "cli.plan-sample");
    planner::SampleResult res = planner::sample_boxes(store, cfg.planner, grid, mask, opts);

    ensure_parent_dir(out_path);
    json j{{"config_hash", hex64(config_hash(cfg))},
           {"truncated", res.truncated},
           {"boxes", io::boxes_to_json(res.boxes)}};
    io::save_json(out_path, j);
    std::cout << "planned " << res.boxes.size() << " boxes"
              << (res.truncated ? " (truncated)" : "") << " -> " << out_path << "\n";
    return 0;
}

int cmd_synth_train(const PipelineConfig& cfg, const std::string& data_dir,
                    const std::string& out_path) {
    const auto t0 = std::chrono::steady_clock::now();
    corpus::Manifest m = corpus::load_manifest(data_dir);
    std::vector<synth::TrainExample> examples =
        load_synth_examples(data_dir, m.train, cfg.synth);
    if (examples.empty()) raise(ErrorCode::EmptyInput, "train split is empty");
    vlog("built " + std::to_string(examples.size()) + " latent batches");

    ad::ParamStore store;
    synth::register_model(store, cfg.synth);
    vlog("synthesizer parameters: " + std::to_string(store.total_values()));
    synth::TrainStats stats = synth::train(store, cfg.synth, examples);

    ensure_parent_dir(out_path);
    io::save_checkpoint(out_path, store, config_hash(cfg));
    std::cout << "synthesizer: " << stats.steps_run << " steps, loss " << stats.final_loss
              << ", saved " << out_path << " (" << seconds_since(t0) << "s)\n";
    return 0;
}

int cmd_synth_sample(const PipelineConfig& cfg, const std::string& ckpt,
                     const std::string& boxes_path, const std::string& voxels_path,
                     const std::string& out_path, int steps) {
    ad::ParamStore store;
    synth::register_model(store, cfg.synth);
    load_stage(store, ckpt, config_hash(cfg), "synthesizer");

    std::vector<Aabb> boxes = io::load_boxes(boxes_path);
    SparseVoxelGrid whole = io::load_grid(voxels_path);
    synth::SampleResult res = synth::sample_parts(store, cfg.synth, boxes, whole, steps,
                                                  derive_seed(cfg.seed, "cli.synth-sample"));
    std::vector<synth::RetainedPart> retained = synth::discard_voxels(res.set, cfg.synth.beta);

    size_t kept = 0;
    for (const synth::RetainedPart& p : retained) kept += p.positions.size();
    ensure_parent_dir(out_path);
    io::save_json(out_path, retained_parts_json(retained, res.skipped_boxes,
                                                cfg.synth.resolution, config_hash(cfg),
                                                cfg.synth.beta));
    std::cout << "synthesized " << retained.size() << " parts, " << kept
              << " retained voxels -> " << out_path << "\n";
    return 0;
}

int cmd_pipeline(const PipelineConfig& cfg, const std::string& data_dir,
                 const std::string& plan_ckpt, const std::string& synth_ckpt,
                 const std::string& out_dir, const std::string& split, size_t limit) {
    const auto t0 = std::chrono::steady_clock::now();
    check_outside(out_dir, data_dir);

    ad::ParamStore plan_store;
    planner::register_model(plan_store, cfg.planner);
    load_stage(plan_store, plan_ckpt, config_hash(cfg), "planner");
    ad::ParamStore synth_store;
    synth::register_model(synth_store, cfg.synth);
    load_stage(synth_store, synth_ckpt, config_hash(cfg), "synthesizer");

    corpus::Manifest m = corpus::load_manifest(data_dir);
    std::vector<std::string> ids = split_ids(m, split);
    if (limit > 0 && ids.size() > limit) ids.resize(limit);
    if (ids.empty()) raise(ErrorCode::EmptyInput, "split '" + split + "' is empty");

    metrics::EvalConfig ecfg{cfg.eval.tau_loose, cfg.eval.tau_tight, cfg.eval.unmatched_penalty,
                             cfg.eval.oracle};
    const uint64_t hash = config_hash(cfg);

    struct Slot {
        bool failed = false;
        std::string error;
        metrics::ObjectReport report;
    };
    std::vector<Slot> slots(ids.size());
    std::mutex log_mutex;

    auto run_object = [&](size_t i) {
        const std::string& id = ids[i];
        Slot& slot = slots[i];
        try {
            corpus::LoadedObject obj = corpus::load_object(data_dir, id);

            planner::SampleOptions opts;
            opts.seed = derive_seed(cfg.seed, "pipeline.plan." + id);
            planner::SampleResult plan =
                planner::sample_boxes(plan_store, cfg.planner, obj.grid, obj.mask, opts);

            synth::SampleResult gen =
                synth::sample_parts(synth_store, cfg.synth, plan.boxes, obj.grid,
                                    cfg.synth.steps, derive_seed(cfg.seed, "pipeline.synth." + id));
            std::vector<synth::RetainedPart> retained =
                synth::discard_voxels(gen.set, cfg.synth.beta);
            SparseVoxelGrid merged = synth::merge_parts(retained, cfg.synth.resolution);

            const fs::path obj_dir = fs::path(out_dir) / "objects" / id;
            fs::create_directories(obj_dir);
            json boxes_j{{"config_hash", hex64(hash)},
                         {"truncated", plan.truncated},
                         {"boxes", io::boxes_to_json(plan.boxes)}};
            io::save_json((obj_dir / "pred_boxes.json").string(), boxes_j);
            io::save_json((obj_dir / "parts.json").string(),
                          retained_parts_json(retained, gen.skipped_boxes,
                                              cfg.synth.resolution, hash, cfg.synth.beta));
            json merged_j = io::grid_to_json(merged);
            merged_j["config_hash"] = hex64(hash);
            io::save_json((obj_dir / "merged.json").string(), merged_j);

            std::vector<LabeledPart> gt_parts = parts_from_grid(obj.grid, obj.boxes.size());
            std::vector<LabeledPart> pred_parts = parts_from_grid(merged, plan.boxes.size());
            slot.report = metrics::evaluate_object(pred_parts, gt_parts, ecfg, &plan.boxes,
                                                   &obj.boxes);
            slot.report.id = id;
            if (g_verbose) {
                std::lock_guard<std::mutex> lock(log_mutex);
                std::cerr << id << ": " << plan.boxes.size() << " boxes, voxel IoU "
                          << slot.report.voxel_iou_pct << "%\n";
            }
        } catch (const std::exception& e) {
            slot.failed = true;
            slot.error = e.what();
            std::lock_guard<std::mutex> lock(log_mutex);
            std::cerr << "object " << id << " failed: " << e.what() << "\n";
        }
    };

    const int workers = std::max(1, cfg.threads);
    if (workers == 1) {
        for (size_t i = 0; i < ids.size(); ++i) run_object(i);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (size_t i = static_cast<size_t>(w); i < ids.size();
                     i += static_cast<size_t>(workers)) {
                    run_object(i);
                }
            });
        }
        for (std::thread& t : pool) t.join();
    }

    json objects_j = json::array();
    std::vector<metrics::ObjectReport> ok;
    std::vector<std::string> failed;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (slots[i].failed) {
            failed.push_back(ids[i]);
            objects_j.push_back(json{{"id", ids[i]}, {"failed", true}, {"error", slots[i].error}});
        } else {
            ok.push_back(slots[i].report);
            objects_j.push_back(report_entry(slots[i].report));
        }
    }

    json report{{"config_hash", hex64(hash)},
                {"split", split},
                {"objects", objects_j},
                {"mean", aggregate_entry(metrics::aggregate(ok))},
                {"failed", failed}};
    fs::create_directories(out_dir);
    io::save_json((fs::path(out_dir) / "report.json").string(), report);

    std::cout << "pipeline: " << ok.size() << "/" << ids.size() << " objects succeeded";
    if (!ok.empty()) {
        std::cout << ", mean voxel IoU " << metrics::aggregate(ok).voxel_iou_pct << "%";
    }
    std::cout << " -> " << out_dir << "/report.json (" << seconds_since(t0) << "s)\n";
    if (!failed.empty()) {
        std::cout << "failed objects:";
        for (const std::string& id : failed) std::cout << " " << id;
        std::cout << "\n";
    }
    return 0;
}

int cmd_eval(const PipelineConfig& cfg, const std::string& pred_dir, const std::string& gt_dir,
             const std::string& report_path, const std::string& split, bool oracle) {
    corpus::Manifest m = corpus::load_manifest(gt_dir);
    const std::vector<std::string>& ids = split_ids(m, split);
    if (ids.empty()) raise(ErrorCode::EmptyInput, "split '" + split + "' is empty");

    metrics::EvalConfig ecfg{cfg.eval.tau_loose, cfg.eval.tau_tight, cfg.eval.unmatched_penalty,
                             cfg.eval.oracle || oracle};

    json objects_j = json::array();
    std::vector<metrics::ObjectReport> ok;
    std::vector<std::string> failed;
    for (const std::string& id : ids) {
        try {
            corpus::LoadedObject obj = corpus::load_object(gt_dir, id);
            const fs::path obj_dir = fs::path(pred_dir) / "objects" / id;
            SparseVoxelGrid merged = io::load_grid((obj_dir / "merged.json").string());
            std::vector<Aabb> pred_boxes = io::load_boxes((obj_dir / "pred_boxes.json").string());

            std::vector<LabeledPart> gt_parts = parts_from_grid(obj.grid, obj.boxes.size());
            std::vector<LabeledPart> pred_parts = parts_from_grid(merged, pred_boxes.size());
            metrics::ObjectReport r =
                metrics::evaluate_object(pred_parts, gt_parts, ecfg, &pred_boxes, &obj.boxes);
            r.id = id;
            ok.push_back(r);
            objects_j.push_back(report_entry(r));
        } catch (const std::exception& e) {
            failed.push_back(id);
            objects_j.push_back(json{{"id", id}, {"failed", true}, {"error", e.what()}});
            std::cerr << "object " << id << " failed: " << e.what() << "\n";
        }
    }

    json report{{"config_hash", hex64(config_hash(cfg))},
                {"split", split},
                {"oracle", ecfg.oracle},
                {"objects", objects_j},
                {"mean", aggregate_entry(metrics::aggregate(ok))},
                {"failed", failed}};
    ensure_parent_dir(report_path);
    io::save_json(report_path, report);
    std::cout << "evaluated " << ok.size() << "/" << ids.size() << " objects -> " << report_path
              << "\n";
    return 0;
}

struct AblationRow {
    std::string variant;
    double lambda_cov = 0.0;
    double voxel_recall_pct = 0.0;
    double voxel_iou_pct = 0.0;
    double bbox_iou_pct = 0.0;
    int train_steps = 0;
    double final_accuracy = 0.0;
};

AblationRow run_ablation_variant(const PipelineConfig& cfg, const std::string& variant,
                                 const std::vector<planner::PlanExample>& train_examples,
                                 const std::vector<planner::PlanExample>& eval_examples) {
    PlannerConfig pc = cfg.planner;
    if (variant == "no_coverage") pc.lambda_cov = 0.0;

    ad::ParamStore store;
    planner::register_model(store, pc);
    if (variant == "no_mask") {
        for (double& v : store.value("mask_embed").values()) v = 0.0;
        store.set_trainable("mask_embed", false);
    }

    const auto t0 = std::chrono::steady_clock::now();
    planner::TrainStats stats = planner::train(store, pc, train_examples);
    vlog(variant + ": trained " + std::to_string(stats.steps_run) + " steps in " +
         std::to_string(seconds_since(t0)) + "s");

    AblationRow row;
    row.variant = variant;
    row.lambda_cov = pc.lambda_cov;
    row.train_steps = stats.steps_run;
    row.final_accuracy = stats.final_accuracy;
    for (const planner::PlanExample& ex : eval_examples) {
        planner::SampleResult res = planner::sample_boxes(store, pc, ex.grid, ex.mask, {});
        metrics::PlanningScores s = metrics::planning_metrics(ex.grid, ex.boxes, res.boxes);
        row.voxel_recall_pct += s.voxel_recall_pct;
        row.voxel_iou_pct += s.voxel_iou_pct;
        row.bbox_iou_pct += s.bbox_iou_pct;
    }
    const double n = static_cast<double>(eval_examples.size());
    row.voxel_recall_pct /= n;
    row.voxel_iou_pct /= n;
    row.bbox_iou_pct /= n;
    return row;
}

std::string sign_of(double gap) { return gap > 0 ? "+" : (gap < 0 ? "-" : "0"); }

int cmd_ablate(const PipelineConfig& cfg, const std::string& data_dir,
               const std::string& out_path, const std::string& variant) {
    const auto t0 = std::chrono::steady_clock::now();
    corpus::Manifest m = corpus::load_manifest(data_dir);
    std::vector<planner::PlanExample> train_examples = load_plan_examples(data_dir, m.train);
    std::vector<planner::PlanExample> eval_examples = load_plan_examples(data_dir, m.test);
    if (train_examples.empty() || eval_examples.empty()) {
        raise(ErrorCode::EmptyInput, "ablation needs non-empty train and test splits");
    }

    std::vector<std::string> variants;
    if (variant.empty()) {
        variants = {"full", "no_mask", "no_coverage"};
    } else {
        variants = {variant};
    }

    std::vector<AblationRow> rows;
    for (const std::string& v : variants) {
        rows.push_back(run_ablation_variant(cfg, v, train_examples, eval_examples));
    }

    json rows_j = json::array();
    const AblationRow* full = nullptr;
    for (const AblationRow& r : rows) {
        if (r.variant == "full") full = &r;
        rows_j.push_back(json{{"variant", r.variant},
                              {"lambda_cov", r.lambda_cov},
                              {"voxel_recall_pct", r.voxel_recall_pct},
                              {"voxel_iou_pct", r.voxel_iou_pct},
                              {"bbox_iou_pct", r.bbox_iou_pct},
                              {"train_steps", r.train_steps},
                              {"teacher_forced_accuracy", r.final_accuracy}});
    }
    json comparisons = json::object();
    if (full) {
        for (const AblationRow& r : rows) {
            if (r.variant == "full") continue;
            const double gap = full->voxel_recall_pct - r.voxel_recall_pct;
            comparisons["full_vs_" + r.variant] =
                json{{"voxel_recall_gap", gap}, {"sign", sign_of(gap)}};
        }
    }

    json report{{"config_hash", hex64(config_hash(cfg))},
                {"eval_split", "test"},
                {"eval_objects", eval_examples.size()},
                {"rows", rows_j},
                {"comparisons", comparisons}};
    ensure_parent_dir(out_path);
    io::save_json(out_path, report);

    std::printf("%-12s %14s %12s %11s\n", "variant", "voxel recall", "voxel IoU", "bbox IoU");
    for (const AblationRow& r : rows) {
        std::printf("%-12s %13.2f%% %11.2f%% %10.2f%%\n", r.variant.c_str(),
                    r.voxel_recall_pct, r.voxel_iou_pct, r.bbox_iou_pct);
    }
    std::cout << "ablation report -> " << out_path << " (" << seconds_since(t0) << "s)\n";
    return 0;
}

int cmd_grad_check(const PipelineConfig& cfg, double tolerance, size_t min_coords,
                   double epsilon) {
    bool all_pass = true;
    auto show = [&](const std::string& name, const ad::GradCheckReport& rep) {
        const bool pass = rep.pass(tolerance);
        all_pass = all_pass && pass;
        std::printf("%-14s max_rel_err=%.3e  coords=%zu  %s\n", name.c_str(), rep.max_rel_err,
                    rep.coords_checked, pass ? "PASS" : "FAIL");
        if (!pass) {
            std::printf("  worst: %s[%zu]\n", rep.worst_param.c_str(), rep.worst_index);
        }
    };

    // Planner losses on a two-part object small enough for finite differences.
    {
        PlannerConfig pc;
        pc.resolution = 8;
        pc.d = 16;
        pc.heads = 2;
        pc.blocks = 1;
        pc.L = 4;
        pc.K = 8;
        pc.mask_hw = 4;
        pc.max_boxes = 2;
        pc.seed = derive_seed(cfg.seed, "gradcheck.planner");

        std::vector<IVec3> positions;
        std::vector<int> labels;
        for (int z = 1; z <= 3; ++z) {
            for (int y = 1; y <= 3; ++y) {
                for (int x = 1; x <= 3; ++x) {
                    positions.push_back({x, y, z});
                    labels.push_back(0);
                    positions.push_back({x + 3, y, z + 1});
                    labels.push_back(1);
                }
            }
        }
        SparseVoxelGrid grid(pc.resolution, positions, labels);
        LabelMask2D mask = project_mask(grid, View{}, pc.mask_hw, pc.mask_hw, pc.K);
        planner::EncodedExample enc =
            planner::encode_example(datagen::part_boxes(grid), pc.resolution);

        ad::ParamStore store;
        planner::register_model(store, pc);
        auto logits_of = [&](const ad::Leaves& leaves) {
            ad::Value prefix = planner::conditioning_prefix(leaves, pc, grid, mask);
            return planner::forward_logits(leaves, pc, prefix, enc.input);
        };
        show("loss_base", ad::grad_check(
                              [&](const ad::Leaves& leaves) {
                                  return planner::loss_base(logits_of(leaves), enc.targets);
                              },
                              store, epsilon, min_coords, derive_seed(cfg.seed, "gc.base")));
        show("loss_coverage",
             ad::grad_check(
                 [&](const ad::Leaves& leaves) {
                     return planner::loss_coverage_soft(logits_of(leaves), enc.roles, enc.seq);
                 },
                 store, epsilon, min_coords, derive_seed(cfg.seed, "gc.cov")));
        show("loss_total", ad::grad_check(
                               [&](const ad::Leaves& leaves) {
                                   ad::Value logits = logits_of(leaves);
                                   return planner::loss_total(
                                       planner::loss_base(logits, enc.targets),
                                       planner::loss_coverage_soft(logits, enc.roles, enc.seq),
                                       pc.lambda_cov);
                               },
                               store, epsilon, min_coords, derive_seed(cfg.seed, "gc.total")));
    }

    // Flow-matching loss through the denoiser.
    {
        SynthConfig sc;
        sc.resolution = 8;
        sc.D = 4;
        sc.d = 16;
        sc.heads = 2;
        sc.blocks = 1;
        sc.max_parts = 4;
        sc.whole_cap = 32;
        sc.seed = derive_seed(cfg.seed, "gradcheck.synth");

        std::vector<IVec3> positions;
        std::vector<int> labels;
        for (int z = 1; z <= 3; ++z) {
            for (int y = 1; y <= 3; ++y) {
                for (int x = 1; x <= 3; ++x) {
                    positions.push_back({x, y, z});
                    labels.push_back(0);
                    positions.push_back({x + 3, y, z});
                    labels.push_back(1);
                }
            }
        }
        SparseVoxelGrid grid(sc.resolution, positions, labels);
        synth::PartLatentSet set = synth::build_targets(grid, datagen::part_boxes(grid),
                                                        sc.alpha, sc.D, sc.seed);
        synth::TokenBatch batch = synth::flatten(set, sc.whole_cap);

        Rng rng(derive_seed(cfg.seed, "gc.cfm.noise"));
        Tensor eps(batch.x.rows(), batch.x.cols());
        for (size_t i = 0; i < eps.size(); ++i) eps.at(i) = rng.normal();
        const Tensor xt = synth::interpolate(batch.x, eps, 0.37);
        const Tensor x0 = batch.x;

        ad::ParamStore store;
        synth::register_model(store, sc);
        show("loss_cfm", ad::grad_check(
                             [&](const ad::Leaves& leaves) {
                                 ad::Value v = synth::denoiser_forward(leaves, sc, batch,
                                                                       ad::constant(xt), 0.37);
                                 return synth::loss_cfm(v, x0, eps);
                             },
                             store, epsilon, min_coords, derive_seed(cfg.seed, "gc.cfm")));
    }

    if (!all_pass) {
        raise(ErrorCode::NumericalError, "gradient check exceeded tolerance");
    }
    std::cout << "all gradient checks passed (tolerance " << tolerance << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"part-aware 3d generation: box structure planning + latent part synthesis"};
    app.require_subcommand(1);
    app.fallthrough(true);

    GlobalArgs g;
    app.add_option("--config", g.config_path, "pipeline config JSON (defaults when omitted)")
        ->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option(
        "--seed", g.seed, "root seed; module seeds re-derive as root ^ hash(tag)");
    auto* threads_opt =
        app.add_option("--threads", g.threads, "worker threads for per-object inference");
    app.add_flag("--verbose", g_verbose, "progress logging to stderr");

    // datagen
    auto* datagen_cmd = app.add_subcommand("datagen", "generate a procedural part corpus");
    std::string dg_out;
    datagen_cmd->add_option("--out", dg_out, "dataset directory (default: config data_dir)");

    // plan-train
    auto* plan_train_cmd = app.add_subcommand("plan-train", "train the box structure planner");
    std::string pt_data, pt_out;
    plan_train_cmd->add_option("--data", pt_data, "dataset directory");
    plan_train_cmd->add_option("--out", pt_out, "checkpoint path (default: out_dir/planner.ckpt)");

    // plan-sample
    auto* plan_sample_cmd =
        app.add_subcommand("plan-sample", "decode part boxes for one voxel grid + mask");
    std::string ps_ckpt, ps_voxels, ps_mask, ps_out;
    double ps_temperature = 0.0;
    plan_sample_cmd->add_option("--ckpt", ps_ckpt, "planner checkpoint")->required();
    plan_sample_cmd->add_option("--voxels", ps_voxels, "voxel grid JSON")->required();
    plan_sample_cmd->add_option("--mask", ps_mask, "2D label mask JSON")->required();
    plan_sample_cmd->add_option("--out", ps_out, "output boxes JSON")->required();
    plan_sample_cmd->add_option("--temperature", ps_temperature, "0 = greedy");

    // synth-train
    auto* synth_train_cmd = app.add_subcommand("synth-train", "train the part synthesizer");
    std::string st_data, st_out;
    synth_train_cmd->add_option("--data", st_data, "dataset directory");
    synth_train_cmd->add_option("--out", st_out, "checkpoint path (default: out_dir/synth.ckpt)");

    // synth-sample
    auto* synth_sample_cmd =
        app.add_subcommand("synth-sample", "generate part latents for given boxes");
    std::string ss_ckpt, ss_boxes, ss_voxels, ss_out;
    int ss_steps = 0;
    synth_sample_cmd->add_option("--ckpt", ss_ckpt, "synthesizer checkpoint")->required();
    synth_sample_cmd->add_option("--boxes", ss_boxes, "part boxes JSON")->required();
    synth_sample_cmd->add_option("--voxels", ss_voxels, "whole-shape voxel grid JSON")->required();
    synth_sample_cmd->add_option("--out", ss_out, "output parts JSON")->required();
    synth_sample_cmd->add_option("--steps", ss_steps, "Euler steps (default: config)");

    // pipeline
    auto* pipeline_cmd =
        app.add_subcommand("pipeline", "run planning + synthesis + merge + eval over a split");
    std::string pl_data, pl_plan_ckpt, pl_synth_ckpt, pl_out, pl_split = "test";
    size_t pl_limit = 0;
    pipeline_cmd->add_option("--data", pl_data, "dataset directory");
    pipeline_cmd->add_option("--plan-ckpt", pl_plan_ckpt, "planner checkpoint");
    pipeline_cmd->add_option("--synth-ckpt", pl_synth_ckpt, "synthesizer checkpoint");
    pipeline_cmd->add_option("--out", pl_out, "output directory (default: out_dir/pipeline)");
    pipeline_cmd->add_option("--split", pl_split, "dataset split")
        ->check(CLI::IsMember({"train", "val", "test"}));
    pipeline_cmd->add_option("--limit", pl_limit, "process only the first N objects (0 = all)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score pipeline outputs against ground truth");
    std::string ev_pred, ev_gt, ev_report, ev_split = "test";
    bool ev_oracle = false;
    eval_cmd->add_option("--pred", ev_pred, "pipeline output directory")->required();
    eval_cmd->add_option("--gt", ev_gt, "dataset directory")->required();
    eval_cmd->add_option("--report", ev_report, "report path (default: <pred>/eval_report.json)");
    eval_cmd->add_option("--split", ev_split, "dataset split")
        ->check(CLI::IsMember({"train", "val", "test"}));
    eval_cmd->add_flag("--oracle", ev_oracle, "quadratic nearest-neighbor verification backend");

    // ablate
    auto* ablate_cmd =
        app.add_subcommand("ablate", "train planner variants and compare planning metrics");
    std::string ab_data, ab_out, ab_variant;
    ablate_cmd->add_option("--data", ab_data, "dataset directory");
    ablate_cmd->add_option("--out", ab_out, "report path (default: out_dir/ablation.json)");
    ablate_cmd->add_option("--variant", ab_variant, "run a single variant")
        ->check(CLI::IsMember({"full", "no_mask", "no_coverage"}));

    // grad-check
    auto* grad_cmd =
        app.add_subcommand("grad-check", "finite-difference audit of every loss gradient");
    double gc_tolerance = 1e-4, gc_epsilon = 1e-5;
    size_t gc_min_coords = 200;
    grad_cmd->add_option("--tolerance", gc_tolerance, "max relative error allowed");
    grad_cmd->add_option("--min-coords", gc_min_coords, "coordinates sampled per loss");
    grad_cmd->add_option("--epsilon", gc_epsilon, "finite-difference step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        g.seed_set = seed_opt->count() > 0;
        g.threads_set = threads_opt->count() > 0;
        const PipelineConfig cfg = make_config(g);

        if (*datagen_cmd) {
            return cmd_datagen(cfg, dg_out.empty() ? cfg.data_dir : dg_out);
        }
        if (*plan_train_cmd) {
            return cmd_plan_train(cfg, pt_data.empty() ? cfg.data_dir : pt_data,
                                  pt_out.empty() ? cfg.out_dir + "/planner.ckpt" : pt_out);
        }
        if (*plan_sample_cmd) {
            return cmd_plan_sample(cfg, ps_ckpt, ps_voxels, ps_mask, ps_out, ps_temperature);
        }
        if (*synth_train_cmd) {
            return cmd_synth_train(cfg, st_data.empty() ? cfg.data_dir : st_data,
                                   st_out.empty() ? cfg.out_dir + "/synth.ckpt" : st_out);
        }
        if (*synth_sample_cmd) {
            return cmd_synth_sample(cfg, ss_ckpt, ss_boxes, ss_voxels, ss_out,
                                    ss_steps > 0 ? ss_steps : cfg.synth.steps);
        }
        if (*pipeline_cmd) {
            return cmd_pipeline(cfg, pl_data.empty() ? cfg.data_dir : pl_data,
                                pl_plan_ckpt.empty() ? cfg.out_dir + "/planner.ckpt" : pl_plan_ckpt,
                                pl_synth_ckpt.empty() ? cfg.out_dir + "/synth.ckpt" : pl_synth_ckpt,
                                pl_out.empty() ? cfg.out_dir + "/pipeline" : pl_out, pl_split,
                                pl_limit);
        }
        if (*eval_cmd) {
            return cmd_eval(cfg, ev_pred, ev_gt,
                            ev_report.empty() ? ev_pred + "/eval_report.json" : ev_report,
                            ev_split, ev_oracle);
        }
        if (*ablate_cmd) {
            return cmd_ablate(cfg, ab_data.empty() ? cfg.data_dir : ab_data,
                              ab_out.empty() ? cfg.out_dir + "/ablation.json" : ab_out,
                              ab_variant);
        }
        if (*grad_cmd) {
            return cmd_grad_check(cfg, gc_tolerance, gc_min_coords, gc_epsilon);
        }
        std::cerr << "no subcommand selected\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::NumericalError ? 3 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
