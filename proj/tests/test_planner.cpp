#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "partflow/planner.hpp"

using namespace partflow;
namespace pl = partflow::planner;
using ad::Value;

namespace {

PlannerConfig tiny_config() {
    PlannerConfig cfg;
    cfg.resolution = 8;
    cfg.d = 32;
    cfg.heads = 2;
    cfg.blocks = 2;
    cfg.L = 4;
    cfg.K = 8;
    cfg.mask_hw = 4;
    cfg.max_boxes = 3;
    cfg.lr = 3e-3;
    cfg.steps = 1200;
    cfg.eval_every = 50;
    cfg.seed = 99;
    return cfg;
}

// Solid boxes, labeled by list index; mask rendered at cfg.mask_hw.
pl::PlanExample make_example(const PlannerConfig& cfg, const std::vector<Aabb>& boxes) {
    std::vector<IVec3> pos;
    std::vector<int> labels;
    for (size_t k = 0; k < boxes.size(); ++k) {
        for (int z = boxes[k].min.z; z <= boxes[k].max.z; ++z) {
            for (int y = boxes[k].min.y; y <= boxes[k].max.y; ++y) {
                for (int x = boxes[k].min.x; x <= boxes[k].max.x; ++x) {
                    pos.push_back({x, y, z});
                    labels.push_back(static_cast<int>(k));
                }
            }
        }
    }
    std::vector<LabeledPart> parts;
    for (size_t k = 0; k < boxes.size(); ++k) parts.push_back({static_cast<int>(k), {}});
    SparseVoxelGrid grid = compose({});
    // resolve duplicate positions via compose semantics
    std::vector<LabeledPart> by_part(boxes.size());
    {
        std::vector<std::vector<IVec3>> per(boxes.size());
        for (size_t i = 0; i < pos.size(); ++i) per[labels[i]].push_back(pos[i]);
        std::vector<LabeledPart> lp;
        for (size_t k = 0; k < boxes.size(); ++k) {
            lp.push_back({static_cast<int>(k), SparseVoxelGrid(cfg.resolution, per[k])});
        }
        grid = compose(lp);
    }
    LabelMask2D mask = project_mask(grid, View{}, cfg.mask_hw, cfg.mask_hw, cfg.K);
    return {grid, mask, canonicalize(boxes)};
}

Tensor one_hot_logits(const std::vector<int>& tokens, size_t vocab, double strength) {
    Tensor t(tokens.size(), vocab);
    for (size_t i = 0; i < tokens.size(); ++i) t.at(i, static_cast<size_t>(tokens[i])) = strength;
    return t;
}

bool encloses(const Aabb& outer, const Aabb& inner) {
    for (int a = 0; a < 3; ++a) {
        if (outer.min[a] > inner.min[a] || outer.max[a] < inner.max[a]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("teacher forcing splits a sequence into input and target views") {
    pl::EncodedExample enc = pl::encode_example({{{1, 2, 3}, {4, 5, 6}}}, 8);
    REQUIRE(enc.seq.tokens.size() == 8);
    CHECK(enc.input.front() == kBosToken);
    CHECK(enc.input.size() == 7);
    CHECK(enc.targets.size() == 7);
    CHECK(enc.targets.back() == kEosToken);
    for (size_t i = 0; i + 1 < enc.input.size(); ++i) CHECK(enc.input[i + 1] == enc.targets[i]);
}

TEST_CASE("mean NLL of uniform logits is log vocab") {
    const size_t V = 11;
    Value logits = ad::constant(Tensor(std::vector<size_t>{3, V}));
    Value loss = pl::loss_base(logits, {0, 4, 10});
    CHECK(loss->value.item() == doctest::Approx(std::log(static_cast<double>(V))).epsilon(1e-12));

    // All probability on the target: loss ~ 0.
    Value sharp = ad::constant(one_hot_logits({2, 5}, V, 60.0));
    CHECK(pl::loss_base(sharp, {2, 5})->value.item() == doctest::Approx(0.0).scale(1).epsilon(1e-9));

    // Hand-computed two-token case: probabilities 0.5 and 0.25.
    Tensor hand(2, 4);
    const double q = std::log(0.125);
    hand.at(0, 0) = std::log(0.5);
    hand.at(0, 1) = std::log(0.25);
    hand.at(0, 2) = q;
    hand.at(0, 3) = q;
    hand.at(1, 0) = std::log(0.5);
    hand.at(1, 1) = std::log(0.25);
    hand.at(1, 2) = q;
    hand.at(1, 3) = q;
    Value hand_loss = pl::loss_base(ad::constant(hand), {0, 1});
    CHECK(hand_loss->value.item() ==
          doctest::Approx((std::log(2.0) + std::log(4.0)) / 2.0).epsilon(1e-12));

    CHECK_THROWS_AS(pl::loss_base(logits, {0, 1}), Error);
}

TEST_CASE("hard coverage reproduces the worked example") {
    const Aabb gt{{2, 2, 2}, {5, 5, 5}};
    const Aabb shrunk{{3, 2, 2}, {5, 5, 5}};
    CHECK(pl::coverage_hard({shrunk}, {gt}) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(pl::coverage_hard({{{1, 1, 1}, {6, 6, 6}}}, {gt}) == 0.0);
    CHECK(pl::coverage_hard({gt}, {gt}) == 0.0);
    CHECK_THROWS_AS(pl::coverage_hard({gt, gt}, {gt}), Error);
}

TEST_CASE("hard coverage is zero exactly when every box encloses its target") {
    Rng rng(42);
    auto rand_box = [&rng]() {
        IVec3 a{rng.uniform_int(0, 7), rng.uniform_int(0, 7), rng.uniform_int(0, 7)};
        IVec3 b{rng.uniform_int(0, 7), rng.uniform_int(0, 7), rng.uniform_int(0, 7)};
        return Aabb{{std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)},
                    {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)}};
    };
    for (int trial = 0; trial < 300; ++trial) {
        const size_t n = static_cast<size_t>(rng.uniform_int(1, 4));
        std::vector<Aabb> gt, dec;
        for (size_t i = 0; i < n; ++i) {
            gt.push_back(rand_box());
            dec.push_back(rand_box());
        }
        bool all_enclose = true;
        for (size_t i = 0; i < n; ++i) all_enclose &= encloses(dec[i], gt[i]);
        const double loss = pl::coverage_hard(dec, gt);
        CHECK(loss >= 0.0);
        CHECK((loss == 0.0) == all_enclose);
    }
}

TEST_CASE("soft coverage vanishes when the mass sits on the truth") {
    pl::EncodedExample enc = pl::encode_example({{{2, 2, 2}, {5, 5, 5}}}, 8);
    Value sharp = ad::constant(one_hot_logits(enc.targets, 8 + kCoordBase, 80.0));
    Value cov = pl::loss_coverage_soft(sharp, enc.roles, enc.seq);
    CHECK(cov->value.item() == doctest::Approx(0.0).scale(1).epsilon(1e-9));

    // Argmax variant equals the box formula on the same logits.
    const Tensor shrunk_logits =
        one_hot_logits(pl::encode_example({{{3, 2, 2}, {5, 5, 5}}}, 8).targets, 8 + kCoordBase,
                       80.0);
    CHECK(pl::coverage_hard_from_logits(shrunk_logits, enc.roles, enc.seq) ==
          doctest::Approx(1.0 / 6.0).epsilon(1e-15));

    // Underestimating a min bound is free; overshooting it is penalized.
    const Tensor wide =
        one_hot_logits(pl::encode_example({{{1, 2, 2}, {6, 5, 5}}}, 8).targets, 8 + kCoordBase,
                       80.0);
    CHECK(pl::coverage_hard_from_logits(wide, enc.roles, enc.seq) == 0.0);

    CHECK_THROWS_AS(pl::loss_coverage_soft(sharp, pl::encode_example({}, 8).roles, enc.seq),
                    Error);
}

TEST_CASE("total loss is base plus scaled coverage") {
    Value base = ad::constant(Tensor::scalar(2.0));
    Value cov = ad::constant(Tensor::scalar(0.5));
    CHECK(pl::loss_total(base, cov, 0.1)->value.item() == doctest::Approx(2.05).epsilon(1e-15));
    CHECK(pl::loss_total(base, cov, 0.0)->value.item() == 2.0);
    CHECK_THROWS_AS(pl::loss_total(base, cov, -1.0), Error);
}

TEST_CASE("view features are per-pixel local") {
    PlannerConfig cfg = tiny_config();
    ad::ParamStore store;
    pl::register_model(store, cfg);
    ad::Leaves leaves = ad::make_leaves(store);

    SparseVoxelGrid one(8, {{1, 1, 6}});
    Value f1 = pl::featurize_view(leaves, one);  // defaults to h = w = N
    REQUIRE(f1->value.rows() == 64);
    REQUIRE(f1->value.cols() == static_cast<size_t>(cfg.d));

    // All background pixels share one feature vector.
    const size_t hit_row = (8 - 1 - 6) * 8 + 1;
    const Tensor& t1 = f1->value;
    for (size_t p = 0; p < 64; ++p) {
        if (p == hit_row) continue;
        for (size_t j = 0; j < t1.cols(); ++j) CHECK(t1.at(p, j) == t1.at(63, j));
    }

    SparseVoxelGrid two(8, {{1, 1, 6}, {5, 2, 3}});
    Value f2 = pl::featurize_view(leaves, two);
    const size_t new_row = (8 - 1 - 3) * 8 + 5;
    for (size_t p = 0; p < 64; ++p) {
        for (size_t j = 0; j < t1.cols(); ++j) {
            if (p == new_row) continue;
            CHECK(f2->value.at(p, j) == t1.at(p, j));
        }
    }
    bool changed = false;
    for (size_t j = 0; j < t1.cols(); ++j) changed |= f2->value.at(new_row, j) != t1.at(new_row, j);
    CHECK(changed);

    CHECK_THROWS_AS(pl::featurize_view(leaves, SparseVoxelGrid(8, {})), Error);
}

TEST_CASE("mask fusion adds embedding rows pixel-wise") {
    PlannerConfig cfg = tiny_config();
    ad::ParamStore store;
    pl::register_model(store, cfg);

    SparseVoxelGrid grid(8, {{1, 1, 1}, {5, 5, 5}}, {0, 1});
    LabelMask2D mask = project_mask(grid, View{}, cfg.mask_hw, cfg.mask_hw, cfg.K);

    // Zeroed table: fusion is the identity.
    {
        ad::ParamStore zeroed;
        pl::register_model(zeroed, cfg);
        for (double& v : zeroed.value("mask_embed").values()) v = 0.0;
        ad::Leaves leaves = ad::make_leaves(zeroed);
        Value f = pl::featurize_view(leaves, grid, cfg.mask_hw, cfg.mask_hw);
        Value fused = pl::fuse_mask(leaves, f, mask, cfg.K);
        for (size_t i = 0; i < f->value.size(); ++i) CHECK(fused->value.at(i) == f->value.at(i));
    }

    ad::Leaves leaves = ad::make_leaves(store);
    Value f = pl::featurize_view(leaves, grid, cfg.mask_hw, cfg.mask_hw);

    // Uniform mask: every pixel shifts by the same row of E.
    LabelMask2D uniform = mask;
    for (int& e : uniform.entries) e = 3;
    Value fused_u = pl::fuse_mask(leaves, f, uniform, cfg.K);
    const Tensor& E = store.value("mask_embed");
    for (size_t p = 0; p < f->value.rows(); ++p) {
        for (size_t j = 0; j < f->value.cols(); ++j) {
            CHECK(fused_u->value.at(p, j) ==
                  doctest::Approx(f->value.at(p, j) + E.at(3, j)).epsilon(1e-12));
        }
    }

    // Flipping one pixel's label moves that feature by E[k'] - E[k].
    LabelMask2D flipped = uniform;
    flipped.entries[5] = 6;
    Value fused_f = pl::fuse_mask(leaves, f, flipped, cfg.K);
    for (size_t p = 0; p < f->value.rows(); ++p) {
        for (size_t j = 0; j < f->value.cols(); ++j) {
            const double expect = p == 5 ? E.at(6, j) - E.at(3, j) : 0.0;
            CHECK(fused_f->value.at(p, j) - fused_u->value.at(p, j) ==
                  doctest::Approx(expect).epsilon(1e-12).scale(1));
        }
    }

    LabelMask2D bad = mask;
    bad.entries[0] = cfg.K;  // outside the table
    bad.num_parts = cfg.K + 2;
    CHECK_THROWS_AS(pl::fuse_mask(leaves, f, bad, cfg.K), Error);
}

TEST_CASE("voxel tokens are fixed-length and order-free") {
    PlannerConfig cfg = tiny_config();
    ad::ParamStore store;
    pl::register_model(store, cfg);
    ad::Leaves leaves = ad::make_leaves(store);

    SparseVoxelGrid single(8, {{3, 3, 3}});
    Value q1 = pl::encode_voxel_tokens(leaves, single);
    CHECK(q1->value.rows() == static_cast<size_t>(cfg.L));
    CHECK(q1->value.cols() == static_cast<size_t>(cfg.d));
    q1->value.check_finite("q1");

    Rng rng(5);
    std::vector<IVec3> many;
    for (int i = 0; i < 300; ++i) {
        many.push_back({rng.uniform_int(0, 7), rng.uniform_int(0, 7), rng.uniform_int(0, 7)});
    }
    Value q2 = pl::encode_voxel_tokens(leaves, SparseVoxelGrid(8, many));
    CHECK(q2->value.rows() == static_cast<size_t>(cfg.L));

    // Construction order cannot matter: the grid canonicalizes.
    std::vector<IVec3> reversed(many.rbegin(), many.rend());
    Value q3 = pl::encode_voxel_tokens(leaves, SparseVoxelGrid(8, reversed));
    for (size_t i = 0; i < q2->value.size(); ++i) CHECK(q3->value.at(i) == q2->value.at(i));

    CHECK_THROWS_AS(pl::encode_voxel_tokens(leaves, SparseVoxelGrid(8, {})), Error);
}

TEST_CASE("raw inference mirrors the training graph") {
    PlannerConfig cfg = tiny_config();
    ad::ParamStore store;
    pl::register_model(store, cfg);
    pl::PlanExample ex = make_example(cfg, {{{1, 1, 1}, {3, 2, 2}}, {{4, 4, 4}, {6, 6, 5}}});
    pl::EncodedExample enc = pl::encode_example(ex.boxes, cfg.resolution);

    ad::Leaves leaves = ad::make_leaves(store);
    Value prefix_g = pl::conditioning_prefix(leaves, cfg, ex.grid, ex.mask);
    Value logits_g = pl::forward_logits(leaves, cfg, prefix_g, enc.input);

    const Tensor prefix_r = pl::prefix_raw(store, cfg, ex.grid, ex.mask);
    REQUIRE(prefix_r.rows() == static_cast<size_t>(cfg.prefix_len()));
    for (size_t i = 0; i < prefix_r.size(); ++i) {
        CHECK(prefix_r.at(i) == doctest::Approx(prefix_g->value.at(i)).epsilon(1e-9).scale(1));
    }
    const Tensor logits_r = pl::forward_logits_raw(store, cfg, prefix_r, enc.input);
    REQUIRE(logits_r.same_shape(logits_g->value));
    for (size_t i = 0; i < logits_r.size(); ++i) {
        CHECK(logits_r.at(i) == doctest::Approx(logits_g->value.at(i)).epsilon(1e-9).scale(1));
    }
}

TEST_CASE("planner losses pass the finite-difference check") {
    PlannerConfig cfg = tiny_config();
    cfg.d = 16;
    cfg.blocks = 1;
    cfg.max_boxes = 2;
    ad::ParamStore store;
    pl::register_model(store, cfg);
    pl::PlanExample ex = make_example(cfg, {{{1, 1, 1}, {3, 3, 2}}, {{5, 5, 5}, {6, 6, 6}}});
    pl::EncodedExample enc = pl::encode_example(ex.boxes, cfg.resolution);

    auto loss_fn = [&](const ad::Leaves& l) -> Value {
        Value prefix = pl::conditioning_prefix(l, cfg, ex.grid, ex.mask);
        Value logits = pl::forward_logits(l, cfg, prefix, enc.input);
        Value base = pl::loss_base(logits, enc.targets);
        Value cov = pl::loss_coverage_soft(logits, enc.roles, enc.seq);
        return pl::loss_total(base, cov, cfg.lambda_cov);
    };
    ad::GradCheckReport report = ad::grad_check(loss_fn, store, 1e-5, 250, 31);
    INFO("worst ", report.worst_param, "[", report.worst_index, "] err ", report.max_rel_err);
    CHECK(report.pass(1e-4));
    CHECK(report.coords_checked >= 250);
}

TEST_CASE("an overfit planner reproduces its training sequences") {
    PlannerConfig cfg = tiny_config();
    std::vector<pl::PlanExample> examples = {
        make_example(cfg, {{{0, 0, 0}, {2, 2, 2}}, {{4, 4, 4}, {7, 7, 7}}}),
        make_example(cfg, {{{1, 0, 1}, {3, 3, 3}}, {{5, 1, 0}, {7, 4, 2}}, {{0, 5, 4}, {2, 7, 7}}}),
        make_example(cfg, {{{2, 2, 0}, {5, 5, 1}}, {{2, 2, 4}, {5, 5, 7}}}),
    };
    ad::ParamStore store;
    pl::register_model(store, cfg);
    CHECK(store.total_values() < 1000000);

    pl::TrainStats stats = pl::train(store, cfg, examples);
    INFO("steps ", stats.steps_run, " loss ", stats.final_loss, " acc ", stats.final_accuracy);
    CHECK(stats.final_accuracy == 1.0);

    // Exact teacher-forced fit implies greedy decoding walks the same path.
    for (const pl::PlanExample& ex : examples) {
        pl::SampleResult out = pl::sample_boxes(store, cfg, ex.grid, ex.mask);
        CHECK_FALSE(out.truncated);
        REQUIRE(out.boxes.size() == ex.boxes.size());
        for (size_t k = 0; k < out.boxes.size(); ++k) CHECK(out.boxes[k] == ex.boxes[k]);
    }

    // Determinism across repeated calls, and temperature 0 = greedy.
    pl::SampleResult a = pl::sample_boxes(store, cfg, examples[0].grid, examples[0].mask);
    pl::SampleResult b = pl::sample_boxes(store, cfg, examples[0].grid, examples[0].mask,
                                          {0.0, 123});
    CHECK(a.boxes == b.boxes);
    pl::SampleResult t1 = pl::sample_boxes(store, cfg, examples[0].grid, examples[0].mask,
                                           {0.7, 5});
    pl::SampleResult t2 = pl::sample_boxes(store, cfg, examples[0].grid, examples[0].mask,
                                           {0.7, 5});
    CHECK(t1.boxes == t2.boxes);

    // Zero budget: only EOS is reachable.
    PlannerConfig zero = cfg;
    zero.max_boxes = 0;
    CHECK(pl::sample_boxes(store, zero, examples[0].grid, examples[0].mask).boxes.empty());

    // Budget one box below the training sequence: truncation flagged.
    PlannerConfig clipped = cfg;
    clipped.max_boxes = 1;
    pl::SampleResult cut = pl::sample_boxes(store, clipped, examples[1].grid, examples[1].mask);
    CHECK(cut.truncated);
    CHECK(cut.boxes.size() == 1);
}

TEST_CASE("a zeroed frozen mask table makes the prefix mask-blind") {
    PlannerConfig cfg = tiny_config();
    ad::ParamStore store;
    pl::register_model(store, cfg);
    for (double& v : store.value("mask_embed").values()) v = 0.0;
    store.set_trainable("mask_embed", false);

    pl::PlanExample ex = make_example(cfg, {{{1, 1, 1}, {3, 3, 3}}, {{5, 5, 5}, {7, 7, 7}}});
    LabelMask2D other = ex.mask;
    for (int& e : other.entries) e = (e + 1) % cfg.K;

    const Tensor p1 = pl::prefix_raw(store, cfg, ex.grid, ex.mask);
    const Tensor p2 = pl::prefix_raw(store, cfg, ex.grid, other);
    for (size_t i = 0; i < p1.size(); ++i) CHECK(p1.at(i) == p2.at(i));
}
