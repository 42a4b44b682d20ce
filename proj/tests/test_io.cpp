#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "partflow/box_codec.hpp"
#include "partflow/config.hpp"
#include "partflow/io.hpp"

using namespace partflow;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("pf_io_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("voxel grids survive the JSON round trip") {
    TempDir dir;
    SparseVoxelGrid labeled(16, {{1, 2, 3}, {4, 5, 6}, {0, 0, 0}}, {1, 0, 1});
    io::save_grid(dir.file("g.json"), labeled);
    SparseVoxelGrid back = io::load_grid(dir.file("g.json"));
    CHECK(back.resolution() == 16);
    CHECK(back.positions() == labeled.positions());
    CHECK(back.labels() == labeled.labels());
    CHECK(back.labeled());

    SparseVoxelGrid plain(8, {{7, 7, 7}});
    io::save_grid(dir.file("p.json"), plain);
    SparseVoxelGrid plain_back = io::load_grid(dir.file("p.json"));
    CHECK_FALSE(plain_back.labeled());
    CHECK(plain_back.positions() == plain.positions());

    // labels: null is the unlabeled spelling
    io::json j = io::load_json(dir.file("p.json"));
    CHECK(j["labels"].is_null());

    CHECK_THROWS_AS(io::load_grid(dir.file("missing.json")), Error);
    std::ofstream bad(dir.file("bad.json"));
    bad << "{ not json";
    bad.close();
    CHECK_THROWS_AS(io::load_json(dir.file("bad.json")), Error);
}

TEST_CASE("box lists survive the JSON round trip") {
    TempDir dir;
    std::vector<Aabb> boxes = {{{0, 1, 2}, {3, 4, 5}}, {{2, 2, 2}, {2, 2, 2}}};
    io::save_boxes(dir.file("b.json"), boxes);
    std::vector<Aabb> back = io::load_boxes(dir.file("b.json"));
    REQUIRE(back.size() == 2);
    CHECK(back[0] == boxes[0]);
    CHECK(back[1] == boxes[1]);

    std::ofstream swapped(dir.file("swapped.json"));
    swapped << R"([{"min":[3,0,0],"max":[0,0,0]}])";
    swapped.close();
    CHECK_THROWS_AS(io::load_boxes(dir.file("swapped.json")), Error);
}

TEST_CASE("masks validate on load") {
    TempDir dir;
    LabelMask2D mask;
    mask.height = 2;
    mask.width = 3;
    mask.num_parts = 4;
    mask.entries = {0, 1, 3, 3, 2, 0};
    io::save_mask(dir.file("m.json"), mask);
    LabelMask2D back = io::load_mask(dir.file("m.json"));
    CHECK(back.height == 2);
    CHECK(back.width == 3);
    CHECK(back.num_parts == 4);
    CHECK(back.entries == mask.entries);

    io::json j = io::mask_to_json(mask);
    j["entries"][0] = 9;  // outside num_parts
    CHECK_THROWS_AS(io::mask_from_json(j), Error);
}

TEST_CASE("token streams use the N header plus whitespace ids") {
    TempDir dir;
    BoxTokenSequence seq = tokenize({{{1, 2, 3}, {4, 5, 6}}}, 16);
    io::save_tokens(dir.file("t.txt"), seq);

    std::ifstream in(dir.file("t.txt"));
    std::string first;
    std::getline(in, first);
    CHECK(first == "N=16");

    BoxTokenSequence back = io::load_tokens(dir.file("t.txt"));
    CHECK(back.resolution == 16);
    CHECK(back.tokens == seq.tokens);
    CHECK(detokenize(back) == detokenize(seq));

    std::ofstream bad(dir.file("bad.txt"));
    bad << "17 3 4\n";
    bad.close();
    CHECK_THROWS_AS(io::load_tokens(dir.file("bad.txt")), Error);
}

TEST_CASE("obj parsing handles slash forms and fans polygons") {
    const std::string text =
        "# comment\n"
        "v 0 0 0\n"
        "v 1 0 0\n"
        "v 1 1 0\n"
        "v 0 1 0\n"
        "vn 0 0 1\n"
        "f 1/1 2/2/1 3//1 4\n";
    TriMesh mesh = io::obj_from_string(text);
    REQUIRE(mesh.vertices.size() == 4);
    REQUIRE(mesh.triangles.size() == 2);  // quad -> two triangles
    CHECK(mesh.triangles[0] == std::array<int, 3>{0, 1, 2});
    CHECK(mesh.triangles[1] == std::array<int, 3>{0, 2, 3});
    CHECK(mesh.vertices[2].x == 1.0);

    // negative indices count back from the latest vertex
    TriMesh neg = io::obj_from_string("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n");
    REQUIRE(neg.triangles.size() == 1);
    CHECK(neg.triangles[0] == std::array<int, 3>{0, 1, 2});

    CHECK_THROWS_AS(io::obj_from_string("f 1 2\n"), Error);
    CHECK_THROWS_AS(io::obj_from_string("v 1 2\n"), Error);
}

TEST_CASE("checkpoints restore weights, step count and config hash") {
    TempDir dir;
    ad::ParamStore store;
    store.add("enc.w", {3, 4}, 0.7, 11);
    store.add("enc.b", {1, 4}, 0.7, 12);
    store.set_step_count(42);
    io::save_checkpoint(dir.file("w.ckpt"), store, 0xabcdef1234ull);

    ad::ParamStore fresh;
    io::CheckpointMeta meta = io::load_checkpoint(dir.file("w.ckpt"), fresh);
    CHECK(meta.config_hash == 0xabcdef1234ull);
    CHECK(meta.step == 42);
    CHECK(fresh.step_count() == 42);
    REQUIRE(fresh.has("enc.w"));
    REQUIRE(fresh.has("enc.b"));
    CHECK(fresh.value("enc.w").shape() == std::vector<size_t>{3, 4});
    for (size_t i = 0; i < 12; ++i) {
        // float32 storage quantizes
        CHECK(fresh.value("enc.w").at(i) ==
              doctest::Approx(store.value("enc.w").at(i)).epsilon(1e-6));
    }

    // Pre-registered shapes must agree.
    ad::ParamStore clash;
    clash.add("enc.w", {2, 2}, 0.1, 1);
    CHECK_THROWS_AS(io::load_checkpoint(dir.file("w.ckpt"), clash), Error);

    // Loading twice is deterministic to the bit.
    ad::ParamStore a, b;
    io::load_checkpoint(dir.file("w.ckpt"), a);
    io::load_checkpoint(dir.file("w.ckpt"), b);
    for (size_t i = 0; i < 12; ++i) CHECK(a.value("enc.w").at(i) == b.value("enc.w").at(i));

    std::ofstream junk(dir.file("junk.ckpt"), std::ios::binary);
    junk << "nope";
    junk.close();
    CHECK_THROWS_AS(io::load_checkpoint(dir.file("junk.ckpt"), a), Error);
}

TEST_CASE("configs round-trip through JSON and keep defaults for gaps") {
    PipelineConfig c;
    c.planner.lambda_cov = 0.25;
    c.synth.beta = 0.4;
    c.datagen.count = 64;
    nlohmann::json j = to_json(c);
    PipelineConfig back = pipeline_config_from_json(j);
    CHECK(back.planner.lambda_cov == 0.25);
    CHECK(back.synth.beta == 0.4);
    CHECK(back.datagen.count == 64);
    CHECK(back.planner.d == c.planner.d);
    CHECK(config_hash(back) == config_hash(c));

    // Partial document: unspecified fields keep their defaults.
    PipelineConfig partial = pipeline_config_from_json(nlohmann::json{
        {"planner", {{"d", 32}, {"heads", 2}}},
    });
    CHECK(partial.planner.d == 32);
    CHECK(partial.planner.heads == 2);
    CHECK(partial.planner.blocks == PlannerConfig{}.blocks);
    CHECK(partial.synth.beta == SynthConfig{}.beta);

    // Different settings change the fingerprint.
    PipelineConfig other = c;
    other.planner.steps += 1;
    CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("config invariants are enforced") {
    CHECK_THROWS_AS(planner_config_from_json({{"lambda_cov", -0.5}}), Error);
    CHECK_THROWS_AS(planner_config_from_json({{"d", 30}, {"heads", 4}}), Error);
    CHECK_THROWS_AS(synth_config_from_json({{"beta", 1.5}}), Error);
    CHECK_THROWS_AS(synth_config_from_json({{"alpha", 0.0}}), Error);
    CHECK_THROWS_AS(datagen_config_from_json({{"train_ratio", 0.5}, {"val_ratio", 0.1}}), Error);
    CHECK_THROWS_AS(eval_settings_from_json({{"tau_loose", 0.0}}), Error);
    CHECK_THROWS_AS(planner_config_from_json({{"d", "many"}}), Error);

    PipelineConfig c;
    CHECK_NOTHROW(c.validate());
}
