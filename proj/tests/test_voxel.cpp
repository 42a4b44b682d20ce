#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "partflow/voxel.hpp"

using namespace partflow;

namespace {

// Axis-aligned cuboid surface spanning [lo, hi] per axis, 12 triangles.
TriMesh cuboid_mesh(Vec3 lo, Vec3 hi) {
    TriMesh m;
    m.vertices = {
        {lo.x, lo.y, lo.z}, {hi.x, lo.y, lo.z}, {hi.x, hi.y, lo.z}, {lo.x, hi.y, lo.z},
        {lo.x, lo.y, hi.z}, {hi.x, lo.y, hi.z}, {hi.x, hi.y, hi.z}, {lo.x, hi.y, hi.z},
    };
    m.triangles = {
        {0, 1, 2}, {0, 2, 3},  // z = lo
        {4, 6, 5}, {4, 7, 6},  // z = hi
        {0, 5, 1}, {0, 4, 5},  // y = lo
        {3, 2, 6}, {3, 6, 7},  // y = hi
        {0, 3, 7}, {0, 7, 4},  // x = lo
        {1, 5, 6}, {1, 6, 2},  // x = hi
    };
    return m;
}

// Dense barycentric sampling; any sample strictly inside the box proves
// overlap, so the SAT must never return false when this fires.
bool sampled_point_in_box(const Vec3& center, const Vec3& half, const Vec3& a, const Vec3& b,
                          const Vec3& c, double shrink) {
    const int steps = 60;
    for (int i = 0; i <= steps; ++i) {
        for (int j = 0; j <= steps - i; ++j) {
            const double u = static_cast<double>(i) / steps;
            const double v = static_cast<double>(j) / steps;
            const double w = 1.0 - u - v;
            const Vec3 p = a * u + b * v + c * w;
            if (std::abs(p.x - center.x) <= half.x - shrink &&
                std::abs(p.y - center.y) <= half.y - shrink &&
                std::abs(p.z - center.z) <= half.z - shrink) {
                return true;
            }
        }
    }
    return false;
}

Vec3 random_vec(Rng& rng, double lo, double hi) {
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

}  // namespace

// ---------------------------------------------------------------------------
// SparseVoxelGrid basics
// ---------------------------------------------------------------------------

TEST_CASE("grid stores positions in canonical z-y-x order without duplicates") {
    SparseVoxelGrid g(8, {{3, 3, 3}, {0, 0, 1}, {5, 0, 0}, {0, 0, 1}, {1, 0, 0}});
    REQUIRE(g.size() == 4);
    CHECK(g.positions()[0] == IVec3{1, 0, 0});
    CHECK(g.positions()[1] == IVec3{5, 0, 0});
    CHECK(g.positions()[2] == IVec3{0, 0, 1});
    CHECK(g.positions()[3] == IVec3{3, 3, 3});
}

TEST_CASE("grid rejects out-of-range voxels") {
    CHECK_THROWS_AS(SparseVoxelGrid(4, {{4, 0, 0}}), Error);
    CHECK_THROWS_AS(SparseVoxelGrid(4, {{0, -1, 0}}), Error);
    CHECK_NOTHROW(SparseVoxelGrid(4, {{3, 3, 3}}));
}

TEST_CASE("labeled grid keeps one label per position") {
    SparseVoxelGrid g(8, {{1, 1, 1}, {2, 2, 2}, {1, 1, 1}}, {4, 7, 4});
    CHECK(g.size() == 2);
    CHECK(g.label_at({1, 1, 1}) == 4);
    CHECK(g.label_at({2, 2, 2}) == 7);
    CHECK(g.part_ids() == std::vector<int>{4, 7});

    CHECK_THROWS_AS(SparseVoxelGrid(8, {{1, 1, 1}, {1, 1, 1}}, {1, 2}), Error);
    CHECK_THROWS_AS(SparseVoxelGrid(8, {{1, 1, 1}}, std::vector<int>{}), Error);
    CHECK_THROWS_AS(SparseVoxelGrid(8, {{1, 1, 1}}, {-1}), Error);
}

TEST_CASE("index_of and contains agree") {
    SparseVoxelGrid g(8, {{1, 2, 3}, {4, 5, 6}});
    CHECK(g.contains({1, 2, 3}));
    CHECK(g.contains({4, 5, 6}));
    CHECK_FALSE(g.contains({0, 0, 0}));
    CHECK(g.index_of({0, 0, 0}) == -1);
    CHECK(g.positions()[static_cast<size_t>(g.index_of({4, 5, 6}))] == IVec3{4, 5, 6});
}

TEST_CASE("aabb volume and containment use inclusive indices") {
    Aabb box{{0, 0, 0}, {2, 2, 2}};
    CHECK(box.volume() == 27);
    CHECK(box.contains({2, 2, 2}));
    CHECK_FALSE(box.contains({3, 2, 2}));
    CHECK(Aabb{{1, 1, 1}, {1, 1, 1}}.volume() == 1);
    CHECK_FALSE(Aabb{{2, 0, 0}, {1, 5, 5}}.valid());
    CHECK(box.inside_grid(3));
    CHECK_FALSE(box.inside_grid(2));
}

// ---------------------------------------------------------------------------
// Triangle-box overlap
// ---------------------------------------------------------------------------

TEST_CASE("separated triangle and box do not overlap") {
    const Vec3 center{0, 0, 0}, half{0.5, 0.5, 0.5};
    CHECK_FALSE(triangle_box_overlap(center, half, {2, 0, 0}, {3, 0, 0}, {2, 1, 0}));
    CHECK(triangle_box_overlap(center, half, {0, 0, 0}, {0.1, 0, 0}, {0, 0.1, 0}));
    // Touching a face counts as overlap (conservative).
    CHECK(triangle_box_overlap(center, half, {0.5, -1, -1}, {0.5, 1, -1}, {0.5, 0, 1}));
}

TEST_CASE("sat never misses an overlap found by dense sampling") {
    Rng rng(2024);
    int positives = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const Vec3 center = random_vec(rng, -1, 1);
        const Vec3 half{rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6), rng.uniform(0.1, 0.6)};
        const Vec3 a = random_vec(rng, -1.5, 1.5);
        const Vec3 b = random_vec(rng, -1.5, 1.5);
        const Vec3 c = random_vec(rng, -1.5, 1.5);
        const bool sat = triangle_box_overlap(center, half, a, b, c);
        if (sampled_point_in_box(center, half, a, b, c, 1e-9)) {
            CHECK(sat);
            ++positives;
        }
        if (!sat) {
            // Claimed separation: no sample may land strictly inside.
            CHECK_FALSE(sampled_point_in_box(center, half, a, b, c, 1e-9));
        }
    }
    CHECK(positives > 30);  // the sweep exercised real overlaps
}

// ---------------------------------------------------------------------------
// Voxelization
// ---------------------------------------------------------------------------

TEST_CASE("unit cube at resolution 4 fills exactly the 56 shell cells") {
    const TriMesh cube = cuboid_mesh({-0.5, -0.5, -0.5}, {0.5, 0.5, 0.5});
    SparseVoxelGrid g = voxelize(cube, 4);

    // Combinatorial reference: the surface planes lie on the grid boundary,
    // so a cell intersects the surface iff it touches the boundary layer.
    std::set<std::array<int, 3>> expected;
    for (int x = 0; x < 4; ++x) {
        for (int y = 0; y < 4; ++y) {
            for (int z = 0; z < 4; ++z) {
                const bool shell = x == 0 || x == 3 || y == 0 || y == 3 || z == 0 || z == 3;
                if (shell) expected.insert({x, y, z});
            }
        }
    }
    REQUIRE(expected.size() == 56);
    REQUIRE(g.size() == 56);
    for (const IVec3& p : g.positions()) {
        CHECK(expected.count({p.x, p.y, p.z}) == 1);
    }
}

TEST_CASE("a triangle inside one cell activates only that cell") {
    // Cell (1,2,3) of an 8-grid spans [-0.375,-0.25]x[-0.25,-0.125]x[-0.125,0].
    TriMesh m;
    m.vertices = {{-0.36, -0.24, -0.11}, {-0.27, -0.24, -0.11}, {-0.30, -0.14, -0.01}};
    m.triangles = {{0, 1, 2}};
    SparseVoxelGrid g = voxelize(m, 8);
    REQUIRE(g.size() == 1);
    CHECK(g.positions()[0] == IVec3{1, 2, 3});
}

TEST_CASE("voxelize rejects empty and out-of-bounds meshes") {
    TriMesh empty;
    CHECK_THROWS_AS(voxelize(empty, 8), Error);

    TriMesh degenerate;
    degenerate.vertices = {{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}};  // collinear
    degenerate.triangles = {{0, 0, 0}, {0, 1, 2}};
    CHECK_THROWS_AS(voxelize(degenerate, 8), Error);

    TriMesh outside;
    outside.vertices = {{0, 0, 0}, {0.7, 0, 0}, {0, 0.7, 0}};
    outside.triangles = {{0, 1, 2}};
    CHECK_THROWS_AS(voxelize(outside, 8), Error);

    TriMesh bad_index;
    bad_index.vertices = {{0, 0, 0}, {0.1, 0, 0}, {0, 0.1, 0}};
    bad_index.triangles = {{0, 1, 5}};
    CHECK_THROWS_AS(voxelize(bad_index, 8), Error);
}

TEST_CASE("voxelize is invariant under triangle reordering") {
    TriMesh m = cuboid_mesh({-0.4, -0.3, -0.2}, {0.3, 0.4, 0.45});
    TriMesh shuffled = m;
    std::reverse(shuffled.triangles.begin(), shuffled.triangles.end());
    SparseVoxelGrid g1 = voxelize(m, 16);
    SparseVoxelGrid g2 = voxelize(shuffled, 16);
    REQUIRE(g1.size() == g2.size());
    CHECK(g1.positions() == g2.positions());
}

// ---------------------------------------------------------------------------
// Composition and box queries
// ---------------------------------------------------------------------------

TEST_CASE("compose unions disjoint parts with labels") {
    SparseVoxelGrid a(8, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}});
    SparseVoxelGrid b(8, {{0, 5, 0}, {1, 5, 0}, {2, 5, 0}, {3, 5, 0}, {4, 5, 0}, {5, 5, 0}, {6, 5, 0}});
    SparseVoxelGrid merged = compose({{3, a}, {1, b}});
    REQUIRE(merged.size() == 12);
    CHECK(merged.label_at({0, 0, 0}) == 3);
    CHECK(merged.label_at({6, 5, 0}) == 1);

    // Union equals the set union, checked by enumeration.
    std::set<std::array<int, 3>> expect;
    for (const IVec3& p : a.positions()) expect.insert({p.x, p.y, p.z});
    for (const IVec3& p : b.positions()) expect.insert({p.x, p.y, p.z});
    for (const IVec3& p : merged.positions()) CHECK(expect.count({p.x, p.y, p.z}) == 1);
}

TEST_CASE("compose gives contested voxels to the lowest part id") {
    SparseVoxelGrid v(4, {{2, 2, 2}});
    SparseVoxelGrid merged = compose({{2, v}, {1, v}});
    REQUIRE(merged.size() == 1);
    CHECK(merged.label_at({2, 2, 2}) == 1);
}

TEST_CASE("compose of an empty list is an empty grid") {
    SparseVoxelGrid g = compose({});
    CHECK(g.empty());
    CHECK(g.labeled());
}

TEST_CASE("compose rejects mixed resolutions") {
    SparseVoxelGrid a(4, {{0, 0, 0}});
    SparseVoxelGrid b(8, {{0, 0, 0}});
    CHECK_THROWS_AS(compose({{0, a}, {1, b}}), Error);
}

TEST_CASE("part_aabb matches the spec examples") {
    SparseVoxelGrid g(8, {{1, 2, 3}, {4, 5, 6}}, {2, 2});
    Aabb box = part_aabb(g, 2);
    CHECK(box.min == IVec3{1, 2, 3});
    CHECK(box.max == IVec3{4, 5, 6});

    SparseVoxelGrid single(8, {{0, 0, 0}}, {0});
    Aabb sb = part_aabb(single, 0);
    CHECK(sb.min == IVec3{0, 0, 0});
    CHECK(sb.max == IVec3{0, 0, 0});

    CHECK_THROWS_AS(part_aabb(g, 9), Error);
    SparseVoxelGrid unlabeled(8, {{0, 0, 0}});
    CHECK_THROWS_AS(part_aabb(unlabeled, 0), Error);
}

TEST_CASE("part_aabb of 100 random voxels matches an exhaustive scan") {
    Rng rng(7777);
    std::vector<IVec3> pos;
    for (int i = 0; i < 100; ++i) {
        pos.push_back({rng.uniform_int(0, 31), rng.uniform_int(0, 31), rng.uniform_int(0, 31)});
    }
    SparseVoxelGrid g(32, pos, std::vector<int>(pos.size(), 5));
    Aabb box = part_aabb(g, 5);

    int mn[3] = {32, 32, 32}, mx[3] = {-1, -1, -1};
    for (const IVec3& p : pos) {
        for (int a = 0; a < 3; ++a) {
            mn[a] = std::min(mn[a], p[a]);
            mx[a] = std::max(mx[a], p[a]);
        }
    }
    CHECK(box.min == IVec3{mn[0], mn[1], mn[2]});
    CHECK(box.max == IVec3{mx[0], mx[1], mx[2]});

    // Minimality: shrinking any face excludes at least one part voxel.
    for (int a = 0; a < 3; ++a) {
        Aabb shrunk_min = box;
        shrunk_min.min[a] += 1;
        Aabb shrunk_max = box;
        shrunk_max.max[a] -= 1;
        CHECK(voxels_in_box(g, shrunk_min).size() < g.size());
        CHECK(voxels_in_box(g, shrunk_max).size() < g.size());
    }
}

TEST_CASE("voxels_in_box filters by inclusive bounds") {
    SparseVoxelGrid g(8, {{0, 0, 0}, {1, 1, 1}, {5, 5, 5}});
    auto inside = voxels_in_box(g, {{0, 0, 0}, {2, 2, 2}});
    REQUIRE(inside.size() == 2);
    CHECK(inside[0] == IVec3{0, 0, 0});
    CHECK(inside[1] == IVec3{1, 1, 1});

    CHECK(voxels_in_box(g, {{0, 0, 0}, {7, 7, 7}}).size() == 3);
    CHECK(voxels_in_box(g, {{6, 6, 6}, {7, 7, 7}}).empty());
}

TEST_CASE("a part box captures at least all of its own voxels") {
    // Two interleaved parts: part 0's box also covers part 1 voxels.
    SparseVoxelGrid g(8, {{0, 0, 0}, {2, 0, 0}, {1, 0, 0}}, {0, 0, 1});
    Aabb box = part_aabb(g, 0);
    auto inside = voxels_in_box(g, box);
    CHECK(inside.size() == 3);  // includes the noise voxel from part 1
    int own = 0;
    for (const IVec3& p : inside) {
        if (g.label_at(p) == 0) ++own;
    }
    CHECK(own == 2);
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

TEST_CASE("single voxel projects to one pixel in the front view") {
    SparseVoxelGrid g(8, {{2, 3, 0}}, {1});
    LabelMask2D mask = project_mask(g, View{}, 8, 8, 4);
    int non_background = 0;
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
            if (mask.at(i, j) != 3) {
                ++non_background;
                CHECK(mask.at(i, j) == 1);
                CHECK(i == 7);  // z=0 maps to the bottom row
                CHECK(j == 2);  // x maps to the column
            }
        }
    }
    CHECK(non_background == 1);
}

TEST_CASE("empty grid projects to all background") {
    SparseVoxelGrid g(8, {}, {});
    LabelMask2D mask = project_mask(g, View{}, 8, 8, 5);
    for (int e : mask.entries) CHECK(e == 4);

    DepthRender r = render_depth(g, View{}, 8, 8);
    for (double o : r.occupancy) CHECK(o == 0.0);
    for (double d : r.depth) CHECK(d == 1.0);
}

TEST_CASE("nearer voxel wins along the view ray") {
    // Front view looks along -y: larger y is closer to the camera.
    SparseVoxelGrid g(8, {{4, 1, 2}, {4, 6, 2}}, {1, 2});
    LabelMask2D mask = project_mask(g, View{}, 8, 8, 4);
    CHECK(mask.at(8 - 1 - 2, 4) == 2);

    DepthRender r = render_depth(g, View{}, 8, 8);
    CHECK(r.occupancy[(8 - 1 - 2) * 8 + 4] == 1.0);
    // y=6 is one step in from the y=7 face: depth 1/8.
    CHECK(r.depth[(8 - 1 - 2) * 8 + 4] == doctest::Approx(1.0 / 8).epsilon(1e-14));
}

TEST_CASE("projection matches a brute-force ray march on random grids") {
    Rng rng(31337);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 8;
        std::vector<IVec3> pos;
        std::vector<int> lab;
        std::set<std::array<int, 3>> seen;
        const int count = rng.uniform_int(5, 40);
        for (int i = 0; i < count; ++i) {
            IVec3 p{rng.uniform_int(0, n - 1), rng.uniform_int(0, n - 1), rng.uniform_int(0, n - 1)};
            if (!seen.insert({p.x, p.y, p.z}).second) continue;
            pos.push_back(p);
            lab.push_back(rng.uniform_int(0, 2));
        }
        SparseVoxelGrid g(n, pos, lab);
        const int num_parts = 4;
        LabelMask2D mask = project_mask(g, View{}, n, n, num_parts);

        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                // March -y: scan y from high to low at (x=j, z=n-1-i).
                int expect = num_parts - 1;
                for (int y = n - 1; y >= 0; --y) {
                    IVec3 p{j, y, n - 1 - i};
                    if (g.contains(p)) {
                        expect = g.label_at(p);
                        break;
                    }
                }
                CHECK(mask.at(i, j) == expect);
            }
        }
    }
}

TEST_CASE("projection footprints cover the grid when downsampling") {
    // 8-grid rendered to a 4x4 mask: each pixel covers a 2x2 column bundle.
    SparseVoxelGrid g(8, {{1, 0, 0}}, {0});
    LabelMask2D mask = project_mask(g, View{}, 4, 4, 3);
    CHECK(mask.at(3, 0) == 0);  // x in {0,1}, z in {0,1} bundle at bottom-left
    int non_background = 0;
    for (int e : mask.entries) {
        if (e != 2) ++non_background;
    }
    CHECK(non_background == 1);
}

TEST_CASE("project_mask validates labels and arguments") {
    SparseVoxelGrid unlabeled(8, {{0, 0, 0}});
    CHECK_THROWS_AS(project_mask(unlabeled, View{}, 8, 8, 4), Error);

    SparseVoxelGrid g(8, {{0, 0, 0}}, {3});
    // Label 3 collides with background index 3 when num_parts = 4.
    CHECK_THROWS_AS(project_mask(g, View{}, 8, 8, 4), Error);
    CHECK_NOTHROW(project_mask(g, View{}, 8, 8, 5));
}

TEST_CASE("other view axes select the expected faces") {
    // One voxel at each extreme corner pair along x.
    SparseVoxelGrid g(4, {{0, 1, 1}, {3, 1, 1}}, {0, 1});
    LabelMask2D from_pos_x = project_mask(g, View{ViewAxis::X, +1}, 4, 4, 3);
    LabelMask2D from_neg_x = project_mask(g, View{ViewAxis::X, -1}, 4, 4, 3);
    // +x view marches x ascending: voxel at x=0 is hit first.
    CHECK(from_pos_x.at(4 - 1 - 1, 1) == 0);
    CHECK(from_neg_x.at(4 - 1 - 1, 1) == 1);

    LabelMask2D top = project_mask(g, View{ViewAxis::Z, -1}, 4, 4, 3);
    // -z view: pixel (i=row from +y, j=x).
    CHECK(top.at(4 - 1 - 1, 0) == 0);
    CHECK(top.at(4 - 1 - 1, 3) == 1);
}
