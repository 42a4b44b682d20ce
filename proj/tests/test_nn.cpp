#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "partflow/nn.hpp"

using namespace partflow;
using ad::Value;

namespace {

Tensor random_tensor(size_t rows, size_t cols, uint64_t seed, double scale = 1.0) {
    Tensor t(rows, cols);
    Rng rng(seed);
    for (double& v : t.values()) v = rng.uniform(-scale, scale);
    return t;
}

}  // namespace

TEST_CASE("sinusoid rows follow the doubling frequency ladder") {
    Tensor f = nn::sinusoid_rows({0.0, 0.25, 1.0}, 6);
    REQUIRE(f.rows() == 3);
    REQUIRE(f.cols() == 6);
    // value 0: all sines 0, all cosines 1
    for (size_t k = 0; k < 3; ++k) {
        CHECK(f.at(0, 2 * k) == 0.0);
        CHECK(f.at(0, 2 * k + 1) == 1.0);
    }
    // value 0.25 at frequencies pi, 2pi, 4pi
    CHECK(f.at(1, 0) == doctest::Approx(std::sin(0.25 * M_PI)).epsilon(1e-15));
    CHECK(f.at(1, 2) == doctest::Approx(1.0).epsilon(1e-15));       // sin(pi/2)
    CHECK(f.at(1, 3) == doctest::Approx(0.0).scale(1).epsilon(1e-15));
    CHECK(f.at(1, 4) == doctest::Approx(0.0).scale(1).epsilon(1e-15));  // sin(pi)
    for (size_t j = 0; j < 6; ++j) {
        CHECK(f.at(2, j) >= -1.0);
        CHECK(f.at(2, j) <= 1.0);
    }
    CHECK_THROWS_AS(nn::sinusoid_rows({0.5}, 5), Error);
}

TEST_CASE("position sinusoids concatenate per-axis features at cell centers") {
    std::vector<IVec3> pos = {{1, 2, 3}, {0, 0, 0}};
    Tensor f = nn::sinusoid_positions(pos, 8, 4);
    REQUIRE(f.rows() == 2);
    REQUIRE(f.cols() == 12);
    Tensor x_axis = nn::sinusoid_rows({1.5 / 8.0, 0.5 / 8.0}, 4);
    Tensor y_axis = nn::sinusoid_rows({2.5 / 8.0, 0.5 / 8.0}, 4);
    Tensor z_axis = nn::sinusoid_rows({3.5 / 8.0, 0.5 / 8.0}, 4);
    for (size_t i = 0; i < 2; ++i) {
        for (size_t j = 0; j < 4; ++j) {
            CHECK(f.at(i, j) == x_axis.at(i, j));
            CHECK(f.at(i, 4 + j) == y_axis.at(i, j));
            CHECK(f.at(i, 8 + j) == z_axis.at(i, j));
        }
    }
}

TEST_CASE("zeroed output projections make the block an exact identity") {
    ad::ParamStore store;
    nn::register_transformer_block(store, "blk", 8, 4, 21);
    for (const char* name : {"blk.attn.wo.w", "blk.attn.wo.b", "blk.ffn.l2.w", "blk.ffn.l2.b"}) {
        for (double& v : store.value(name).values()) v = 0.0;
    }
    ad::Leaves leaves = ad::make_leaves(store);
    Tensor x = random_tensor(5, 8, 303);
    Value out = nn::transformer_block(leaves, "blk", ad::constant(x), 2, true);
    REQUIRE(out->value.same_shape(x));
    for (size_t i = 0; i < x.size(); ++i) CHECK(out->value.at(i) == x.at(i));
}

TEST_CASE("causal attention never looks ahead") {
    ad::ParamStore store;
    nn::register_transformer_block(store, "blk", 8, 4, 22);
    ad::Leaves leaves = ad::make_leaves(store);
    const size_t T = 6;
    Tensor x = random_tensor(T, 8, 404);
    Tensor base = nn::transformer_block(leaves, "blk", ad::constant(x), 2, true)->value;

    for (size_t t = 0; t + 1 < T; ++t) {
        Tensor poked = x;
        for (size_t j = 0; j < 8; ++j) poked.at(t + 1, j) += 0.37 + static_cast<double>(j);
        Tensor out = nn::transformer_block(leaves, "blk", ad::constant(poked), 2, true)->value;
        for (size_t r = 0; r <= t; ++r) {
            for (size_t j = 0; j < 8; ++j) CHECK(out.at(r, j) == base.at(r, j));
        }
        bool changed = false;
        for (size_t j = 0; j < 8; ++j) changed |= out.at(t + 1, j) != base.at(t + 1, j);
        CHECK(changed);
    }
}

TEST_CASE("a single token sees no difference between the two masks") {
    ad::ParamStore store;
    nn::register_transformer_block(store, "blk", 8, 2, 23);
    ad::Leaves leaves = ad::make_leaves(store);
    Tensor x = random_tensor(1, 8, 505);
    Tensor causal = nn::transformer_block(leaves, "blk", ad::constant(x), 4, true)->value;
    Tensor plain = nn::transformer_block(leaves, "blk", ad::constant(x), 4, false)->value;
    for (size_t i = 0; i < 8; ++i) CHECK(causal.at(i) == plain.at(i));
}

TEST_CASE("unmasked self-attention is permutation equivariant") {
    ad::ParamStore store;
    nn::register_transformer_block(store, "blk", 6, 4, 24);
    ad::Leaves leaves = ad::make_leaves(store);
    Tensor x = random_tensor(4, 6, 606);
    Tensor y = nn::transformer_block(leaves, "blk", ad::constant(x), 3, false)->value;

    const size_t perm[4] = {2, 0, 3, 1};
    Tensor xp(4, 6);
    for (size_t r = 0; r < 4; ++r) {
        for (size_t j = 0; j < 6; ++j) xp.at(r, j) = x.at(perm[r], j);
    }
    Tensor yp = nn::transformer_block(leaves, "blk", ad::constant(xp), 3, false)->value;
    for (size_t r = 0; r < 4; ++r) {
        for (size_t j = 0; j < 6; ++j) {
            CHECK(yp.at(r, j) == doctest::Approx(y.at(perm[r], j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("pooling a single row puts all attention weight on it") {
    ad::ParamStore store;
    nn::register_cross_attention_pool(store, "pool", 3, 6, 25);
    ad::Leaves leaves = ad::make_leaves(store);
    Tensor kv = random_tensor(1, 6, 707);
    Tensor out = nn::cross_attention_pool(leaves, "pool", ad::constant(kv))->value;
    REQUIRE(out.rows() == 3);
    REQUIRE(out.cols() == 6);

    // Weight 1.0 on the only row means every query returns wo(wv(kv)).
    Tensor v = nn::linear_raw(store, "pool.wv", kv);
    Tensor expect = nn::linear_raw(store, "pool.wo", v);
    for (size_t q = 0; q < 3; ++q) {
        for (size_t j = 0; j < 6; ++j) {
            CHECK(out.at(q, j) == doctest::Approx(expect.at(0, j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("pooled output ignores the order of the input rows") {
    ad::ParamStore store;
    nn::register_cross_attention_pool(store, "pool", 4, 6, 26);
    ad::Leaves leaves = ad::make_leaves(store);
    Tensor kv = random_tensor(9, 6, 808);
    Tensor out = nn::cross_attention_pool(leaves, "pool", ad::constant(kv))->value;

    Tensor reversed(9, 6);
    for (size_t r = 0; r < 9; ++r) {
        for (size_t j = 0; j < 6; ++j) reversed.at(r, j) = kv.at(8 - r, j);
    }
    Tensor out_rev = nn::cross_attention_pool(leaves, "pool", ad::constant(reversed))->value;
    for (size_t i = 0; i < out.size(); ++i) {
        CHECK(out_rev.at(i) == doctest::Approx(out.at(i)).epsilon(1e-11));
    }
}

TEST_CASE("pooling compresses many rows to the query count") {
    ad::ParamStore store;
    nn::register_cross_attention_pool(store, "pool", 4, 8, 27);
    ad::Leaves leaves = ad::make_leaves(store);
    Tensor kv = random_tensor(500, 8, 909);
    Tensor out = nn::cross_attention_pool(leaves, "pool", ad::constant(kv))->value;
    CHECK(out.rows() == 4);
    CHECK(out.cols() == 8);
    out.check_finite("pool");

    Value empty = ad::constant(Tensor(0, 8));
    CHECK_THROWS_AS(nn::cross_attention_pool(leaves, "pool", empty), Error);
}

TEST_CASE("softmax rows sum to one") {
    Tensor x = random_tensor(7, 11, 111, 30.0);
    Tensor s = ad::softmax_rows(ad::constant(x))->value;
    for (size_t r = 0; r < 7; ++r) {
        double total = 0.0;
        for (size_t c = 0; c < 11; ++c) total += s.at(r, c);
        CHECK(std::fabs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("block and pool gradients agree with finite differences") {
    ad::ParamStore store;
    nn::register_transformer_block(store, "blk", 8, 2, 28);
    nn::register_cross_attention_pool(store, "pool", 3, 8, 29);
    nn::register_linear(store, "head", 8, 2, 30);
    const Tensor x = random_tensor(5, 8, 212, 0.8);

    auto loss_fn = [&x](const ad::Leaves& l) -> Value {
        Value h = nn::transformer_block(l, "blk", ad::constant(x), 2, true);
        Value pooled = nn::cross_attention_pool(l, "pool", h);
        Value y = nn::linear(l, "head", pooled);
        return ad::mean(ad::mul(y, y));
    };
    ad::GradCheckReport report = ad::grad_check(loss_fn, store, 1e-5, 300, 7);
    INFO("worst param ", report.worst_param, "[", report.worst_index, "] rel err ",
         report.max_rel_err);
    CHECK(report.pass(1e-4));
    CHECK(report.coords_checked >= 300);
}

TEST_CASE("incremental decoding matches the full graph forward pass") {
    ad::ParamStore store;
    const size_t d = 8, heads = 2, blocks = 2, T = 7;
    nn::register_transformer_block(store, "blk0", d, 4, 31);
    nn::register_transformer_block(store, "blk1", d, 4, 32);
    nn::register_layer_norm(store, "final_ln", d);
    // Perturb the final norm away from identity so it is actually exercised.
    {
        Rng rng(44);
        for (double& g : store.value("final_ln.g").values()) g = 1.0 + 0.2 * rng.uniform();
        for (double& b : store.value("final_ln.b").values()) b = 0.1 * rng.uniform();
    }

    Tensor x = random_tensor(T, d, 313);
    ad::Leaves leaves = ad::make_leaves(store);
    Value h = ad::constant(x);
    h = nn::transformer_block(leaves, "blk0", h, heads, true);
    h = nn::transformer_block(leaves, "blk1", h, heads, true);
    Tensor graph_out = nn::layer_norm(leaves, "final_ln", h)->value;

    nn::CausalDecoder dec(store, "blk", "final_ln", blocks, heads);
    std::vector<size_t> chunks = {3, 1, 2, 1};
    size_t row = 0;
    for (size_t n : chunks) {
        Tensor feed(n, d);
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j < d; ++j) feed.at(i, j) = x.at(row + i, j);
        }
        Tensor out = dec.append(feed);
        REQUIRE(out.rows() == n);
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = 0; j < d; ++j) {
                CHECK(out.at(i, j) == doctest::Approx(graph_out.at(row + i, j)).epsilon(1e-9));
            }
        }
        row += n;
    }
    CHECK(dec.length() == T);

    // After reset the same decoder replays from scratch.
    dec.reset();
    CHECK(dec.length() == 0);
    Tensor all = dec.append(x);
    for (size_t i = 0; i < all.size(); ++i) {
        CHECK(all.at(i) == doctest::Approx(graph_out.at(i)).epsilon(1e-9));
    }
}

TEST_CASE("the same seed rebuilds the same network") {
    auto build = [] {
        ad::ParamStore store;
        nn::register_transformer_block(store, "blk", 8, 4, 50);
        ad::Leaves leaves = ad::make_leaves(store);
        Tensor x = random_tensor(4, 8, 51);
        return nn::transformer_block(leaves, "blk", ad::constant(x), 2, true)->value;
    };
    Tensor a = build();
    Tensor b = build();
    for (size_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));
}
