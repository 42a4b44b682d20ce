#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "partflow/autodiff.hpp"

using namespace partflow;
using ad::Value;

TEST_CASE("gradient of the squared norm is 2 theta") {
    ad::ParamStore store;
    store.add("theta", {3, 2}, 1.0, 7);
    ad::Leaves leaves = ad::make_leaves(store);
    Value theta = leaves("theta");
    Value loss = ad::sum(ad::mul(theta, theta));
    ad::backward(loss);
    const Tensor g = ad::grad_of(theta);
    for (size_t i = 0; i < g.size(); ++i) {
        CHECK(g.at(i) == doctest::Approx(2.0 * store.value("theta").at(i)).epsilon(1e-14));
    }

    // Analytic case from the contract: rel err far below 1e-8.
    auto loss_fn = [](const ad::Leaves& l) { return ad::sum(ad::mul(l("theta"), l("theta"))); };
    ad::GradCheckReport report = ad::grad_check(loss_fn, store, 1e-5, 200, 42);
    CHECK(report.coords_checked == 6);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("gradients accumulate when a value is used twice") {
    ad::ParamStore store;
    store.add("x", {1, 1}, 1.0, 3);
    ad::Leaves leaves = ad::make_leaves(store);
    Value x = leaves("x");
    // f = x*x + x  -> df/dx = 2x + 1
    Value loss = ad::sum(ad::add(ad::mul(x, x), x));
    ad::backward(loss);
    CHECK(ad::grad_of(x).at(0) ==
          doctest::Approx(2.0 * store.value("x").at(0) + 1.0).epsilon(1e-14));
}

TEST_CASE("composite graph passes the finite-difference check") {
    // Exercises matmul, transpose, broadcasts, softmax, logsumexp, layer
    // norm, slicing, concatenation, gather, group means, picking, gelu,
    // sigmoid and reductions in one scalar function.
    ad::ParamStore store;
    store.add("w1", {4, 6}, 0.5, 11);
    store.add("b1", {1, 6}, 0.5, 12);
    store.add("gain", {1, 6}, 0.5, 13);
    store.add("table", {5, 4}, 0.5, 14);
    store.add("col", {3, 1}, 0.5, 15);

    auto loss_fn = [](const ad::Leaves& l) -> Value {
        Value x = ad::gather_rows(l("table"), {0, 2, 4});            // [3 x 4]
        Value h = ad::matmul(x, l("w1"));                            // [3 x 6]
        h = ad::add_row(h, l("b1"));
        h = ad::mul_row(ad::layer_norm_rows(h), l("gain"));
        Value s = ad::softmax_rows(h);
        Value lse = ad::logsumexp_rows(h);                           // [3 x 1]
        Value shifted = ad::sub_col(h, lse);
        Value g = ad::gelu(ad::slice_cols(shifted, 0, 3));
        Value sg = ad::sigmoid(ad::slice_rows(shifted, 1, 3));
        Value joined = ad::concat_cols({g, ad::transpose(ad::matmul(ad::transpose(s), ad::constant(Tensor::full({3, 3}, 0.7))))});
        Value pooled = ad::group_mean_rows(joined, {{0, 2}, {1}});
        Value stacked = ad::concat_rows({pooled, ad::scale(pooled, -0.5)});
        Value picked = ad::pick(stacked, {{0, 1}, {1, 3}, {3, 2}});
        Value with_col = ad::sub_col(ad::matmul(l("col"), ad::constant(Tensor::full({1, 4}, 1.3))),
                                     l("col"));
        return ad::add(ad::mean(ad::mul(picked, picked)),
                       ad::add(ad::mean(sg), ad::mean(with_col)));
    };

    ad::GradCheckReport report = ad::grad_check(loss_fn, store, 1e-5, 500, 99);
    INFO("worst param ", report.worst_param, "[", report.worst_index, "]");
    CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("relu gradient is exact away from the kink") {
    ad::ParamStore store;
    store.add_zeros("theta", {1, 4});
    Tensor& t = store.value("theta");
    t.at(0) = 0.8;
    t.at(1) = -0.6;
    t.at(2) = 1.7;
    t.at(3) = -2.0;
    auto loss_fn = [](const ad::Leaves& l) { return ad::sum(ad::relu(l("theta"))); };
    ad::Leaves leaves = ad::make_leaves(store);
    Value loss = loss_fn(leaves);
    ad::backward(loss);
    const Tensor g = ad::grad_of(leaves("theta"));
    CHECK(g.at(0) == 1.0);
    CHECK(g.at(1) == 0.0);
    CHECK(g.at(2) == 1.0);
    CHECK(g.at(3) == 0.0);
    CHECK(ad::grad_check(loss_fn, store, 1e-5, 10, 1).max_rel_err < 1e-9);
}

TEST_CASE("frozen parameters receive no gradient and no update") {
    ad::ParamStore store;
    store.add("a", {1, 2}, 1.0, 5);
    store.add("frozen", {1, 2}, 1.0, 6);
    store.set_trainable("frozen", false);
    const Tensor before = store.value("frozen");

    ad::Leaves leaves = ad::make_leaves(store);
    Value loss = ad::sum(ad::mul(ad::add(leaves("a"), leaves("frozen")), leaves("a")));
    ad::backward(loss);
    auto grads = ad::collect_grads(store, leaves);
    CHECK(grads.count("a") == 1);
    CHECK(grads.count("frozen") == 0);

    ad::adam_step(store, grads, 0.1);
    for (size_t i = 0; i < before.size(); ++i) CHECK(store.value("frozen").at(i) == before.at(i));
}

TEST_CASE("adam leaves parameters alone under zero gradient") {
    ad::ParamStore store;
    store.add("p", {2, 2}, 1.0, 9);
    const Tensor before = store.value("p");
    std::map<std::string, Tensor> grads;
    grads.emplace("p", Tensor(std::vector<size_t>{2, 2}));
    ad::adam_step(store, grads, 0.05);
    for (size_t i = 0; i < before.size(); ++i) CHECK(store.value("p").at(i) == before.at(i));
}

TEST_CASE("first adam step is lr times the gradient sign") {
    ad::ParamStore store;
    store.add_zeros("p", {1, 3});
    Tensor& v = store.value("p");
    v.at(0) = 1.0;
    v.at(1) = 1.0;
    v.at(2) = 1.0;
    Tensor g(std::vector<size_t>{1, 3});
    g.at(0) = 0.3;
    g.at(1) = -2.0;
    g.at(2) = 0.0;
    std::map<std::string, Tensor> grads;
    grads.emplace("p", g);
    ad::adam_step(store, grads, 0.01);
    // Bias-corrected m/sqrt(v) = g/|g| for the first step (eps-leakage ~1e-8).
    CHECK(store.value("p").at(0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(store.value("p").at(1) == doctest::Approx(1.0 + 0.01).epsilon(1e-6));
    CHECK(store.value("p").at(2) == 1.0);
}

TEST_CASE("constant gradient drives step magnitude toward lr") {
    ad::ParamStore store;
    store.add_zeros("p", {1, 1});
    Tensor g(std::vector<size_t>{1, 1});
    g.at(0) = 0.37;  // any constant magnitude
    std::map<std::string, Tensor> grads;
    grads.emplace("p", g);
    const double lr = 0.01;
    double prev = store.value("p").at(0);
    double step_size = 0.0;
    for (int i = 0; i < 500; ++i) {
        ad::adam_step(store, grads, lr);
        step_size = prev - store.value("p").at(0);
        prev = store.value("p").at(0);
    }
    CHECK(step_size == doctest::Approx(lr).epsilon(1e-3));
}

TEST_CASE("parameter initialization is deterministic and order-free") {
    ad::ParamStore a;
    a.add("x", {2, 2}, 0.5, 77);
    a.add("y", {2, 2}, 0.5, 77);
    ad::ParamStore b;
    b.add("y", {2, 2}, 0.5, 77);  // registered in the opposite order
    b.add("x", {2, 2}, 0.5, 77);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(a.value("x").at(i) == b.value("x").at(i));
        CHECK(a.value("y").at(i) == b.value("y").at(i));
    }
    CHECK(a.value("x").at(0) != a.value("y").at(0));
    CHECK(a.total_values() == 8);
}

TEST_CASE("backward rejects non-scalar and non-finite losses") {
    ad::ParamStore store;
    store.add("p", {2, 2}, 1.0, 1);
    ad::Leaves leaves = ad::make_leaves(store);
    CHECK_THROWS_AS(ad::backward(ad::mul(leaves("p"), leaves("p"))), Error);

    Value bad = ad::constant(Tensor::scalar(std::nan("")));
    CHECK_THROWS_AS(ad::backward(bad), Error);
}

TEST_CASE("gather and group_mean validate indices") {
    Value t = ad::constant(Tensor(4, 2));
    CHECK_THROWS_AS(ad::gather_rows(t, {0, 4}), Error);
    CHECK_THROWS_AS(ad::group_mean_rows(t, {{0}, {}}), Error);
    CHECK_THROWS_AS(ad::group_mean_rows(t, {{5}}), Error);
}
