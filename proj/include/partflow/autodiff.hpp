#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "partflow/tensor.hpp"

namespace partflow::ad {

// Reverse-mode tape over Tensor. Each op returns a new node holding the
// forward value and a closure that scatters the node's gradient into its
// parents. Graphs are single-use: build, call backward once, read grads.
struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool needs_grad = false;
    std::vector<Value> parents;
    std::function<void()> backprop;

    explicit Node(Tensor v) : value(std::move(v)) {}
};

Value constant(Tensor t);
Value leaf(Tensor t);  // trainable: participates in the gradient pass

// Gradient of a node after backward(); zeros if the node was never reached.
Tensor grad_of(const Value& v);

// Reverse pass from a scalar loss node.
void backward(const Value& loss);

// --- elementwise -----------------------------------------------------------
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value relu(const Value& a);
Value gelu(const Value& a);
Value sigmoid(const Value& a);

// --- linear algebra ---------------------------------------------------------
Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);

// --- broadcasting over rows/columns ----------------------------------------
Value add_row(const Value& a, const Value& row);   // row shape [1 x n]
Value mul_row(const Value& a, const Value& row);   // row shape [1 x n]
Value sub_col(const Value& a, const Value& col);   // col shape [m x 1]

// --- normalization and softmax ----------------------------------------------
Value softmax_rows(const Value& a);
Value logsumexp_rows(const Value& a);              // [m x 1]
Value layer_norm_rows(const Value& a, double eps = 1e-5);

// --- structure ---------------------------------------------------------------
Value slice_rows(const Value& a, size_t r0, size_t r1);
Value slice_cols(const Value& a, size_t c0, size_t c1);
Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);
Value gather_rows(const Value& table, std::vector<int> indices);
// Coarse row g = mean of fine rows in groups[g]; groups must be non-empty.
Value group_mean_rows(const Value& a, std::vector<std::vector<int>> groups);
// Element picks (row, col) -> vector [k].
Value pick(const Value& a, std::vector<std::pair<size_t, size_t>> coords);

// --- reductions ---------------------------------------------------------------
Value sum(const Value& a);
Value mean(const Value& a);

// ---------------------------------------------------------------------------
// Parameter store with Adam state
// ---------------------------------------------------------------------------

struct ParamInfo {
    Tensor value;
    Tensor m;  // Adam first moment
    Tensor v;  // Adam second moment
    bool trainable = true;
};

class ParamStore {
public:
    // Uniform init in [-bound, bound] seeded per name, so adding parameters
    // in a different order cannot change any values.
    void add(const std::string& name, std::vector<size_t> shape, double bound, uint64_t seed);
    void add_zeros(const std::string& name, std::vector<size_t> shape);

    bool has(const std::string& name) const { return params_.count(name) > 0; }
    ParamInfo& info(const std::string& name);
    const ParamInfo& info(const std::string& name) const;
    Tensor& value(const std::string& name) { return info(name).value; }
    const Tensor& value(const std::string& name) const { return info(name).value; }
    void set_trainable(const std::string& name, bool trainable) {
        info(name).trainable = trainable;
    }

    std::vector<std::string> names() const;
    size_t total_values() const;
    int64_t step_count() const { return step_; }
    void set_step_count(int64_t s) { step_ = s; }

    std::map<std::string, ParamInfo>& raw() { return params_; }
    const std::map<std::string, ParamInfo>& raw() const { return params_; }

    friend void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads,
                          double lr, double beta1, double beta2, double eps);

private:
    std::map<std::string, ParamInfo> params_;
    int64_t step_ = 0;
};

// Fresh graph leaves for one training step. Leaves for frozen parameters are
// constants, so no gradient is spent on them.
struct Leaves {
    std::map<std::string, Value> values;

    const Value& operator()(const std::string& name) const;
};

Leaves make_leaves(const ParamStore& store);

// Gradients of every trainable leaf after backward (zeros if untouched).
std::map<std::string, Tensor> collect_grads(const ParamStore& store, const Leaves& leaves);

// Standard Adam with bias correction. Skips frozen parameters.
void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    size_t worst_index = 0;
    size_t coords_checked = 0;

    bool pass(double tolerance) const { return max_rel_err <= tolerance; }
};

// Compares reverse-mode gradients against central finite differences on a
// random subsample of >= min_coords coordinates across all trainable
// parameters. loss_fn must be deterministic.
GradCheckReport grad_check(const std::function<Value(const Leaves&)>& loss_fn, ParamStore& store,
                           double epsilon, size_t min_coords, uint64_t seed);

}  // namespace partflow::ad
