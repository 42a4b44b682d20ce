#pragma once

#include "partflow/autodiff.hpp"
#include "partflow/voxel.hpp"

namespace partflow::nn {

// ---------------------------------------------------------------------------
// Fixed (non-learned) features
// ---------------------------------------------------------------------------

// Sinusoidal features of scalars in [0,1]: per value, sin/cos pairs at
// geometrically spaced frequencies pi * 2^k. dims must be even.
Tensor sinusoid_rows(const std::vector<double>& values, size_t dims);

// Per-position features: the three axes' sinusoids concatenated
// (3 * axis_dims columns). Coordinates are normalized to cell centers.
Tensor sinusoid_positions(const std::vector<IVec3>& positions, int resolution, size_t axis_dims);

// ---------------------------------------------------------------------------
// Layer registration + graph builders
// ---------------------------------------------------------------------------

void register_linear(ad::ParamStore& store, const std::string& name, size_t in, size_t out,
                     uint64_t seed);
void register_layer_norm(ad::ParamStore& store, const std::string& name, size_t dim);
void register_transformer_block(ad::ParamStore& store, const std::string& prefix, size_t d,
                                size_t ffn_mult, uint64_t seed);
void register_cross_attention_pool(ad::ParamStore& store, const std::string& prefix, size_t L,
                                   size_t d, uint64_t seed);

ad::Value linear(const ad::Leaves& leaves, const std::string& name, const ad::Value& x);
ad::Value layer_norm(const ad::Leaves& leaves, const std::string& name, const ad::Value& x);

// Pre-norm multi-head self-attention + feed-forward, both residual. With the
// causal flag, position t attends only to positions <= t.
ad::Value transformer_block(const ad::Leaves& leaves, const std::string& prefix, const ad::Value& x,
                            size_t heads, bool causal);

// L learned query tokens attend once over the input rows; output is [L x d]
// regardless of the input row count.
ad::Value cross_attention_pool(const ad::Leaves& leaves, const std::string& prefix,
                               const ad::Value& kv);

// ---------------------------------------------------------------------------
// Raw-tensor inference with KV caching (sampling path; no gradients)
// ---------------------------------------------------------------------------

Tensor linear_raw(const ad::ParamStore& store, const std::string& name, const Tensor& x);
Tensor layer_norm_raw(const ad::ParamStore& store, const std::string& name, const Tensor& x);

// Incremental causal decoder over registered transformer blocks
// "<prefix>0" .. "<prefix><blocks-1>" plus a final layer norm. append() feeds
// new rows (already embedded) and returns their post-stack activations; fed
// rows are cached so each later step costs O(history).
class CausalDecoder {
public:
    CausalDecoder(const ad::ParamStore& store, std::string block_prefix,
                  std::string final_ln_name, size_t blocks, size_t heads);

    Tensor append(const Tensor& rows);
    size_t length() const { return length_; }
    void reset();

private:
    const ad::ParamStore& store_;
    std::string block_prefix_;
    std::string final_ln_;
    size_t blocks_;
    size_t heads_;
    size_t length_ = 0;
    struct Cache {
        std::vector<double> k;  // [length x d], row-major, grown per append
        std::vector<double> v;
    };
    std::vector<Cache> caches_;
};

}  // namespace partflow::nn
