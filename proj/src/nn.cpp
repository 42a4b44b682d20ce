#include "partflow/nn.hpp"

#include <cmath>

namespace partflow::nn {

using ad::Leaves;
using ad::ParamStore;
using ad::Value;

// ---------------------------------------------------------------------------
// Sinusoids
// ---------------------------------------------------------------------------

Tensor sinusoid_rows(const std::vector<double>& values, size_t dims) {
    if (dims % 2 != 0 || dims == 0) {
        raise(ErrorCode::ShapeError, "sinusoid dims must be positive and even");
    }
    Tensor out(values.size(), dims);
    for (size_t i = 0; i < values.size(); ++i) {
        double* row = out.row(i);
        double freq = M_PI;
        for (size_t k = 0; k < dims / 2; ++k) {
            row[2 * k] = std::sin(values[i] * freq);
            row[2 * k + 1] = std::cos(values[i] * freq);
            freq *= 2.0;
        }
    }
    return out;
}

Tensor sinusoid_positions(const std::vector<IVec3>& positions, int resolution, size_t axis_dims) {
    if (resolution <= 0) raise(ErrorCode::DomainError, "resolution must be positive");
    std::vector<double> axis_values(positions.size());
    Tensor out(positions.size(), 3 * axis_dims);
    for (int axis = 0; axis < 3; ++axis) {
        for (size_t i = 0; i < positions.size(); ++i) {
            axis_values[i] = (positions[i][axis] + 0.5) / resolution;
        }
        Tensor feats = sinusoid_rows(axis_values, axis_dims);
        for (size_t i = 0; i < positions.size(); ++i) {
            const double* src = feats.row(i);
            double* dst = out.row(i) + axis * axis_dims;
            for (size_t j = 0; j < axis_dims; ++j) dst[j] = src[j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Registration
// ---------------------------------------------------------------------------

void register_linear(ParamStore& store, const std::string& name, size_t in, size_t out,
                     uint64_t seed) {
    store.add(name + ".w", {in, out}, std::sqrt(1.0 / static_cast<double>(in)), seed);
    store.add_zeros(name + ".b", {1, out});
}

void register_layer_norm(ParamStore& store, const std::string& name, size_t dim) {
    store.add_zeros(name + ".g", {1, dim});
    for (double& v : store.value(name + ".g").values()) v = 1.0;
    store.add_zeros(name + ".b", {1, dim});
}

void register_transformer_block(ParamStore& store, const std::string& prefix, size_t d,
                                size_t ffn_mult, uint64_t seed) {
    register_layer_norm(store, prefix + ".ln1", d);
    register_linear(store, prefix + ".attn.wq", d, d, seed);
    register_linear(store, prefix + ".attn.wk", d, d, seed);
    register_linear(store, prefix + ".attn.wv", d, d, seed);
    register_linear(store, prefix + ".attn.wo", d, d, seed);
    register_layer_norm(store, prefix + ".ln2", d);
    register_linear(store, prefix + ".ffn.l1", d, ffn_mult * d, seed);
    register_linear(store, prefix + ".ffn.l2", ffn_mult * d, d, seed);
}

void register_cross_attention_pool(ParamStore& store, const std::string& prefix, size_t L,
                                   size_t d, uint64_t seed) {
    store.add(prefix + ".queries", {L, d}, std::sqrt(1.0 / static_cast<double>(d)), seed);
    register_linear(store, prefix + ".wq", d, d, seed);
    register_linear(store, prefix + ".wk", d, d, seed);
    register_linear(store, prefix + ".wv", d, d, seed);
    register_linear(store, prefix + ".wo", d, d, seed);
}

// ---------------------------------------------------------------------------
// Graph builders
// ---------------------------------------------------------------------------

Value linear(const Leaves& leaves, const std::string& name, const Value& x) {
    return ad::add_row(ad::matmul(x, leaves(name + ".w")), leaves(name + ".b"));
}

Value layer_norm(const Leaves& leaves, const std::string& name, const Value& x) {
    return ad::add_row(ad::mul_row(ad::layer_norm_rows(x), leaves(name + ".g")),
                       leaves(name + ".b"));
}

namespace {

Tensor causal_mask(size_t t) {
    Tensor mask(t, t);
    for (size_t i = 0; i < t; ++i) {
        double* row = mask.row(i);
        for (size_t j = i + 1; j < t; ++j) row[j] = -1e30;
    }
    return mask;
}

Value attention(const Value& q, const Value& k, const Value& v, size_t heads, bool causal) {
    const size_t d = q->value.cols();
    const size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Value mask;
    if (causal) mask = ad::constant(causal_mask(q->value.rows()));
    std::vector<Value> ctx;
    ctx.reserve(heads);
    for (size_t h = 0; h < heads; ++h) {
        Value qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
        Value kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
        Value vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
        Value scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
        if (causal) scores = ad::add(scores, mask);
        ctx.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    return ad::concat_cols(ctx);
}

}  // namespace

Value transformer_block(const Leaves& leaves, const std::string& prefix, const Value& x,
                        size_t heads, bool causal) {
    const size_t d = x->value.cols();
    if (heads == 0 || d % heads != 0) {
        raise(ErrorCode::ShapeError,
              "width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                  " heads");
    }
    Value h = layer_norm(leaves, prefix + ".ln1", x);
    Value q = linear(leaves, prefix + ".attn.wq", h);
    Value k = linear(leaves, prefix + ".attn.wk", h);
    Value v = linear(leaves, prefix + ".attn.wv", h);
    Value ctx = attention(q, k, v, heads, causal);
    Value after_attn = ad::add(x, linear(leaves, prefix + ".attn.wo", ctx));

    Value h2 = layer_norm(leaves, prefix + ".ln2", after_attn);
    Value ff = linear(leaves, prefix + ".ffn.l2", ad::gelu(linear(leaves, prefix + ".ffn.l1", h2)));
    return ad::add(after_attn, ff);
}

Value cross_attention_pool(const Leaves& leaves, const std::string& prefix, const Value& kv) {
    if (kv->value.rows() == 0) raise(ErrorCode::EmptyInput, "pooling over zero tokens");
    const Value& queries = leaves(prefix + ".queries");
    const size_t d = queries->value.cols();
    if (kv->value.cols() != d) {
        raise(ErrorCode::ShapeError, "pool input width " + std::to_string(kv->value.cols()));
    }
    Value q = linear(leaves, prefix + ".wq", queries);
    Value k = linear(leaves, prefix + ".wk", kv);
    Value v = linear(leaves, prefix + ".wv", kv);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    Value scores = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt);
    Value pooled = ad::matmul(ad::softmax_rows(scores), v);
    return linear(leaves, prefix + ".wo", pooled);
}

// ---------------------------------------------------------------------------
// Raw inference
// ---------------------------------------------------------------------------

Tensor linear_raw(const ParamStore& store, const std::string& name, const Tensor& x) {
    Tensor out = partflow::matmul(x, store.value(name + ".w"));
    const Tensor& b = store.value(name + ".b");
    for (size_t i = 0; i < out.rows(); ++i) {
        double* row = out.row(i);
        for (size_t j = 0; j < out.cols(); ++j) row[j] += b.at(j);
    }
    return out;
}

Tensor layer_norm_raw(const ParamStore& store, const std::string& name, const Tensor& x) {
    const Tensor& gain = store.value(name + ".g");
    const Tensor& bias = store.value(name + ".b");
    const size_t n = x.cols();
    Tensor out(x.rows(), n);
    for (size_t i = 0; i < x.rows(); ++i) {
        const double* r = x.row(i);
        double mu = 0.0;
        for (size_t j = 0; j < n; ++j) mu += r[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        double* o = out.row(i);
        for (size_t j = 0; j < n; ++j) o[j] = (r[j] - mu) * inv * gain.at(j) + bias.at(j);
    }
    return out;
}

namespace {

double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

}  // namespace

CausalDecoder::CausalDecoder(const ParamStore& store, std::string block_prefix,
                             std::string final_ln_name, size_t blocks, size_t heads)
    : store_(store),
      block_prefix_(std::move(block_prefix)),
      final_ln_(std::move(final_ln_name)),
      blocks_(blocks),
      heads_(heads),
      caches_(blocks) {}

void CausalDecoder::reset() {
    length_ = 0;
    for (Cache& c : caches_) {
        c.k.clear();
        c.v.clear();
    }
}

Tensor CausalDecoder::append(const Tensor& rows) {
    const size_t r = rows.rows();
    const size_t d = rows.cols();
    const size_t dh = d / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor x = rows;
    for (size_t blk = 0; blk < blocks_; ++blk) {
        const std::string prefix = block_prefix_ + std::to_string(blk);
        Cache& cache = caches_[blk];

        Tensor h = layer_norm_raw(store_, prefix + ".ln1", x);
        Tensor q = linear_raw(store_, prefix + ".attn.wq", h);
        Tensor k = linear_raw(store_, prefix + ".attn.wk", h);
        Tensor v = linear_raw(store_, prefix + ".attn.wv", h);
        cache.k.insert(cache.k.end(), k.data(), k.data() + k.size());
        cache.v.insert(cache.v.end(), v.data(), v.data() + v.size());

        // Causal attention over the cache: row i may see global positions
        // 0 .. length_ + i.
        Tensor ctx(r, d);
        std::vector<double> weights(length_ + r);
        for (size_t i = 0; i < r; ++i) {
            const size_t horizon = length_ + i + 1;
            const double* qrow = q.row(i);
            double* crow = ctx.row(i);
            for (size_t head = 0; head < heads_; ++head) {
                const size_t off = head * dh;
                double mx = -1e300;
                for (size_t j = 0; j < horizon; ++j) {
                    const double* krow = cache.k.data() + j * d + off;
                    double s = 0.0;
                    for (size_t c = 0; c < dh; ++c) s += qrow[off + c] * krow[c];
                    s *= inv_sqrt;
                    weights[j] = s;
                    mx = std::max(mx, s);
                }
                double sum = 0.0;
                for (size_t j = 0; j < horizon; ++j) {
                    weights[j] = std::exp(weights[j] - mx);
                    sum += weights[j];
                }
                const double inv = 1.0 / sum;
                for (size_t c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (size_t j = 0; j < horizon; ++j) {
                        acc += weights[j] * cache.v[j * d + off + c];
                    }
                    crow[off + c] = acc * inv;
                }
            }
        }
        Tensor attn_out = linear_raw(store_, prefix + ".attn.wo", ctx);
        for (size_t i = 0; i < x.size(); ++i) x.at(i) += attn_out.at(i);

        Tensor h2 = layer_norm_raw(store_, prefix + ".ln2", x);
        Tensor ff1 = linear_raw(store_, prefix + ".ffn.l1", h2);
        for (size_t i = 0; i < ff1.size(); ++i) ff1.at(i) = gelu_scalar(ff1.at(i));
        Tensor ff2 = linear_raw(store_, prefix + ".ffn.l2", ff1);
        for (size_t i = 0; i < x.size(); ++i) x.at(i) += ff2.at(i);
    }
    length_ += r;
    return layer_norm_raw(store_, final_ln_, x);
}

}  // namespace partflow::nn
