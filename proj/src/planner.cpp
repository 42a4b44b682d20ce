#include "partflow/planner.hpp"

#include <algorithm>
#include <cmath>

namespace partflow::planner {

using ad::Leaves;
using ad::ParamStore;
using ad::Value;

EncodedExample encode_example(const std::vector<Aabb>& boxes, int resolution) {
    EncodedExample ex;
    ex.seq = tokenize(canonicalize(boxes), resolution);
    ex.roles = role_map(ex.seq);
    ex.input.assign(ex.seq.tokens.begin(), ex.seq.tokens.end() - 1);
    ex.targets.assign(ex.seq.tokens.begin() + 1, ex.seq.tokens.end());
    return ex;
}

void register_model(ParamStore& store, const PlannerConfig& cfg) {
    const size_t d = static_cast<size_t>(cfg.d);
    const double bound = std::sqrt(1.0 / static_cast<double>(cfg.d));
    nn::register_linear(store, "feat", 2, d, cfg.seed);
    store.add("mask_embed", {static_cast<size_t>(cfg.K), d}, bound, cfg.seed);
    nn::register_linear(store, "vox", 3 * kAxisDims, d, cfg.seed);
    nn::register_cross_attention_pool(store, "pool", static_cast<size_t>(cfg.L), d, cfg.seed);
    store.add("prefix_pos", {static_cast<size_t>(cfg.prefix_len()), d}, bound, cfg.seed);
    store.add("tok_embed", {static_cast<size_t>(cfg.vocab()), d}, bound, cfg.seed);
    store.add("seq_pos", {static_cast<size_t>(1 + 6 * cfg.max_boxes), d}, bound, cfg.seed);
    for (int b = 0; b < cfg.blocks; ++b) {
        nn::register_transformer_block(store, "blk" + std::to_string(b), d, 4, cfg.seed);
    }
    nn::register_layer_norm(store, "final_ln", d);
    nn::register_linear(store, "head", d, static_cast<size_t>(cfg.vocab()), cfg.seed);
}

// ---------------------------------------------------------------------------
// Conditioning prefix
// ---------------------------------------------------------------------------

namespace {

Tensor view_channels(const SparseVoxelGrid& grid, int h, int w) {
    if (grid.empty()) raise(ErrorCode::EmptyInput, "featurize_view: empty grid");
    if (h <= 0) h = grid.resolution();
    if (w <= 0) w = grid.resolution();
    const DepthRender render = render_depth(grid, View{}, h, w);
    Tensor channels(static_cast<size_t>(h) * w, 2);
    for (size_t p = 0; p < channels.rows(); ++p) {
        channels.at(p, 0) = render.occupancy[p];
        channels.at(p, 1) = render.depth[p];
    }
    return channels;
}

std::vector<int> iota_indices(size_t n) {
    std::vector<int> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    return idx;
}

void check_mask_labels(const LabelMask2D& mask, int K) {
    mask.validate();
    for (int e : mask.entries) {
        if (e >= K) raise(ErrorCode::LabelOverflow, "mask label exceeds the embedding table");
    }
}

}  // namespace

Value featurize_view(const Leaves& leaves, const SparseVoxelGrid& grid, int h, int w) {
    return nn::linear(leaves, "feat", ad::constant(view_channels(grid, h, w)));
}

Value fuse_mask(const Leaves& leaves, const Value& f, const LabelMask2D& mask, int K) {
    check_mask_labels(mask, K);
    if (f->value.rows() != mask.entries.size()) {
        raise(ErrorCode::ShapeError, "fuse_mask: mask size does not match feature rows");
    }
    return ad::add(f, ad::gather_rows(leaves("mask_embed"), mask.entries));
}

Value encode_voxel_tokens(const Leaves& leaves, const SparseVoxelGrid& grid) {
    if (grid.empty()) raise(ErrorCode::EmptyInput, "encode_voxel_tokens: empty grid");
    const Tensor sin = nn::sinusoid_positions(grid.positions(), grid.resolution(), kAxisDims);
    Value embedded = nn::linear(leaves, "vox", ad::constant(sin));
    return nn::cross_attention_pool(leaves, "pool", embedded);
}

Value conditioning_prefix(const Leaves& leaves, const PlannerConfig& cfg,
                          const SparseVoxelGrid& grid, const LabelMask2D& mask) {
    Value f = featurize_view(leaves, grid, cfg.mask_hw, cfg.mask_hw);
    Value fused = fuse_mask(leaves, f, mask, cfg.K);
    Value q = encode_voxel_tokens(leaves, grid);
    return ad::add(ad::concat_rows({fused, q}), leaves("prefix_pos"));
}

Value forward_logits(const Leaves& leaves, const PlannerConfig& cfg, const Value& prefix,
                     const std::vector<int>& input) {
    if (input.empty()) raise(ErrorCode::EmptyInput, "forward_logits: no input tokens");
    Value emb = ad::add(ad::gather_rows(leaves("tok_embed"), input),
                        ad::gather_rows(leaves("seq_pos"), iota_indices(input.size())));
    Value x = ad::concat_rows({prefix, emb});
    for (int b = 0; b < cfg.blocks; ++b) {
        x = nn::transformer_block(leaves, "blk" + std::to_string(b), x,
                                  static_cast<size_t>(cfg.heads), true);
    }
    x = nn::layer_norm(leaves, "final_ln", x);
    const size_t p = prefix->value.rows();
    return nn::linear(leaves, "head", ad::slice_rows(x, p, p + input.size()));
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Value loss_base(const Value& logits, const std::vector<int>& targets) {
    if (logits->value.rows() != targets.size() || targets.empty()) {
        raise(ErrorCode::Malformed, "loss_base: logits/target mismatch");
    }
    std::vector<std::pair<size_t, size_t>> coords(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= logits->value.cols()) {
            raise(ErrorCode::Malformed, "loss_base: target outside vocabulary");
        }
        coords[i] = {i, static_cast<size_t>(targets[i])};
    }
    // mean_i [logsumexp(logits_i) - logits_i[target_i]]
    return ad::sub(ad::mean(ad::logsumexp_rows(logits)), ad::mean(ad::pick(logits, coords)));
}

namespace {

// Per target position: +1 at Min coordinates, -1 at Max, 0 at EOS; plus the
// ground-truth coordinate value.
struct CoverageLayout {
    Tensor sign;    // [T x 1]
    Tensor gt;      // [T x 1]
    size_t terms = 0;
};

CoverageLayout coverage_layout(const TokenRoleMap& roles, const BoxTokenSequence& gt) {
    if (roles.roles.size() != gt.tokens.size() || gt.tokens.size() < 2) {
        raise(ErrorCode::Malformed, "coverage: roles do not match the sequence");
    }
    const size_t T = gt.tokens.size() - 1;
    CoverageLayout layout{Tensor(T, 1), Tensor(T, 1), 0};
    for (size_t i = 0; i < T; ++i) {
        const TokenRole& role = roles.roles[i + 1];  // target i is sequence position i+1
        if (role.kind == TokenRole::Kind::Min) {
            layout.sign.at(i, 0) = 1.0;
        } else if (role.kind == TokenRole::Kind::Max) {
            layout.sign.at(i, 0) = -1.0;
        } else {
            continue;
        }
        layout.gt.at(i, 0) = static_cast<double>(token_to_coord(gt.tokens[i + 1]));
        ++layout.terms;
    }
    return layout;
}

}  // namespace

Value loss_coverage_soft(const Value& logits, const TokenRoleMap& roles,
                         const BoxTokenSequence& gt) {
    const CoverageLayout layout = coverage_layout(roles, gt);
    if (logits->value.rows() != gt.tokens.size() - 1) {
        raise(ErrorCode::Malformed, "coverage: logits do not match the sequence");
    }
    if (layout.terms == 0) return ad::constant(Tensor::scalar(0.0));

    const int n_coords = gt.resolution;
    if (logits->value.cols() != static_cast<size_t>(n_coords + kCoordBase)) {
        raise(ErrorCode::Malformed, "coverage: vocabulary does not match the resolution");
    }
    // Expected coordinate from the coordinate sub-vocabulary only.
    Value probs = ad::softmax_rows(
        ad::slice_cols(logits, kCoordBase, static_cast<size_t>(n_coords) + kCoordBase));
    Tensor ramp(static_cast<size_t>(n_coords), 1);
    for (int c = 0; c < n_coords; ++c) ramp.at(c, 0) = static_cast<double>(c);
    Value expected = ad::matmul(probs, ad::constant(ramp));  // [T x 1]

    Value signed_gap = ad::mul(ad::constant(layout.sign),
                               ad::sub(expected, ad::constant(layout.gt)));
    return ad::scale(ad::sum(ad::relu(signed_gap)), 1.0 / static_cast<double>(layout.terms));
}

Value loss_total(const Value& base, const Value& coverage, double lambda_cov) {
    if (lambda_cov < 0.0) raise(ErrorCode::DomainError, "lambda_cov must be >= 0");
    return ad::add(base, ad::scale(coverage, lambda_cov));
}

double coverage_hard(const std::vector<Aabb>& decoded, const std::vector<Aabb>& gt) {
    if (decoded.size() != gt.size()) {
        raise(ErrorCode::Malformed, "coverage_hard: box lists differ in length");
    }
    if (gt.empty()) return 0.0;
    double total = 0.0;
    for (size_t k = 0; k < gt.size(); ++k) {
        for (int axis = 0; axis < 3; ++axis) {
            total += std::max(0.0, static_cast<double>(decoded[k].min[axis] - gt[k].min[axis]));
            total += std::max(0.0, static_cast<double>(gt[k].max[axis] - decoded[k].max[axis]));
        }
    }
    return total / (6.0 * static_cast<double>(gt.size()));
}

double coverage_hard_from_logits(const Tensor& logits, const TokenRoleMap& roles,
                                 const BoxTokenSequence& gt) {
    const CoverageLayout layout = coverage_layout(roles, gt);
    if (logits.rows() != gt.tokens.size() - 1) {
        raise(ErrorCode::Malformed, "coverage: logits do not match the sequence");
    }
    if (layout.terms == 0) return 0.0;
    const size_t vocab = logits.cols();
    double total = 0.0;
    for (size_t i = 0; i < logits.rows(); ++i) {
        const double sign = layout.sign.at(i, 0);
        if (sign == 0.0) continue;
        size_t best = kCoordBase;
        for (size_t c = kCoordBase; c < vocab; ++c) {
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        }
        const double decoded = static_cast<double>(best - kCoordBase);
        total += std::max(0.0, sign * (decoded - layout.gt.at(i, 0)));
    }
    return total / static_cast<double>(layout.terms);
}

// ---------------------------------------------------------------------------
// Raw inference path
// ---------------------------------------------------------------------------

namespace {

// Single-head cross-attention pooling, mirroring the graph builder.
Tensor pool_raw(const ParamStore& store, const Tensor& kv) {
    const Tensor& queries = store.value("pool.queries");
    Tensor q = nn::linear_raw(store, "pool.wq", queries);
    Tensor k = nn::linear_raw(store, "pool.wk", kv);
    Tensor v = nn::linear_raw(store, "pool.wv", kv);
    Tensor scores = matmul(q, transpose(k));
    const double inv = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
    for (double& s : scores.values()) s *= inv;
    softmax_rows_inplace(scores);
    return nn::linear_raw(store, "pool.wo", matmul(scores, v));
}

Tensor embed_tokens_raw(const ParamStore& store, const std::vector<int>& tokens, size_t pos0) {
    const Tensor& tok = store.value("tok_embed");
    const Tensor& pos = store.value("seq_pos");
    Tensor out(tokens.size(), tok.cols());
    for (size_t i = 0; i < tokens.size(); ++i) {
        const size_t p = pos0 + i;
        if (tokens[i] < 0 || static_cast<size_t>(tokens[i]) >= tok.rows() || p >= pos.rows()) {
            raise(ErrorCode::OutOfBounds, "token or position outside the embedding tables");
        }
        for (size_t j = 0; j < tok.cols(); ++j) {
            out.at(i, j) = tok.at(static_cast<size_t>(tokens[i]), j) + pos.at(p, j);
        }
    }
    return out;
}

}  // namespace

Tensor prefix_raw(const ParamStore& store, const PlannerConfig& cfg, const SparseVoxelGrid& grid,
                  const LabelMask2D& mask) {
    check_mask_labels(mask, cfg.K);
    Tensor f = nn::linear_raw(store, "feat", view_channels(grid, cfg.mask_hw, cfg.mask_hw));
    if (f.rows() != mask.entries.size()) {
        raise(ErrorCode::ShapeError, "prefix: mask size does not match feature rows");
    }
    const Tensor& E = store.value("mask_embed");
    for (size_t p = 0; p < f.rows(); ++p) {
        const double* e = E.row(static_cast<size_t>(mask.entries[p]));
        double* row = f.row(p);
        for (size_t j = 0; j < f.cols(); ++j) row[j] += e[j];
    }

    const Tensor sin = nn::sinusoid_positions(grid.positions(), grid.resolution(), kAxisDims);
    Tensor q = pool_raw(store, nn::linear_raw(store, "vox", sin));

    const Tensor& pos = store.value("prefix_pos");
    Tensor prefix(f.rows() + q.rows(), f.cols());
    for (size_t i = 0; i < f.rows(); ++i) {
        for (size_t j = 0; j < f.cols(); ++j) prefix.at(i, j) = f.at(i, j) + pos.at(i, j);
    }
    for (size_t i = 0; i < q.rows(); ++i) {
        for (size_t j = 0; j < q.cols(); ++j) {
            prefix.at(f.rows() + i, j) = q.at(i, j) + pos.at(f.rows() + i, j);
        }
    }
    return prefix;
}

Tensor forward_logits_raw(const ParamStore& store, const PlannerConfig& cfg, const Tensor& prefix,
                          const std::vector<int>& input) {
    nn::CausalDecoder decoder(store, "blk", "final_ln", static_cast<size_t>(cfg.blocks),
                              static_cast<size_t>(cfg.heads));
    Tensor stacked(prefix.rows() + input.size(), prefix.cols());
    for (size_t i = 0; i < prefix.rows(); ++i) {
        for (size_t j = 0; j < prefix.cols(); ++j) stacked.at(i, j) = prefix.at(i, j);
    }
    const Tensor emb = embed_tokens_raw(store, input, 0);
    for (size_t i = 0; i < emb.rows(); ++i) {
        for (size_t j = 0; j < emb.cols(); ++j) stacked.at(prefix.rows() + i, j) = emb.at(i, j);
    }
    const Tensor activations = decoder.append(stacked);
    Tensor tail(input.size(), activations.cols());
    for (size_t i = 0; i < input.size(); ++i) {
        const double* src = activations.row(prefix.rows() + i);
        for (size_t j = 0; j < activations.cols(); ++j) tail.at(i, j) = src[j];
    }
    return nn::linear_raw(store, "head", tail);
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

SampleResult sample_boxes(const ParamStore& store, const PlannerConfig& cfg,
                          const SparseVoxelGrid& grid, const LabelMask2D& mask,
                          const SampleOptions& opts) {
    if (opts.temperature < 0.0) raise(ErrorCode::DomainError, "temperature must be >= 0");
    const Tensor prefix = prefix_raw(store, cfg, grid, mask);
    nn::CausalDecoder decoder(store, "blk", "final_ln", static_cast<size_t>(cfg.blocks),
                              static_cast<size_t>(cfg.heads));

    Rng rng(derive_seed(opts.seed, "plan-sample"));
    const size_t budget = 6 * static_cast<size_t>(cfg.max_boxes);
    std::vector<int> coords;
    SampleResult result;

    Tensor feed(prefix.rows() + 1, prefix.cols());
    for (size_t i = 0; i < prefix.rows(); ++i) {
        for (size_t j = 0; j < prefix.cols(); ++j) feed.at(i, j) = prefix.at(i, j);
    }
    {
        const Tensor bos = embed_tokens_raw(store, {kBosToken}, 0);
        for (size_t j = 0; j < bos.cols(); ++j) feed.at(prefix.rows(), j) = bos.at(0, j);
    }
    Tensor acts = decoder.append(feed);

    while (true) {
        Tensor last(1, acts.cols());
        for (size_t j = 0; j < acts.cols(); ++j) last.at(0, j) = acts.at(acts.rows() - 1, j);
        const Tensor logits = nn::linear_raw(store, "head", last);

        // PAD and BOS are never an option; EOS only between boxes. The budget
        // is a multiple of 6, so the allowed set is never empty.
        const bool out_of_budget = coords.size() >= budget;
        std::vector<int> allowed;
        if (coords.size() % 6 == 0) allowed.push_back(kEosToken);
        if (!out_of_budget) {
            for (int c = 0; c < cfg.resolution; ++c) allowed.push_back(coord_to_token(c));
        }

        int picked;
        if (opts.temperature == 0.0) {
            picked = allowed[0];
            for (int tok : allowed) {
                if (logits.at(0, static_cast<size_t>(tok)) >
                    logits.at(0, static_cast<size_t>(picked))) {
                    picked = tok;
                }
            }
        } else {
            double mx = logits.at(0, static_cast<size_t>(allowed[0]));
            for (int tok : allowed) mx = std::max(mx, logits.at(0, static_cast<size_t>(tok)));
            std::vector<double> weights(allowed.size());
            double total = 0.0;
            for (size_t a = 0; a < allowed.size(); ++a) {
                weights[a] = std::exp(
                    (logits.at(0, static_cast<size_t>(allowed[a])) - mx) / opts.temperature);
                total += weights[a];
            }
            double u = rng.uniform() * total;
            size_t a = 0;
            for (; a + 1 < allowed.size(); ++a) {
                if (u < weights[a]) break;
                u -= weights[a];
            }
            picked = allowed[a];
        }

        if (picked == kEosToken) {
            if (out_of_budget) {
                // Did the model actually want to stop, or did the budget force it?
                size_t best = 0;
                for (size_t c = 1; c < logits.cols(); ++c) {
                    if (logits.at(0, c) > logits.at(0, best)) best = c;
                }
                result.truncated = best != static_cast<size_t>(kEosToken);
            }
            break;
        }
        coords.push_back(token_to_coord(picked));
        acts = decoder.append(embed_tokens_raw(store, {picked}, coords.size()));
    }

    for (size_t k = 0; k + 5 < coords.size(); k += 6) {
        Aabb b{{coords[k], coords[k + 1], coords[k + 2]},
               {coords[k + 3], coords[k + 4], coords[k + 5]}};
        for (int axis = 0; axis < 3; ++axis) {
            if (b.min[axis] > b.max[axis]) std::swap(b.min[axis], b.max[axis]);
        }
        result.boxes.push_back(b);
    }
    result.boxes = canonicalize(std::move(result.boxes));
    return result;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

double teacher_forced_accuracy(const ParamStore& store, const PlannerConfig& cfg,
                               const std::vector<PlanExample>& examples) {
    if (examples.empty()) raise(ErrorCode::EmptyInput, "accuracy: no examples");
    size_t hits = 0, total = 0;
    for (const PlanExample& ex : examples) {
        const EncodedExample enc = encode_example(ex.boxes, cfg.resolution);
        const Tensor prefix = prefix_raw(store, cfg, ex.grid, ex.mask);
        const Tensor logits = forward_logits_raw(store, cfg, prefix, enc.input);
        for (size_t i = 0; i < enc.targets.size(); ++i) {
            size_t best = 0;
            for (size_t c = 1; c < logits.cols(); ++c) {
                if (logits.at(i, c) > logits.at(i, best)) best = c;
            }
            hits += best == static_cast<size_t>(enc.targets[i]) ? 1 : 0;
            ++total;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

TrainStats train(ParamStore& store, const PlannerConfig& cfg,
                 const std::vector<PlanExample>& examples) {
    if (examples.empty()) raise(ErrorCode::EmptyInput, "train: no examples");
    std::vector<EncodedExample> encoded;
    encoded.reserve(examples.size());
    for (const PlanExample& ex : examples) {
        if (static_cast<size_t>(ex.boxes.size()) > static_cast<size_t>(cfg.max_boxes)) {
            raise(ErrorCode::Malformed, "train: example exceeds max_boxes");
        }
        encoded.push_back(encode_example(ex.boxes, cfg.resolution));
    }

    TrainStats stats;
    for (int step = 0; step < cfg.steps; ++step) {
        const size_t idx = static_cast<size_t>(step) % examples.size();
        const PlanExample& ex = examples[idx];
        const EncodedExample& enc = encoded[idx];

        ad::Leaves leaves = ad::make_leaves(store);
        Value prefix = conditioning_prefix(leaves, cfg, ex.grid, ex.mask);
        Value logits = forward_logits(leaves, cfg, prefix, enc.input);
        Value base = loss_base(logits, enc.targets);
        Value cov = loss_coverage_soft(logits, enc.roles, enc.seq);
        Value total = loss_total(base, cov, cfg.lambda_cov);
        total->value.check_finite("planner loss");
        stats.final_loss = total->value.item();

        ad::backward(total);
        auto grads = ad::collect_grads(store, leaves);
        ad::adam_step(store, grads, cfg.lr);
        stats.steps_run = step + 1;

        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
            stats.final_accuracy = teacher_forced_accuracy(store, cfg, examples);
            if (cfg.early_stop && stats.final_accuracy == 1.0) {
                stats.early_stopped = true;
                break;
            }
        }
    }
    if (stats.final_accuracy == 0.0) {
        stats.final_accuracy = teacher_forced_accuracy(store, cfg, examples);
    }
    return stats;
}

}  // namespace partflow::planner
