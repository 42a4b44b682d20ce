#include "partflow/synthesizer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <unordered_map>

#include "partflow/nn.hpp"

namespace partflow::synth {

namespace {

constexpr size_t kDescriptorDims = 5;  // nx, ny, nz, neighbour density, boundary
constexpr size_t kPosDims = 6;         // sinusoid dims per axis

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Raw per-voxel geometry, before the random projection.
Tensor raw_descriptors(const SparseVoxelGrid& grid, const std::vector<IVec3>& positions) {
    Tensor raw(positions.size(), kDescriptorDims);
    const double n = static_cast<double>(grid.resolution());
    for (size_t i = 0; i < positions.size(); ++i) {
        const IVec3 p = positions[i];
        const int label = grid.label_at(p);
        int count = 0;
        bool boundary = false;
        for (int dz = -1; dz <= 1; ++dz) {
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0 && dz == 0) continue;
                    const IVec3 q{p.x + dx, p.y + dy, p.z + dz};
                    const bool active = grid.contains(q);
                    if (active) ++count;
                    if (!active || grid.label_at(q) != label) boundary = true;
                }
            }
        }
        raw.at(i, 0) = (p.x + 0.5) / n;
        raw.at(i, 1) = (p.y + 0.5) / n;
        raw.at(i, 2) = (p.z + 0.5) / n;
        raw.at(i, 3) = count / 26.0;
        raw.at(i, 4) = boundary ? 1.0 : 0.0;
    }
    return raw;
}

void check_ppe(const TokenBatch& batch, int max_parts) {
    if (batch.ppe.size() != batch.size()) {
        raise(ErrorCode::PpeError, "ppe assignment does not cover the tokens");
    }
    if (batch.ppe.front() != 0) {
        raise(ErrorCode::PpeError, "whole-shape tokens must open the sequence");
    }
    for (size_t i = 1; i < batch.ppe.size(); ++i) {
        const int step = batch.ppe[i] - batch.ppe[i - 1];
        if (step != 0 && step != 1) {
            raise(ErrorCode::PpeError, "ppe indices must be contiguous groups");
        }
    }
    if (batch.ppe.back() > max_parts) {
        raise(ErrorCode::PpeError,
              "ppe index " + std::to_string(batch.ppe.back()) + " exceeds max_parts");
    }
}

}  // namespace

size_t PartLatentSet::total_tokens() const {
    size_t n = whole.positions.size();
    for (const PartTokens& p : parts) n += p.positions.size();
    return n;
}

Tensor descriptor_projection(int D, uint64_t seed) {
    if (D < 1) raise(ErrorCode::DomainError, "descriptor projection needs D >= 1");
    Rng rng(derive_seed(seed, "synth.descriptor"));
    Tensor proj(kDescriptorDims, static_cast<size_t>(D));
    const double scale = 1.0 / std::sqrt(static_cast<double>(kDescriptorDims));
    for (size_t i = 0; i < proj.size(); ++i) proj.at(i) = rng.normal() * scale;
    return proj;
}

PartLatentSet build_targets(const SparseVoxelGrid& grid, const std::vector<Aabb>& boxes,
                            double alpha, int D, uint64_t seed) {
    if (!grid.labeled()) raise(ErrorCode::MissingLabels, "stage-two targets need part labels");
    if (alpha <= 0.0) raise(ErrorCode::DomainError, "alpha must be positive");
    for (size_t i = 0; i < grid.positions().size(); ++i) {
        const int label = grid.labels()[i];
        if (label < 0 || static_cast<size_t>(label) >= boxes.size()) {
            raise(ErrorCode::MissingBox,
                  "part " + std::to_string(label) + " has no box");
        }
    }
    const Tensor proj = descriptor_projection(D, seed);
    const size_t dc = static_cast<size_t>(D);

    PartLatentSet set;
    set.D = D;
    set.resolution = grid.resolution();

    auto fill = [&](PartTokens& out, const std::vector<IVec3>& positions, int own_label) {
        out.positions = positions;
        out.latent = Tensor(positions.size(), dc + 1);
        if (positions.empty()) return;
        const Tensor content = matmul(raw_descriptors(grid, positions), proj);
        for (size_t i = 0; i < positions.size(); ++i) {
            const bool noise = own_label >= 0 && grid.label_at(positions[i]) != own_label;
            for (size_t j = 0; j < dc; ++j) out.latent.at(i, j) = noise ? 0.0 : content.at(i, j);
            out.latent.at(i, dc) = noise ? -alpha : alpha;
        }
    };

    set.whole.part_id = -1;
    fill(set.whole, grid.positions(), -1);
    for (size_t k = 0; k < boxes.size(); ++k) {
        PartTokens part;
        part.part_id = static_cast<int>(k);
        fill(part, voxels_in_box(grid, boxes[k]), static_cast<int>(k));
        set.parts.push_back(std::move(part));
    }
    return set;
}

Tensor interpolate(const Tensor& x0, const Tensor& eps, double t) {
    if (!x0.same_shape(eps)) raise(ErrorCode::ShapeError, "interpolation endpoints disagree");
    if (t < 0.0 || t > 1.0) raise(ErrorCode::DomainError, "flow time outside [0, 1]");
    if (t == 0.0) return x0;
    if (t == 1.0) return eps;
    Tensor out = x0;
    for (size_t i = 0; i < out.size(); ++i) out.at(i) = (1.0 - t) * x0.at(i) + t * eps.at(i);
    return out;
}

TokenBatch flatten(const PartLatentSet& set, int whole_cap) {
    if (whole_cap < 1) raise(ErrorCode::DomainError, "whole_cap must be positive");
    if (set.whole.positions.empty()) raise(ErrorCode::EmptyInput, "no whole-shape tokens");
    const size_t dc = static_cast<size_t>(set.D) + 1;

    // Stride the whole-shape context down to the budget.
    std::vector<size_t> keep;
    const size_t w = set.whole.positions.size();
    const size_t stride = (w + whole_cap - 1) / static_cast<size_t>(whole_cap);
    for (size_t i = 0; i < w; i += stride) keep.push_back(i);

    size_t total = keep.size();
    for (const PartTokens& p : set.parts) total += p.positions.size();

    TokenBatch batch;
    batch.resolution = set.resolution;
    batch.positions.reserve(total);
    batch.ppe.reserve(total);
    batch.x = Tensor(total, dc);

    size_t row = 0;
    auto push = [&](const PartTokens& src, size_t src_row, int ppe) {
        batch.positions.push_back(src.positions[src_row]);
        batch.ppe.push_back(ppe);
        if (src.latent.rows() > 0) {
            if (src.latent.cols() != dc) {
                raise(ErrorCode::ShapeError, "latent width disagrees with D");
            }
            for (size_t j = 0; j < dc; ++j) batch.x.at(row, j) = src.latent.at(src_row, j);
        }
        ++row;
    };
    for (size_t i : keep) push(set.whole, i, 0);
    for (size_t k = 0; k < set.parts.size(); ++k) {
        for (size_t i = 0; i < set.parts[k].positions.size(); ++i) {
            push(set.parts[k], i, static_cast<int>(k) + 1);
        }
    }
    return batch;
}

CoarseGroups coarse_groups(const TokenBatch& batch) {
    if (batch.size() == 0) raise(ErrorCode::EmptyInput, "no tokens to group");
    CoarseGroups out;
    out.fine_to_coarse.resize(batch.size());
    std::unordered_map<uint64_t, size_t> index;
    for (size_t i = 0; i < batch.size(); ++i) {
        const IVec3 p = batch.positions[i];
        const uint64_t key = (static_cast<uint64_t>(batch.ppe[i]) << 48) |
                             (static_cast<uint64_t>(p.x >> 1) << 32) |
                             (static_cast<uint64_t>(p.y >> 1) << 16) |
                             static_cast<uint64_t>(p.z >> 1);
        auto [it, fresh] = index.try_emplace(key, out.members.size());
        if (fresh) {
            out.members.emplace_back();
            out.positions.push_back({p.x >> 1, p.y >> 1, p.z >> 1});
            out.ppe.push_back(batch.ppe[i]);
        }
        out.members[it->second].push_back(static_cast<int>(i));
        out.fine_to_coarse[i] = static_cast<int>(it->second);
    }
    return out;
}

void register_model(ad::ParamStore& store, const SynthConfig& cfg) {
    cfg.validate();
    const size_t d = static_cast<size_t>(cfg.d);
    const size_t channels = static_cast<size_t>(cfg.D) + 1;
    auto seed_for = [&](const char* name) { return derive_seed(cfg.seed, name); };

    nn::register_linear(store, "in_proj", channels + 3 * kPosDims, d, seed_for("in_proj"));
    store.add("ppe", {static_cast<size_t>(cfg.max_parts) + 1, d},
              std::sqrt(1.0 / static_cast<double>(cfg.d)), seed_for("ppe"));
    for (int b = 0; b < cfg.blocks; ++b) {
        const std::string prefix = "blk" + std::to_string(b);
        nn::register_transformer_block(store, prefix, d, 4, seed_for(prefix.c_str()));
    }
    nn::register_layer_norm(store, "final_ln", d);
    // The upsample projection re-individualizes tokens that shared a coarse
    // cell: without the token's own position here, validity could only be
    // decided per cell, and mixed cells cap sign accuracy well below target.
    nn::register_linear(store, "up_proj", d + 3 * kPosDims + channels, d, seed_for("up_proj"));
    nn::register_linear(store, "head", d + channels, channels, seed_for("head"));
}

ad::Value denoiser_forward(const ad::Leaves& leaves, const SynthConfig& cfg,
                           const TokenBatch& batch, const ad::Value& x, double t) {
    if (batch.size() == 0) raise(ErrorCode::EmptyInput, "empty token batch");
    if (t < 0.0 || t > 1.0) raise(ErrorCode::DomainError, "flow time outside [0, 1]");
    const size_t channels = static_cast<size_t>(cfg.D) + 1;
    if (x->value.rows() != batch.size() || x->value.cols() != channels) {
        raise(ErrorCode::ShapeError, "latents do not match the token batch");
    }
    check_ppe(batch, cfg.max_parts);

    const CoarseGroups groups = coarse_groups(batch);
    const int coarse_res = (batch.resolution + 1) / 2;

    ad::Value coarse = ad::group_mean_rows(x, groups.members);
    ad::Value pos = ad::constant(nn::sinusoid_positions(groups.positions, coarse_res, kPosDims));
    ad::Value h = nn::linear(leaves, "in_proj", ad::concat_cols({coarse, pos}));
    h = ad::add(h, ad::gather_rows(leaves("ppe"), groups.ppe));
    h = ad::add_row(h, ad::constant(nn::sinusoid_rows({t}, static_cast<size_t>(cfg.d))));
    for (int b = 0; b < cfg.blocks; ++b) {
        h = nn::transformer_block(leaves, "blk" + std::to_string(b), h,
                                  static_cast<size_t>(cfg.heads), false);
    }
    h = nn::layer_norm(leaves, "final_ln", h);
    ad::Value fine = ad::gather_rows(h, groups.fine_to_coarse);
    ad::Value fpos =
        ad::constant(nn::sinusoid_positions(batch.positions, batch.resolution, kPosDims));
    ad::Value up = ad::gelu(nn::linear(leaves, "up_proj", ad::concat_cols({fine, fpos, x})));
    return nn::linear(leaves, "head", ad::concat_cols({up, x}));
}

ad::Value loss_cfm(const ad::Value& v, const Tensor& x0, const Tensor& eps) {
    if (!x0.same_shape(eps) || !v->value.same_shape(x0)) {
        raise(ErrorCode::ShapeError, "velocity and endpoints disagree in shape");
    }
    Tensor target = eps;
    for (size_t i = 0; i < target.size(); ++i) target.at(i) = eps.at(i) - x0.at(i);
    ad::Value diff = ad::sub(v, ad::constant(std::move(target)));
    return ad::mean(ad::mul(diff, diff));
}

SampleResult sample_parts(const ad::ParamStore& store, const SynthConfig& cfg,
                          const std::vector<Aabb>& boxes, const SparseVoxelGrid& whole,
                          int steps, uint64_t seed) {
    if (steps < 1) raise(ErrorCode::DomainError, "need at least one integration step");
    if (whole.positions().empty()) raise(ErrorCode::EmptyInput, "empty whole-shape grid");

    SampleResult result;
    PartLatentSet& set = result.set;
    set.D = cfg.D;
    set.resolution = whole.resolution();
    set.whole.part_id = -1;
    set.whole.positions = whole.positions();
    for (size_t k = 0; k < boxes.size(); ++k) {
        std::vector<IVec3> inside = voxels_in_box(whole, boxes[k]);
        if (inside.empty()) {
            std::cerr << "warning: box " << k << " holds no voxels, part skipped\n";
            result.skipped_boxes.push_back(static_cast<int>(k));
            continue;
        }
        PartTokens part;
        part.part_id = static_cast<int>(k);
        part.positions = std::move(inside);
        set.parts.push_back(std::move(part));
    }

    TokenBatch batch = flatten(set, cfg.whole_cap);
    const size_t channels = static_cast<size_t>(cfg.D) + 1;
    Tensor x(batch.size(), channels);
    Rng rng(derive_seed(seed, "synth.sample.init"));
    for (size_t i = 0; i < x.size(); ++i) x.at(i) = rng.normal();

    const ad::Leaves leaves = ad::make_leaves(store);
    const double dt = 1.0 / static_cast<double>(steps);
    for (int k = 0; k < steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) / static_cast<double>(steps);
        const Tensor v = denoiser_forward(leaves, cfg, batch, ad::constant(x), t)->value;
        for (size_t i = 0; i < x.size(); ++i) x.at(i) -= dt * v.at(i);
        ++result.forward_passes;
    }

    // Scatter the integrated latents back onto the groups. The whole-shape
    // positions shrink to the strided context subset actually denoised.
    size_t row = 0;
    const size_t kept = batch.size() - (set.total_tokens() - set.whole.positions.size());
    std::vector<IVec3> whole_kept(batch.positions.begin(),
                                  batch.positions.begin() + static_cast<long>(kept));
    set.whole.positions = std::move(whole_kept);
    auto take = [&](PartTokens& part) {
        part.latent = Tensor(part.positions.size(), channels);
        for (size_t i = 0; i < part.positions.size(); ++i) {
            for (size_t j = 0; j < channels; ++j) part.latent.at(i, j) = x.at(row, j);
            ++row;
        }
    };
    take(set.whole);
    for (PartTokens& part : set.parts) take(part);
    return result;
}

bool retained(double f_valid, double beta) { return sigmoid(f_valid) > beta; }

std::vector<RetainedPart> discard_voxels(const PartLatentSet& set, double beta) {
    if (beta <= 0.0 || beta >= 1.0) raise(ErrorCode::DomainError, "beta must lie in (0, 1)");
    const size_t dc = static_cast<size_t>(set.D);
    std::vector<RetainedPart> out;
    for (const PartTokens& part : set.parts) {
        RetainedPart kept;
        kept.part_id = part.part_id;
        std::vector<size_t> rows;
        for (size_t i = 0; i < part.positions.size(); ++i) {
            if (retained(part.latent.at(i, dc), beta)) rows.push_back(i);
        }
        kept.content = Tensor(rows.size(), dc);
        for (size_t r = 0; r < rows.size(); ++r) {
            kept.positions.push_back(part.positions[rows[r]]);
            kept.score.push_back(sigmoid(part.latent.at(rows[r], dc)));
            for (size_t j = 0; j < dc; ++j) kept.content.at(r, j) = part.latent.at(rows[r], j);
        }
        out.push_back(std::move(kept));
    }
    return out;
}

SparseVoxelGrid merge_parts(const std::vector<RetainedPart>& parts, int resolution) {
    struct Claim {
        double score;
        int part_id;
    };
    std::unordered_map<uint64_t, Claim> winner;
    auto key_of = [](const IVec3& p) {
        return (static_cast<uint64_t>(p.x) << 42) | (static_cast<uint64_t>(p.y) << 21) |
               static_cast<uint64_t>(p.z);
    };
    for (const RetainedPart& part : parts) {
        for (size_t i = 0; i < part.positions.size(); ++i) {
            const uint64_t key = key_of(part.positions[i]);
            const Claim claim{part.score[i], part.part_id};
            auto [it, fresh] = winner.try_emplace(key, claim);
            if (!fresh && (claim.score > it->second.score ||
                           (claim.score == it->second.score && claim.part_id < it->second.part_id))) {
                it->second = claim;
            }
        }
    }
    std::vector<IVec3> positions;
    std::vector<int> labels;
    for (const RetainedPart& part : parts) {
        for (const IVec3& p : part.positions) {
            auto it = winner.find(key_of(p));
            if (it != winner.end() && it->second.part_id == part.part_id) {
                positions.push_back(p);
                labels.push_back(part.part_id);
                winner.erase(it);  // each position emitted once
            }
        }
    }
    return SparseVoxelGrid(resolution, std::move(positions), std::move(labels));
}

TrainStats train(ad::ParamStore& store, const SynthConfig& cfg,
                 const std::vector<TrainExample>& examples) {
    if (examples.empty()) raise(ErrorCode::EmptyInput, "no training examples");
    Rng rng(derive_seed(cfg.seed, "synth.train"));
    TrainStats stats;
    for (int step = 0; step < cfg.train_steps; ++step) {
        const TrainExample& ex = examples[static_cast<size_t>(step) % examples.size()];
        const Tensor& x0 = ex.batch.x;
        Tensor eps(x0.rows(), x0.cols());
        for (size_t i = 0; i < eps.size(); ++i) eps.at(i) = rng.normal();
        const double t = rng.uniform();

        ad::Leaves leaves = ad::make_leaves(store);
        ad::Value v = denoiser_forward(leaves, cfg, ex.batch, ad::constant(interpolate(x0, eps, t)), t);
        ad::Value loss = loss_cfm(v, x0, eps);
        ad::backward(loss);
        ad::adam_step(store, ad::collect_grads(store, leaves), cfg.lr);
        stats.final_loss = loss->value.item();
        ++stats.steps_run;
    }
    return stats;
}

double validity_sign_accuracy(const PartLatentSet& generated, const SparseVoxelGrid& gt) {
    if (!gt.labeled()) raise(ErrorCode::MissingLabels, "reference grid must be labeled");
    const size_t dc = static_cast<size_t>(generated.D);
    size_t total = 0;
    size_t hits = 0;
    for (const PartTokens& part : generated.parts) {
        for (size_t i = 0; i < part.positions.size(); ++i) {
            const IVec3 p = part.positions[i];
            const bool truly_part = gt.contains(p) && gt.label_at(p) == part.part_id;
            const bool predicted = part.latent.at(i, dc) > 0.0;
            hits += truly_part == predicted ? 1 : 0;
            ++total;
        }
    }
    if (total == 0) raise(ErrorCode::EmptyInput, "no part tokens to score");
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace partflow::synth
