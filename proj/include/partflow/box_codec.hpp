#pragma once

#include <cstdint>
#include <vector>

#include "partflow/voxel.hpp"

namespace partflow {

// Token vocabulary for box sequences: PAD=0, BOS=1, EOS=2, coordinate c -> 3+c.
// Vocabulary size is resolution + 3.
constexpr int kPadToken = 0;
constexpr int kBosToken = 1;
constexpr int kEosToken = 2;
constexpr int kCoordBase = 3;

inline int coord_to_token(int c) { return kCoordBase + c; }
inline int token_to_coord(int t) { return t - kCoordBase; }

struct BoxTokenSequence {
    std::vector<int> tokens;
    int resolution = 0;

    size_t size() const { return tokens.size(); }
    int vocab_size() const { return resolution + kCoordBase; }
    size_t num_boxes() const { return (tokens.size() - 2) / 6; }
};

// Per-position roles for the coverage loss. `axis` is 0/1/2 for x/y/z on
// Min/Max positions and -1 otherwise; `box` indexes the owning box (-1 for
// BOS/EOS).
struct TokenRole {
    enum class Kind { Bos, Eos, Min, Max };
    Kind kind;
    int axis = -1;
    int box = -1;
};

struct TokenRoleMap {
    std::vector<TokenRole> roles;

    std::vector<size_t> min_positions() const;
    std::vector<size_t> max_positions() const;
};

// Stable sort by ascending (z_min, y_min, x_min), ties by (z_max, y_max, x_max).
std::vector<Aabb> canonicalize(std::vector<Aabb> boxes);

// BOS, then per box (x_min, y_min, z_min, x_max, y_max, z_max) as coordinate
// tokens, then EOS. Boxes are emitted in the order given.
BoxTokenSequence tokenize(const std::vector<Aabb>& boxes, int resolution);

// Exact inverse of tokenize on well-formed sequences.
std::vector<Aabb> detokenize(const BoxTokenSequence& seq);

TokenRoleMap role_map(const BoxTokenSequence& seq);

}  // namespace partflow
