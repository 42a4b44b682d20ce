#include "partflow/box_codec.hpp"

#include <algorithm>
#include <array>
#include <string>

namespace partflow {

std::vector<size_t> TokenRoleMap::min_positions() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < roles.size(); ++i) {
        if (roles[i].kind == TokenRole::Kind::Min) out.push_back(i);
    }
    return out;
}

std::vector<size_t> TokenRoleMap::max_positions() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < roles.size(); ++i) {
        if (roles[i].kind == TokenRole::Kind::Max) out.push_back(i);
    }
    return out;
}

std::vector<Aabb> canonicalize(std::vector<Aabb> boxes) {
    std::stable_sort(boxes.begin(), boxes.end(), [](const Aabb& a, const Aabb& b) {
        const auto key = [](const Aabb& box) {
            return std::array<int, 6>{box.min.z, box.min.y, box.min.x,
                                      box.max.z, box.max.y, box.max.x};
        };
        return key(a) < key(b);
    });
    return boxes;
}

BoxTokenSequence tokenize(const std::vector<Aabb>& boxes, int resolution) {
    if (resolution <= 0) raise(ErrorCode::DomainError, "resolution must be positive");
    BoxTokenSequence seq;
    seq.resolution = resolution;
    seq.tokens.reserve(boxes.size() * 6 + 2);
    seq.tokens.push_back(kBosToken);
    for (size_t b = 0; b < boxes.size(); ++b) {
        const Aabb& box = boxes[b];
        if (!box.valid()) {
            raise(ErrorCode::InvalidBox, "box " + std::to_string(b) + " has min > max");
        }
        if (!box.inside_grid(resolution)) {
            raise(ErrorCode::OutOfBounds,
                  "box " + std::to_string(b) + " exceeds resolution " + std::to_string(resolution));
        }
        const int coords[6] = {box.min.x, box.min.y, box.min.z, box.max.x, box.max.y, box.max.z};
        for (int c : coords) seq.tokens.push_back(coord_to_token(c));
    }
    seq.tokens.push_back(kEosToken);
    return seq;
}

std::vector<Aabb> detokenize(const BoxTokenSequence& seq) {
    const auto& t = seq.tokens;
    if (t.size() < 2 || t.front() != kBosToken || t.back() != kEosToken) {
        raise(ErrorCode::Malformed, "sequence must start with BOS and end with EOS");
    }
    const size_t interior = t.size() - 2;
    if (interior % 6 != 0) {
        raise(ErrorCode::Malformed,
              "interior length " + std::to_string(interior) + " not a multiple of 6");
    }
    const int hi = kCoordBase + seq.resolution;
    std::vector<Aabb> boxes;
    boxes.reserve(interior / 6);
    for (size_t b = 0; b < interior / 6; ++b) {
        int coords[6];
        for (int k = 0; k < 6; ++k) {
            const int tok = t[1 + b * 6 + k];
            if (tok < kCoordBase || tok >= hi) {
                raise(ErrorCode::Malformed, "token " + std::to_string(tok) +
                                                " at position " + std::to_string(1 + b * 6 + k) +
                                                " is not a coordinate");
            }
            coords[k] = token_to_coord(tok);
        }
        Aabb box;
        box.min = {coords[0], coords[1], coords[2]};
        box.max = {coords[3], coords[4], coords[5]};
        if (!box.valid()) {
            raise(ErrorCode::InvalidBox, "box " + std::to_string(b) + " decodes with min > max");
        }
        boxes.push_back(box);
    }
    return boxes;
}

TokenRoleMap role_map(const BoxTokenSequence& seq) {
    // Validates via detokenize so malformed sequences fail identically.
    const size_t num_boxes = detokenize(seq).size();
    TokenRoleMap map;
    map.roles.reserve(seq.tokens.size());
    map.roles.push_back({TokenRole::Kind::Bos, -1, -1});
    for (size_t b = 0; b < num_boxes; ++b) {
        for (int axis = 0; axis < 3; ++axis) {
            map.roles.push_back({TokenRole::Kind::Min, axis, static_cast<int>(b)});
        }
        for (int axis = 0; axis < 3; ++axis) {
            map.roles.push_back({TokenRole::Kind::Max, axis, static_cast<int>(b)});
        }
    }
    map.roles.push_back({TokenRole::Kind::Eos, -1, -1});
    return map;
}

}  // namespace partflow
