#include "partflow/io.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>

namespace partflow::io {

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) raise(ErrorCode::Malformed, "invalid JSON in " + path);
    return j;
}

void save_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out) raise(ErrorCode::IoError, "write failed for " + path);
}

// ---------------------------------------------------------------------------
// Voxel grids
// ---------------------------------------------------------------------------

json grid_to_json(const SparseVoxelGrid& grid) {
    json voxels = json::array();
    for (const IVec3& p : grid.positions()) voxels.push_back({p.x, p.y, p.z});
    json j;
    j["resolution"] = grid.resolution();
    j["voxels"] = std::move(voxels);
    if (grid.labeled()) {
        j["labels"] = grid.labels();
    } else {
        j["labels"] = nullptr;
    }
    return j;
}

SparseVoxelGrid grid_from_json(const json& j) {
    if (!j.is_object() || !j.contains("resolution") || !j.contains("voxels")) {
        raise(ErrorCode::Malformed, "voxel file needs resolution and voxels");
    }
    if (!j["resolution"].is_number_integer()) {
        raise(ErrorCode::Malformed, "resolution must be an integer");
    }
    const int resolution = j["resolution"].get<int>();
    std::vector<IVec3> positions;
    for (const json& v : j["voxels"]) {
        if (!v.is_array() || v.size() != 3) raise(ErrorCode::Malformed, "voxel must be [x,y,z]");
        positions.push_back({v[0].get<int>(), v[1].get<int>(), v[2].get<int>()});
    }
    if (j.contains("labels") && !j["labels"].is_null()) {
        std::vector<int> labels = j["labels"].get<std::vector<int>>();
        if (labels.size() != positions.size()) {
            raise(ErrorCode::Malformed, "labels and voxels disagree in length");
        }
        return SparseVoxelGrid(resolution, std::move(positions), std::move(labels));
    }
    return SparseVoxelGrid(resolution, std::move(positions));
}

void save_grid(const std::string& path, const SparseVoxelGrid& grid) {
    save_json(path, grid_to_json(grid));
}

SparseVoxelGrid load_grid(const std::string& path) { return grid_from_json(load_json(path)); }

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

json boxes_to_json(const std::vector<Aabb>& boxes) {
    json j = json::array();
    for (const Aabb& b : boxes) {
        j.push_back({{"min", {b.min.x, b.min.y, b.min.z}}, {"max", {b.max.x, b.max.y, b.max.z}}});
    }
    return j;
}

std::vector<Aabb> boxes_from_json(const json& j) {
    if (j.is_object() && j.contains("boxes")) return boxes_from_json(j["boxes"]);
    if (!j.is_array()) raise(ErrorCode::Malformed, "box file must be a list");
    std::vector<Aabb> boxes;
    for (const json& bj : j) {
        if (!bj.contains("min") || !bj.contains("max") || bj["min"].size() != 3 ||
            bj["max"].size() != 3) {
            raise(ErrorCode::Malformed, "box needs min and max triples");
        }
        Aabb b{{bj["min"][0].get<int>(), bj["min"][1].get<int>(), bj["min"][2].get<int>()},
               {bj["max"][0].get<int>(), bj["max"][1].get<int>(), bj["max"][2].get<int>()}};
        if (!b.valid()) raise(ErrorCode::InvalidBox, "box min exceeds max");
        boxes.push_back(b);
    }
    return boxes;
}

void save_boxes(const std::string& path, const std::vector<Aabb>& boxes) {
    save_json(path, boxes_to_json(boxes));
}

std::vector<Aabb> load_boxes(const std::string& path) { return boxes_from_json(load_json(path)); }

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

json mask_to_json(const LabelMask2D& mask) {
    json j;
    j["height"] = mask.height;
    j["width"] = mask.width;
    j["num_parts"] = mask.num_parts;
    j["entries"] = mask.entries;
    return j;
}

LabelMask2D mask_from_json(const json& j) {
    LabelMask2D mask;
    for (const char* key : {"height", "width", "num_parts", "entries"}) {
        if (!j.contains(key)) raise(ErrorCode::Malformed, std::string("mask needs ") + key);
    }
    mask.height = j["height"].get<int>();
    mask.width = j["width"].get<int>();
    mask.num_parts = j["num_parts"].get<int>();
    mask.entries = j["entries"].get<std::vector<int>>();
    mask.validate();
    return mask;
}

void save_mask(const std::string& path, const LabelMask2D& mask) {
    save_json(path, mask_to_json(mask));
}

LabelMask2D load_mask(const std::string& path) { return mask_from_json(load_json(path)); }

// ---------------------------------------------------------------------------
// Token streams
// ---------------------------------------------------------------------------

void save_tokens(const std::string& path, const BoxTokenSequence& seq) {
    std::ofstream out(path);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    out << "N=" << seq.resolution << '\n';
    for (size_t i = 0; i < seq.tokens.size(); ++i) {
        out << seq.tokens[i] << (i + 1 == seq.tokens.size() ? '\n' : ' ');
    }
    if (!out) raise(ErrorCode::IoError, "write failed for " + path);
}

BoxTokenSequence load_tokens(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    std::string header;
    if (!std::getline(in, header) || header.rfind("N=", 0) != 0) {
        raise(ErrorCode::Malformed, "token stream must start with N=<resolution>");
    }
    BoxTokenSequence seq;
    try {
        seq.resolution = std::stoi(header.substr(2));
    } catch (const std::exception&) {
        raise(ErrorCode::Malformed, "bad resolution header: " + header);
    }
    int token;
    while (in >> token) seq.tokens.push_back(token);
    if (!in.eof()) raise(ErrorCode::Malformed, "non-integer token in " + path);
    return seq;
}

// ---------------------------------------------------------------------------
// OBJ meshes
// ---------------------------------------------------------------------------

TriMesh obj_from_string(const std::string& text) {
    TriMesh mesh;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            Vec3 v{};
            if (!(ls >> v.x >> v.y >> v.z)) {
                raise(ErrorCode::Malformed, "bad vertex at line " + std::to_string(line_no));
            }
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> corners;
            std::string field;
            while (ls >> field) {
                // "7", "7/1", "7//3", "7/1/3" all reference vertex 7.
                const size_t slash = field.find('/');
                const std::string head = slash == std::string::npos ? field : field.substr(0, slash);
                int idx = 0;
                try {
                    idx = std::stoi(head);
                } catch (const std::exception&) {
                    raise(ErrorCode::Malformed, "bad face index at line " + std::to_string(line_no));
                }
                if (idx < 0) {
                    idx = static_cast<int>(mesh.vertices.size()) + idx + 1;
                }
                if (idx <= 0) {
                    raise(ErrorCode::Malformed, "face index out of range at line " +
                                                    std::to_string(line_no));
                }
                corners.push_back(idx - 1);
            }
            if (corners.size() < 3) {
                raise(ErrorCode::Malformed, "face needs 3+ corners at line " +
                                                std::to_string(line_no));
            }
            for (size_t k = 1; k + 1 < corners.size(); ++k) {
                mesh.triangles.push_back({corners[0], corners[k], corners[k + 1]});
            }
        }
        // ignore vn/vt/usemtl/comments
    }
    return mesh;
}

TriMesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return obj_from_string(buf.str());
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) raise(ErrorCode::Malformed, "truncated checkpoint " + path);
    return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const ad::ParamStore& store, uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path);
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, config_hash);
    write_pod(out, store.step_count());
    const std::vector<std::string> names = store.names();
    write_pod(out, static_cast<uint32_t>(names.size()));
    for (const std::string& name : names) {
        write_pod(out, static_cast<uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Tensor& t = store.value(name);
        write_pod(out, static_cast<uint8_t>(t.shape().size()));
        for (size_t dim : t.shape()) write_pod(out, static_cast<uint64_t>(dim));
        for (double v : t.values()) write_pod(out, static_cast<float>(v));
    }
    if (!out) raise(ErrorCode::IoError, "write failed for " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, ad::ParamStore& store) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4)) {
        raise(ErrorCode::Malformed, "not a checkpoint: " + path);
    }
    const auto version = read_pod<uint32_t>(in, path);
    if (version != kVersion) {
        raise(ErrorCode::Malformed, "unsupported checkpoint version " + std::to_string(version));
    }
    CheckpointMeta meta;
    meta.config_hash = read_pod<uint64_t>(in, path);
    meta.step = read_pod<int64_t>(in, path);
    const auto count = read_pod<uint32_t>(in, path);
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_pod<uint16_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) raise(ErrorCode::Malformed, "truncated checkpoint " + path);
        const auto rank = read_pod<uint8_t>(in, path);
        std::vector<size_t> shape(rank);
        size_t total = 1;
        for (auto& dim : shape) {
            dim = static_cast<size_t>(read_pod<uint64_t>(in, path));
            total *= dim;
        }
        Tensor t(shape);
        for (size_t k = 0; k < total; ++k) t.at(k) = read_pod<float>(in, path);
        if (store.has(name)) {
            if (store.value(name).shape() != shape) {
                raise(ErrorCode::ShapeError, "checkpoint shape mismatch for " + name);
            }
        } else {
            store.add_zeros(name, shape);
        }
        store.value(name) = std::move(t);
    }
    store.set_step_count(meta.step);
    return meta;
}

}  // namespace partflow::io
