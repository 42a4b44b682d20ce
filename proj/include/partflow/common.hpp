#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace partflow {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
    EmptyInput,
    OutOfBounds,
    ResolutionMismatch,
    UnknownPart,
    MissingLabels,
    Malformed,
    InvalidBox,
    ShapeError,
    NumericalError,
    LabelOverflow,
    MissingBox,
    DomainError,
    PpeError,
    EmptyPart,
    DegenerateShape,
    GenerationFailed,
    StratificationError,
    ConfigError,
    IoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

// ---------------------------------------------------------------------------
// Small integer vector for voxel coordinates
// ---------------------------------------------------------------------------

struct IVec3 {
    int x = 0;
    int y = 0;
    int z = 0;

    friend bool operator==(const IVec3& a, const IVec3& b) {
        return a.x == b.x && a.y == b.y && a.z == b.z;
    }
    friend bool operator!=(const IVec3& a, const IVec3& b) { return !(a == b); }

    // Canonical order is (z, y, x) lexicographic, matching the box sort order.
    friend bool operator<(const IVec3& a, const IVec3& b) {
        if (a.z != b.z) return a.z < b.z;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    }

    int operator[](int axis) const {
        switch (axis) {
            case 0: return x;
            case 1: return y;
            default: return z;
        }
    }
    int& operator[](int axis) {
        switch (axis) {
            case 0: return x;
            case 1: return y;
            default: return z;
        }
    }
};

struct IVec3Hash {
    size_t operator()(const IVec3& v) const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](uint64_t value) {
            h ^= value;
            h *= 0x100000001b3ull;
        };
        mix(static_cast<uint64_t>(static_cast<uint32_t>(v.x)));
        mix(static_cast<uint64_t>(static_cast<uint32_t>(v.y)));
        mix(static_cast<uint64_t>(static_cast<uint32_t>(v.z)));
        return static_cast<size_t>(h);
    }
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double operator[](int axis) const {
        switch (axis) {
            case 0: return x;
            case 1: return y;
            default: return z;
        }
    }
    double& operator[](int axis) {
        switch (axis) {
            case 0: return x;
            case 1: return y;
            default: return z;
        }
    }

    friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(const Vec3& a, double s) { return {a.x * s, a.y * s, a.z * s}; }
};

// ---------------------------------------------------------------------------
// Hashing and seed derivation
// ---------------------------------------------------------------------------

// FNV-1a over a byte string. Used for config hashes and seed derivation.
uint64_t fnv1a64(const void* data, size_t size);
uint64_t fnv1a64(const std::string& text);
std::string hex64(uint64_t value);

// Every random stream derives from the root seed as root ^ fnv1a64(tag),
// so one config seed reproduces the whole run.
uint64_t derive_seed(uint64_t root, const std::string& tag);

// ---------------------------------------------------------------------------
// Deterministic RNG
// ---------------------------------------------------------------------------

// splitmix64 generator with portable uniform/normal helpers. std::mt19937
// distributions are implementation-defined, this one is bit-stable anywhere.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller; one value per call, the pair's second half is discarded to
    // keep call sites order-independent.
    double normal();

private:
    uint64_t state_;
};

}  // namespace partflow
