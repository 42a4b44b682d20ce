#include "partflow/common.hpp"

#include <cmath>
#include <cstdio>

namespace partflow {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::OutOfBounds: return "OutOfBounds";
        case ErrorCode::ResolutionMismatch: return "ResolutionMismatch";
        case ErrorCode::UnknownPart: return "UnknownPart";
        case ErrorCode::MissingLabels: return "MissingLabels";
        case ErrorCode::Malformed: return "Malformed";
        case ErrorCode::InvalidBox: return "InvalidBox";
        case ErrorCode::ShapeError: return "ShapeError";
        case ErrorCode::NumericalError: return "NumericalError";
        case ErrorCode::LabelOverflow: return "LabelOverflow";
        case ErrorCode::MissingBox: return "MissingBox";
        case ErrorCode::DomainError: return "DomainError";
        case ErrorCode::PpeError: return "PpeError";
        case ErrorCode::EmptyPart: return "EmptyPart";
        case ErrorCode::DegenerateShape: return "DegenerateShape";
        case ErrorCode::GenerationFailed: return "GenerationFailed";
        case ErrorCode::StratificationError: return "StratificationError";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::IoError: return "IoError";
    }
    return "UnknownError";
}

uint64_t fnv1a64(const void* data, size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string& text) { return fnv1a64(text.data(), text.size()); }

std::string hex64(uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return std::string(buf);
}

uint64_t derive_seed(uint64_t root, const std::string& tag) { return root ^ fnv1a64(tag); }

double Rng::normal() {
    // Draw until u1 is nonzero so the log is finite.
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace partflow
