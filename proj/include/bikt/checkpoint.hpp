#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace bikt {

/// Versioned model container: a JSON header (model kind, architecture,
/// loss/kernel settings, freeze mask) followed by raw float32 parameter
/// blobs. Parameters round-trip bit-exactly.
///
/// Layout: "BIKTCKPT", u32 LE version, u32 LE header length, header JSON,
/// then each parameter's values as f32 LE in header order.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    struct Blob {
        std::string name;
        std::vector<float> values;
    };

    std::string kind;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<Blob> params;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Thrown when a checkpoint is missing, corrupt, or of the wrong kind.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace bikt
