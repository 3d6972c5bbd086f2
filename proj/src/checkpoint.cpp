#include "bikt/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>

namespace bikt {

namespace {

constexpr std::array<char, 8> kMagic = {'B', 'I', 'K', 'T', 'C', 'K', 'P', 'T'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    nlohmann::json header;
    header["kind"] = ckpt.kind;
    header["meta"] = ckpt.meta;
    header["params"] = nlohmann::json::array();
    for (const auto& b : ckpt.params) header["params"].push_back({{"name", b.name}, {"size", b.values.size()}});
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, Checkpoint::kVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : ckpt.params)
        for (float v : b.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
    if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint not found: " + path.string());
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic)
        throw CheckpointError("not a checkpoint (bad magic): " + path.string());
    const auto version = get_u32(in);
    if (version != Checkpoint::kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto len = get_u32(in);
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) throw CheckpointError("checkpoint header truncated");
    Checkpoint ckpt;
    try {
        const auto header = nlohmann::json::parse(text);
        ckpt.kind = header.at("kind").get<std::string>();
        ckpt.meta = header.at("meta");
        for (const auto& p : header.at("params")) {
            Checkpoint::Blob b;
            b.name = p.at("name").get<std::string>();
            b.values.resize(p.at("size").get<std::size_t>());
            ckpt.params.push_back(std::move(b));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    for (auto& b : ckpt.params)
        for (auto& v : b.values) v = std::bit_cast<float>(get_u32(in));
    return ckpt;
}

}  // namespace bikt
