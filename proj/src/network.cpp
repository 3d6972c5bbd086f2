#include "bikt/network.hpp"

#include <algorithm>
#include <cstring>

namespace bikt {

Tensor to_tensor(const Grid& grid, double gain) {
    Tensor t(1, grid.height(), grid.width());
    for (std::size_t i = 0; i < grid.size(); ++i) t.data[i] = static_cast<float>(grid[i] * gain);
    return t;
}

Tensor to_tensor(const ImageGrid& image) {
    if (image.channels != 1) throw std::invalid_argument("model expects a 1-channel image");
    Tensor t(1, image.height, image.width);
    for (std::size_t i = 0; i < image.values.size(); ++i) t.data[i] = static_cast<float>(image.values[i]);
    return t;
}

Grid to_grid(const Tensor& t, int channel, double gain) {
    Grid g(t.h, t.w);
    const float* src = t.channel(channel);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(src[i]) * gain;
    return g;
}

bool smoothed_non_increasing(const std::vector<double>& losses, int window, double rel_tolerance) {
    if (losses.size() < 2) return true;
    std::vector<double> smooth;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - window : 0;
        double acc = 0.0;
        for (std::size_t j = lo; j <= i; ++j) acc += losses[j];
        smooth.push_back(acc / static_cast<double>(i - lo + 1));
    }
    for (std::size_t i = 1; i < smooth.size(); ++i)
        if (smooth[i] > smooth[i - 1] * (1.0 + rel_tolerance)) return false;
    return true;
}

std::uint64_t parameter_fingerprint(const std::vector<Param*>& params) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto* p : params)
        for (float v : p->value) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            for (int b = 0; b < 4; ++b) {
                h ^= (bits >> (8 * b)) & 0xFF;
                h *= 1099511628211ull;
            }
        }
    return h;
}

void store_parameters(const std::vector<Param*>& params, Checkpoint& ckpt) {
    ckpt.params.clear();
    nlohmann::json frozen = nlohmann::json::array();
    for (const auto* p : params) {
        ckpt.params.push_back({p->name, p->value});
        if (p->frozen) frozen.push_back(p->name);
    }
    ckpt.meta["frozen"] = frozen;
}

void load_parameters(const std::vector<Param*>& params, const Checkpoint& ckpt) {
    for (auto* p : params) {
        const auto it = std::find_if(ckpt.params.begin(), ckpt.params.end(),
                                     [&](const Checkpoint::Blob& b) { return b.name == p->name; });
        if (it == ckpt.params.end()) throw CheckpointError("checkpoint lacks parameter " + p->name);
        if (it->values.size() != p->value.size())
            throw CheckpointError("checkpoint parameter " + p->name + " has the wrong size");
        p->value = it->values;
        p->zero_grad();
    }
    if (ckpt.meta.contains("frozen")) {
        const auto names = ckpt.meta["frozen"].get<std::vector<std::string>>();
        for (auto* p : params) p->frozen = std::find(names.begin(), names.end(), p->name) != names.end();
    }
}

void apply_freeze_mask(const std::vector<Param*>& params, const std::vector<std::string>& trainable_tail,
                       bool freeze_all_but_tail) {
    for (auto* p : params) {
        const bool in_tail = std::any_of(trainable_tail.begin(), trainable_tail.end(), [&](const std::string& prefix) {
            return p->name.rfind(prefix + ".", 0) == 0;
        });
        p->frozen = freeze_all_but_tail && !in_tail;
    }
}

}  // namespace bikt
