#include "bikt/reg2det.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace bikt {

LocalizationMap points_to_localization(const PointSet& points, int height, int width) {
    LocalizationMap map(height, width, 0.0);
    for (const auto& p : points.points) {
        const int x = std::clamp(static_cast<int>(std::lround(p.x)), 0, width - 1);
        const int y = std::clamp(static_cast<int>(std::lround(p.y)), 0, height - 1);
        map.at(y, x) = 1.0;
    }
    return map;
}

PointSet binarize_and_merge(const Grid& response, double threshold, int window) {
    if (window < 1) throw std::invalid_argument("merge window must be >= 1");
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < response.size(); ++i)
        if (response[i] > threshold) candidates.push_back(i);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return response[a] > response[b]; });

    // suppress offsets strictly below window/2 in both axes
    const int reach = (window - 1) / 2;
    const int h = response.height(), w = response.width();
    std::vector<std::uint8_t> suppressed(response.size(), 0);
    PointSet out;
    for (std::size_t idx : candidates) {
        if (suppressed[idx]) continue;
        const int y = static_cast<int>(idx / w), x = static_cast<int>(idx % w);
        out.points.push_back({static_cast<double>(x), static_cast<double>(y)});
        out.scores.push_back(std::clamp(response[idx], 0.0, 1.0));
        for (int yy = std::max(0, y - reach); yy <= std::min(h - 1, y + reach); ++yy)
            for (int xx = std::max(0, x - reach); xx <= std::min(w - 1, x + reach); ++xx)
                suppressed[static_cast<std::size_t>(yy) * w + xx] = 1;
    }
    return out;
}

// ---------------------------------------------------------------------------

struct Reg2DetModel::Net {
    nn::Sequential<float> enc0, enc1, enc2, bottleneck, dec2, dec1, dec0, head;
    nn::MaxPool2<float> pool0, pool1, pool2;
    nn::Upsample2<float> up2, up1, up0;
    int c0, c1, c2, c3;

    Net(int base, std::uint64_t seed) : c0(base), c1(2 * base), c2(2 * base), c3(4 * base) {
        std::mt19937_64 rng(seed);
        auto block = [&](nn::Sequential<float>& s, const std::string& name, int in, int out) {
            s.add<nn::Conv2d<float>>(name + "_a", in, out, 3).initialize(rng);
            s.add<nn::ReLU<float>>();
            s.add<nn::Conv2d<float>>(name + "_b", out, out, 3).initialize(rng);
            s.add<nn::ReLU<float>>();
        };
        block(enc0, "enc0", 1, c0);
        block(enc1, "enc1", c0, c1);
        block(enc2, "enc2", c1, c2);
        block(bottleneck, "bottleneck", c2, c3);
        dec2.add<nn::Conv2d<float>>("dec2", c3 + c2, c2, 3).initialize(rng);
        dec2.add<nn::ReLU<float>>();
        dec1.add<nn::Conv2d<float>>("dec1", c2 + c1, c1, 3).initialize(rng);
        dec1.add<nn::ReLU<float>>();
        dec0.add<nn::Conv2d<float>>("dec0", c1 + c0, c0, 3).initialize(rng);
        dec0.add<nn::ReLU<float>>();
        head.add<nn::Conv2d<float>>("head", c0, 1, 1).initialize(rng, -2.0, 0.5);
    }

    template <bool Train>
    Tensor run(const Tensor& x) {
        auto step = [](auto& layer, const Tensor& in) {
            if constexpr (Train)
                return layer.forward(in);
            else
                return layer.infer(in);
        };
        const Tensor e0 = step(enc0, x);
        const Tensor e1 = step(enc1, step(pool0, e0));
        const Tensor e2 = step(enc2, step(pool1, e1));
        const Tensor b = step(bottleneck, step(pool2, e2));
        const Tensor d2 = step(dec2, nn::concat_channels(step(up2, b), e2));
        const Tensor d1 = step(dec1, nn::concat_channels(step(up1, d2), e1));
        const Tensor d0 = step(dec0, nn::concat_channels(step(up0, d1), e0));
        return step(head, d0);
    }

    // run<false> only reaches the const infer() of each layer
    Tensor infer(const Tensor& x) const { return const_cast<Net*>(this)->run<false>(x); }

    void backward(const Tensor& g) {
        Tensor g_up, g_skip0, g_skip1, g_skip2;
        const Tensor g_d0 = head.backward(g);
        nn::split_channels(dec0.backward(g_d0), c1, g_up, g_skip0);
        const Tensor g_d1 = up0.backward(g_up);
        nn::split_channels(dec1.backward(g_d1), c2, g_up, g_skip1);
        const Tensor g_d2 = up1.backward(g_up);
        nn::split_channels(dec2.backward(g_d2), c3, g_up, g_skip2);
        const Tensor g_b = up2.backward(g_up);
        Tensor g_e2 = pool2.backward(bottleneck.backward(g_b));
        nn::add_into(g_e2, g_skip2);
        Tensor g_e1 = pool1.backward(enc2.backward(g_e2));
        nn::add_into(g_e1, g_skip1);
        Tensor g_e0 = pool0.backward(enc1.backward(g_e1));
        nn::add_into(g_e0, g_skip0);
        enc0.backward(g_e0);
    }

    std::vector<Param*> parameters() {
        std::vector<Param*> out;
        for (auto* s : {&enc0, &enc1, &enc2, &bottleneck, &dec2, &dec1, &dec0, &head})
            for (auto* p : s->parameters()) out.push_back(p);
        return out;
    }
};

Reg2DetModel::Reg2DetModel(Architecture arch, std::uint64_t seed)
    : arch_(arch), net_(std::make_unique<Net>(arch.base_channels, seed)) {
    if (arch.base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
}
Reg2DetModel::Reg2DetModel(Reg2DetModel&&) noexcept = default;
Reg2DetModel& Reg2DetModel::operator=(Reg2DetModel&&) noexcept = default;
Reg2DetModel::~Reg2DetModel() = default;

namespace {
int round_up8(int v) { return (v + 7) / 8 * 8; }
}  // namespace

Grid Reg2DetModel::logits(const DensityMap& density) const {
    for (double v : density.values())
        if (!std::isfinite(v)) throw std::invalid_argument("apply_phi: non-finite density");
    const int ph = round_up8(density.height()), pw = round_up8(density.width());
    const Grid padded = density.padded(ph, pw);
    const Tensor out = net_->infer(to_tensor(padded, arch_.input_gain));
    return to_grid(out).crop(0, 0, density.width(), density.height());
}

Grid Reg2DetModel::forward(const DensityMap& density) {
    if (density.height() % 8 || density.width() % 8)
        throw std::invalid_argument("Reg2DetModel::forward needs sides that are multiples of 8");
    return to_grid(net_->run<true>(to_tensor(density, arch_.input_gain)));
}

void Reg2DetModel::backward(const Grid& grad_logits) {
    net_->backward(to_tensor(grad_logits));
}

std::vector<Param*> Reg2DetModel::parameters() {
    return net_->parameters();
}

Checkpoint Reg2DetModel::to_checkpoint() {
    Checkpoint ckpt;
    ckpt.kind = "reg2det";
    ckpt.meta["base_channels"] = arch_.base_channels;
    ckpt.meta["input_gain"] = arch_.input_gain;
    ckpt.meta["focal"] = {{"gamma", focal.gamma}, {"alpha_pos", focal.alpha_pos}, {"alpha_neg", focal.alpha_neg}};
    ckpt.meta["loss"] = loss == PhiLoss::Total ? "total" : loss == PhiLoss::FocalMse ? "focal_mse" : "mse";
    ckpt.meta["kernel_fingerprint"] = kernel_fingerprint;
    store_parameters(parameters(), ckpt);
    return ckpt;
}

Reg2DetModel Reg2DetModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "reg2det") throw CheckpointError("expected a reg2det checkpoint, got " + ckpt.kind);
    Architecture arch;
    arch.base_channels = ckpt.meta.at("base_channels").get<int>();
    arch.input_gain = ckpt.meta.at("input_gain").get<double>();
    Reg2DetModel model(arch, 0);
    const auto& f = ckpt.meta.at("focal");
    model.focal = {f.at("gamma").get<double>(), f.at("alpha_pos").get<double>(), f.at("alpha_neg").get<double>()};
    const auto loss = ckpt.meta.value("loss", std::string("total"));
    model.loss = loss == "mse" ? PhiLoss::Mse : loss == "focal_mse" ? PhiLoss::FocalMse : PhiLoss::Total;
    model.kernel_fingerprint = ckpt.meta.value("kernel_fingerprint", std::string{});
    load_parameters(model.parameters(), ckpt);
    return model;
}

double phi_loss(PhiLoss kind, const Grid& logits, const LocalizationMap& target, const FocalSpec& focal, Grid* grad) {
    switch (kind) {
        case PhiLoss::Total:
            return phi_total_loss(logits, target, focal, grad);
        case PhiLoss::FocalMse:
            return focal_mse_loss(logits, target, focal, grad);
        case PhiLoss::Mse:
            return mse_loss(logits, target, grad);
    }
    throw std::logic_error("unknown PhiLoss");
}

Reg2DetModel train_phi(const std::vector<PhiTrainingPair>& pairs, const PhiTrainConfig& config,
                       const std::string& kernel_fingerprint, TrainLog* log) {
    if (pairs.empty()) throw std::invalid_argument("train_phi: empty training set");
    config.focal.validate();
    for (const auto& [density, target] : pairs) require_same_shape(density, target, "train_phi pair");

    Reg2DetModel model(config.arch, mix_seed(config.train.seed, 11));
    model.focal = config.focal;
    model.loss = config.loss;
    model.kernel_fingerprint = kernel_fingerprint;
    auto params = model.parameters();
    nn::Adam<float> adam(params, {.learning_rate = config.train.learning_rate});
    std::mt19937_64 rng(mix_seed(config.train.seed, 12));

    std::vector<std::size_t> order(pairs.size());
    const int batch = std::max(1, config.train.batch_size);
    for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        int in_batch = 0;
        adam.zero_grad();
        for (std::size_t k = 0; k < order.size(); ++k) {
            const auto& [density, target] = pairs[order[k]];
            const int cw = std::min(config.train.crop_size, density.width());
            const int ch = std::min(config.train.crop_size, density.height());
            const int x0 = std::uniform_int_distribution<int>(0, density.width() - cw)(rng);
            const int y0 = std::uniform_int_distribution<int>(0, density.height() - ch)(rng);
            const Grid d = density.crop(x0, y0, cw, ch);
            const Grid t = target.crop(x0, y0, cw, ch);
            const Grid raw = model.forward(d.padded(round_up8(ch), round_up8(cw))).crop(0, 0, cw, ch);
            Grid grad;
            const double loss = phi_loss(config.loss, raw, t, config.focal, &grad);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "train_phi: non-finite loss at epoch " << epoch << ", sample " << order[k];
                throw TrainingError(msg.str());
            }
            epoch_loss += loss;
            model.backward(grad.padded(round_up8(ch), round_up8(cw)));
            if (++in_batch == batch || k + 1 == order.size()) {
                adam.step(1.0 / in_batch);
                adam.zero_grad();
                in_batch = 0;
            }
        }
        if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(pairs.size()));
    }
    return model;
}

Grid apply_phi(const Reg2DetModel& model, const DensityMap& density) {
    return sigmoid(model.logits(density));
}

}  // namespace bikt
