#include "bikt/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace bikt {

PointSet to_point_set(const std::vector<Detection>& detections) {
    PointSet out;
    for (const auto& d : detections) {
        out.points.push_back(d.center);
        out.scores.push_back(d.score);
        out.scales.push_back(d.scale);
    }
    if (std::any_of(out.scales.begin(), out.scales.end(), [](double s) { return !(s > 0.0); })) out.scales.clear();
    return out;
}

namespace {

void build_trunk(nn::Sequential<float>& trunk, const std::string& prefix, int width, std::mt19937_64& rng) {
    trunk.add<nn::Conv2d<float>>(prefix + "1", 1, 8, 3).initialize(rng);
    trunk.add<nn::ReLU<float>>();
    trunk.add<nn::Conv2d<float>>(prefix + "2", 8, width, 3).initialize(rng);
    trunk.add<nn::ReLU<float>>();
    trunk.add<nn::Conv2d<float>>(prefix + "3", width, width, 3, 2).initialize(rng);
    trunk.add<nn::ReLU<float>>();
    trunk.add<nn::Conv2d<float>>(prefix + "4", width, width, 3, 2).initialize(rng);
    trunk.add<nn::ReLU<float>>();
}

void copy_values(const std::vector<Param*>& from, const std::vector<Param*>& to) {
    for (std::size_t i = 0; i < from.size(); ++i) {
        to[i]->value = from[i]->value;
        to[i]->frozen = from[i]->frozen;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// RegressionModel

struct RegressionModel::Net {
    nn::Sequential<float> trunk;
    nn::Sequential<float> tail;
    nn::ReLU<float> out;

    Net(int width, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        build_trunk(trunk, "reg", width, rng);
        tail.add<nn::Conv2d<float>>("tail1", width, 8, 1).initialize(rng, 0.0);
        tail.add<nn::ReLU<float>>();
        tail.add<nn::Conv2d<float>>("tail2", 8, 1, 1).initialize(rng, 0.1, 0.5);
    }

    std::vector<Param*> parameters() {
        auto p = trunk.parameters();
        for (auto* q : tail.parameters()) p.push_back(q);
        return p;
    }
};

RegressionModel::RegressionModel(Architecture arch, std::uint64_t seed)
    : arch_(arch), seed_(seed), net_(std::make_unique<Net>(arch.width, seed)) {}

RegressionModel::RegressionModel(const RegressionModel& other)
    : kernel_fingerprint(other.kernel_fingerprint), arch_(other.arch_), seed_(other.seed_),
      net_(std::make_unique<Net>(other.arch_.width, other.seed_)) {
    copy_values(const_cast<RegressionModel&>(other).parameters(), parameters());
}

RegressionModel& RegressionModel::operator=(const RegressionModel& other) {
    if (this != &other) *this = RegressionModel(other);
    return *this;
}

RegressionModel::RegressionModel(RegressionModel&&) noexcept = default;
RegressionModel& RegressionModel::operator=(RegressionModel&&) noexcept = default;
RegressionModel::~RegressionModel() = default;

DensityMap RegressionModel::infer(const ImageGrid& image) const {
    const Tensor x = to_tensor(image);
    const Tensor y = net_->out.infer(net_->tail.infer(net_->trunk.infer(x)));
    return to_grid(y, 0, 1.0 / arch_.output_gain);
}

Grid RegressionModel::forward(const ImageGrid& image) {
    return to_grid(net_->out.forward(net_->tail.forward(net_->trunk.forward(to_tensor(image)))));
}

void RegressionModel::backward(const Grid& grad_scaled) {
    net_->trunk.backward(net_->tail.backward(net_->out.backward(to_tensor(grad_scaled))));
}

std::vector<Param*> RegressionModel::parameters() {
    return net_->parameters();
}

std::vector<std::string> RegressionModel::tail_layers() {
    return {"tail1", "tail2"};
}

void RegressionModel::set_freeze_all_but_tail(bool freeze) {
    apply_freeze_mask(parameters(), tail_layers(), freeze);
}

Checkpoint RegressionModel::to_checkpoint() {
    Checkpoint ckpt;
    ckpt.kind = "regressor";
    ckpt.meta["width"] = arch_.width;
    ckpt.meta["output_gain"] = arch_.output_gain;
    ckpt.meta["kernel_fingerprint"] = kernel_fingerprint;
    ckpt.meta["tail"] = tail_layers();
    store_parameters(parameters(), ckpt);
    return ckpt;
}

RegressionModel RegressionModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "regressor") throw CheckpointError("expected a regressor checkpoint, got " + ckpt.kind);
    Architecture arch;
    arch.width = ckpt.meta.at("width").get<int>();
    arch.output_gain = ckpt.meta.at("output_gain").get<double>();
    RegressionModel model(arch, 0);
    model.kernel_fingerprint = ckpt.meta.value("kernel_fingerprint", std::string{});
    load_parameters(model.parameters(), ckpt);
    return model;
}

// ---------------------------------------------------------------------------
// DetectionModel

struct DetectionModel::Net {
    nn::Sequential<float> trunk;
    nn::Sequential<float> center;
    nn::Sequential<float> scale;

    Net(int width, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        build_trunk(trunk, "det", width, rng);
        center.add<nn::Conv2d<float>>("center1", width, 8, 1).initialize(rng);
        center.add<nn::ReLU<float>>();
        center.add<nn::Conv2d<float>>("center2", 8, 1, 1).initialize(rng, 0.0, 0.5);
        scale.add<nn::Conv2d<float>>("scale", width, 1, 1).initialize(rng, std::log(4.0), 0.1);
    }

    std::vector<Param*> parameters() {
        auto p = trunk.parameters();
        for (auto* q : scale.parameters()) p.push_back(q);
        for (auto* q : center.parameters()) p.push_back(q);
        return p;
    }
};

DetectionModel::DetectionModel(Architecture arch, std::uint64_t seed)
    : arch_(arch), seed_(seed), net_(std::make_unique<Net>(arch.width, seed)) {}

DetectionModel::DetectionModel(const DetectionModel& other)
    : focal(other.focal), arch_(other.arch_), seed_(other.seed_),
      net_(std::make_unique<Net>(other.arch_.width, other.seed_)) {
    copy_values(const_cast<DetectionModel&>(other).parameters(), parameters());
}

DetectionModel& DetectionModel::operator=(const DetectionModel& other) {
    if (this != &other) *this = DetectionModel(other);
    return *this;
}

DetectionModel::DetectionModel(DetectionModel&&) noexcept = default;
DetectionModel& DetectionModel::operator=(DetectionModel&&) noexcept = default;
DetectionModel::~DetectionModel() = default;

DetectionModel::Output DetectionModel::infer(const ImageGrid& image) const {
    const Tensor f = net_->trunk.infer(to_tensor(image));
    Output out;
    out.response = to_grid(net_->center.infer(f));
    for (auto& v : out.response.values()) v = std::clamp(v, 0.0, 1.0);
    out.scale = to_grid(net_->scale.infer(f));
    for (auto& v : out.scale.values()) v = std::exp(std::clamp(v, -10.0, 10.0));
    return out;
}

Tensor DetectionModel::forward(const ImageGrid& image) {
    const Tensor f = net_->trunk.forward(to_tensor(image));
    return nn::concat_channels(net_->center.forward(f), net_->scale.forward(f));
}

void DetectionModel::backward(const Tensor& grad) {
    Tensor g_center, g_scale;
    nn::split_channels(grad, 1, g_center, g_scale);
    Tensor g_f = net_->center.backward(g_center);
    nn::add_into(g_f, net_->scale.backward(g_scale));
    net_->trunk.backward(g_f);
}

std::vector<Param*> DetectionModel::parameters() {
    return net_->parameters();
}

std::vector<std::string> DetectionModel::tail_layers() {
    return {"center1", "center2"};
}

void DetectionModel::set_freeze_all_but_tail(bool freeze) {
    apply_freeze_mask(parameters(), tail_layers(), freeze);
}

Checkpoint DetectionModel::to_checkpoint() {
    Checkpoint ckpt;
    ckpt.kind = "detector";
    ckpt.meta["width"] = arch_.width;
    ckpt.meta["heatmap_sigma"] = arch_.heatmap_sigma;
    ckpt.meta["focal"] = {{"gamma", focal.gamma}, {"alpha_pos", focal.alpha_pos}, {"alpha_neg", focal.alpha_neg}};
    ckpt.meta["tail"] = tail_layers();
    store_parameters(parameters(), ckpt);
    return ckpt;
}

DetectionModel DetectionModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "detector") throw CheckpointError("expected a detector checkpoint, got " + ckpt.kind);
    Architecture arch;
    arch.width = ckpt.meta.at("width").get<int>();
    arch.heatmap_sigma = ckpt.meta.at("heatmap_sigma").get<double>();
    DetectionModel model(arch, 0);
    const auto& f = ckpt.meta.at("focal");
    model.focal = {f.at("gamma").get<double>(), f.at("alpha_pos").get<double>(), f.at("alpha_neg").get<double>()};
    load_parameters(model.parameters(), ckpt);
    return model;
}

// ---------------------------------------------------------------------------

DensityMap regress_density(const RegressionModel& model, const ImageGrid& image) {
    return model.infer(image);
}

std::vector<Detection> decode_detections(const DetectionModel::Output& output, double decode_threshold,
                                         int decode_window) {
    const PointSet kept = binarize_and_merge(output.response, decode_threshold, decode_window);
    std::vector<double> positive;
    for (double s : output.scale.values())
        if (std::isfinite(s) && s > 0.0) positive.push_back(s);
    double median = 1.0;
    if (!positive.empty()) {
        std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(positive.size() / 2),
                         positive.end());
        median = positive[positive.size() / 2];
    }
    std::vector<Detection> out;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const auto& p = kept.points[i];
        double s = output.scale.at(static_cast<int>(p.y), static_cast<int>(p.x));
        if (!(std::isfinite(s) && s > 0.0)) s = median;
        out.push_back({p, s, kept.scores[i]});
    }
    return out;
}

std::vector<Detection> detect(const DetectionModel& model, const ImageGrid& image, double decode_threshold,
                              int decode_window) {
    return decode_detections(model.infer(image), decode_threshold, decode_window);
}

Grid center_heatmap(const PointSet& points, int height, int width, double sigma) {
    Grid heat(height, width, 0.0);
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    for (const auto& p : points.points) {
        const int cx = std::clamp(static_cast<int>(std::lround(p.x)), 0, width - 1);
        const int cy = std::clamp(static_cast<int>(std::lround(p.y)), 0, height - 1);
        for (int y = std::max(0, cy - r); y <= std::min(height - 1, cy + r); ++y)
            for (int x = std::max(0, cx - r); x <= std::min(width - 1, cx + r); ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                heat.at(y, x) = std::max(heat.at(y, x), std::exp(-d2 / (2.0 * sigma * sigma)));
            }
    }
    return heat;
}

double regressor_loss(const Grid& scaled_pred, const Grid& scaled_target, double ssim_weight, Grid* grad) {
    double loss = mse_loss(scaled_pred, scaled_target, grad);
    if (ssim_weight > 0.0) {
        Grid g_ssim;
        loss += ssim_weight * dms_ssim_loss(scaled_pred, scaled_target, grad ? &g_ssim : nullptr);
        if (grad)
            for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += ssim_weight * g_ssim[i];
    }
    return loss;
}

namespace {

struct CropWindow {
    int x0, y0, w, h;
};

CropWindow random_crop(int height, int width, int crop, std::mt19937_64& rng) {
    const int w = std::min(crop, width), h = std::min(crop, height);
    return {std::uniform_int_distribution<int>(0, width - w)(rng), std::uniform_int_distribution<int>(0, height - h)(rng),
            w, h};
}

/// Shared epoch/minibatch loop. `step(sample_index, rng)` runs forward and
/// backward for one sample and returns its loss.
template <typename Step>
void run_epochs(std::size_t n, const TrainSettings& settings, const std::vector<Param*>& params, const char* what,
                TrainLog* log, Step&& step) {
    nn::Adam<float> adam(params, {.learning_rate = settings.learning_rate});
    std::mt19937_64 rng(mix_seed(settings.seed, 21));
    std::vector<std::size_t> order(n);
    const int batch = std::max(1, settings.batch_size);
    for (int epoch = 0; epoch < settings.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        int in_batch = 0;
        adam.zero_grad();
        for (std::size_t k = 0; k < n; ++k) {
            const double loss = step(order[k], rng);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << what << ": non-finite loss at epoch " << epoch << ", sample " << order[k];
                throw TrainingError(msg.str());
            }
            total += loss;
            if (++in_batch == batch || k + 1 == n) {
                adam.step(1.0 / in_batch);
                adam.zero_grad();
                in_batch = 0;
            }
        }
        if (log) log->epoch_loss.push_back(total / static_cast<double>(n));
    }
}

}  // namespace

void fit_regressor(RegressionModel& model, const std::vector<RegressionSample>& samples,
                   const RegressorTrainConfig& config, TrainLog* log) {
    if (samples.empty()) throw std::invalid_argument("train_regressor: empty training set");
    for (const auto& s : samples)
        if (s.image.height != s.target.height() || s.image.width != s.target.width())
            throw std::invalid_argument("train_regressor: image and target sizes differ");
    model.set_freeze_all_but_tail(config.freeze_all_but_tail);
    const double gain = model.architecture().output_gain;
    run_epochs(samples.size(), config.train, model.parameters(), "train_regressor", log,
               [&](std::size_t i, std::mt19937_64& rng) {
                   const auto& s = samples[i];
                   const auto c = random_crop(s.image.height, s.image.width, config.train.crop_size, rng);
                   const ImageGrid img = s.image.crop(c.x0, c.y0, c.w, c.h);
                   Grid target = s.target.crop(c.x0, c.y0, c.w, c.h);
                   for (auto& v : target.values()) v *= gain;
                   const Grid pred = model.forward(img);
                   Grid grad;
                   const double loss = regressor_loss(pred, target, config.ssim_weight, &grad);
                   model.backward(grad);
                   return loss;
               });
}

RegressionModel train_regressor(const std::vector<RegressionSample>& samples, const RegressorTrainConfig& config,
                                const std::string& kernel_fingerprint, TrainLog* log) {
    RegressionModel model(config.arch, mix_seed(config.train.seed, 31));
    model.kernel_fingerprint = kernel_fingerprint;
    fit_regressor(model, samples, config, log);
    return model;
}

void fit_detector(DetectionModel& model, const std::vector<DetectionSample>& samples,
                  const DetectorTrainConfig& config, TrainLog* log) {
    if (samples.empty()) throw std::invalid_argument("train_detector: empty training set");
    config.focal.validate();
    const double sigma = model.architecture().heatmap_sigma;
    run_epochs(samples.size(), config.train, model.parameters(), "train_detector", log,
               [&](std::size_t i, std::mt19937_64& rng) {
                   const auto& s = samples[i];
                   const auto c = random_crop(s.image.height, s.image.width, config.train.crop_size, rng);
                   const ImageGrid img = s.image.crop(c.x0, c.y0, c.w, c.h);
                   PointSet pts;
                   std::vector<double> scales;
                   for (std::size_t j = 0; j < s.truth.size(); ++j) {
                       const Point p{s.truth.points[j].x - c.x0, s.truth.points[j].y - c.y0};
                       if (p.x < -0.5 || p.y < -0.5 || p.x >= c.w - 0.5 || p.y >= c.h - 0.5) continue;
                       pts.points.push_back(p);
                       if (s.truth.has_scales() && s.truth.scales[j] > 0.0) scales.push_back(s.truth.scales[j]);
                   }
                   const bool use_scales = scales.size() == pts.size() && !pts.empty();
                   const Grid heat = center_heatmap(pts, c.h, c.w, sigma);
                   const Tensor out = model.forward(img);
                   const Grid raw = to_grid(out, 0);
                   Grid g_center;
                   double loss = focal_mse_loss(raw, heat, config.focal, &g_center);
                   Grid g_scale(c.h, c.w, 0.0);
                   if (use_scales && config.scale_weight > 0.0) {
                       const Grid log_scale = to_grid(out, 1);
                       int count = 0;
                       double acc = 0.0;
                       for (std::size_t j = 0; j < pts.size(); ++j) {
                           const int px = std::clamp(static_cast<int>(std::lround(pts.points[j].x)), 0, c.w - 1);
                           const int py = std::clamp(static_cast<int>(std::lround(pts.points[j].y)), 0, c.h - 1);
                           const double r = log_scale.at(py, px) - std::log(scales[j]);
                           acc += r * r;
                           g_scale.at(py, px) += 2.0 * r;
                           ++count;
                       }
                       loss += config.scale_weight * acc / count;
                       for (auto& v : g_scale.values()) v *= config.scale_weight / count;
                   }
                   Tensor grad(2, c.h, c.w);
                   for (std::size_t k = 0; k < g_center.size(); ++k) {
                       grad.data[k] = static_cast<float>(g_center[k]);
                       grad.data[g_center.size() + k] = static_cast<float>(g_scale[k]);
                   }
                   model.backward(grad);
                   return loss;
               });
}

DetectionModel train_detector(const std::vector<DetectionSample>& samples, const DetectorTrainConfig& config,
                              TrainLog* log) {
    DetectionModel model(config.arch, mix_seed(config.train.seed, 41));
    model.focal = config.focal;
    fit_detector(model, samples, config, log);
    return model;
}

}  // namespace bikt
