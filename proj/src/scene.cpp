#include "bikt/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace bikt {

using nlohmann::json;

void PointSet::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!std::isfinite(points[i].x) || !std::isfinite(points[i].y))
            throw std::invalid_argument("point " + std::to_string(i) + " has a non-finite coordinate");
    }
    if (!scales.empty()) {
        if (scales.size() != points.size()) throw std::invalid_argument("scales length differs from points length");
        for (double s : scales)
            if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("scales must be positive and finite");
    }
    if (!scores.empty()) {
        if (scores.size() != points.size()) throw std::invalid_argument("scores length differs from points length");
        for (double s : scores)
            if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("scores must lie in [0,1]");
    }
}

bool PointSet::inside(int height, int width) const {
    return std::all_of(points.begin(), points.end(), [&](const Point& p) {
        return p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height;
    });
}

ImageGrid::ImageGrid(int h, int w, int c, double fill) : height(h), width(w), channels(c) {
    if (h <= 0 || w <= 0) throw std::invalid_argument("image dimensions must be positive");
    if (c != 1 && c != 3) throw std::invalid_argument("image channels must be 1 or 3");
    values.assign(static_cast<std::size_t>(h) * w * c, fill);
}

void ImageGrid::validate() const {
    if (height <= 0 || width <= 0) throw std::invalid_argument("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw std::invalid_argument("image channels must be 1 or 3");
    if (values.size() != static_cast<std::size_t>(height) * width * channels)
        throw std::invalid_argument("image value count does not match height*width*channels");
    for (double v : values)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("image values must be finite and in [0,1]");
}

ImageGrid ImageGrid::crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > width || y0 + h > height)
        throw std::out_of_range("image crop window outside image");
    ImageGrid out(h, w, channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) out.at(y, x, c) = at(y0 + y, x0 + x, c);
    return out;
}

std::string to_string(PointProcess p) {
    return p == PointProcess::UniformPoisson ? "uniform-poisson" : "thomas-cluster";
}

PointProcess point_process_from_string(const std::string& s) {
    if (s == "uniform-poisson") return PointProcess::UniformPoisson;
    if (s == "thomas-cluster") return PointProcess::ThomasCluster;
    throw std::invalid_argument("unknown point process: " + s);
}

void SceneGenSpec::validate() const {
    if (height <= 0 || width <= 0) throw std::invalid_argument("scene size must be positive");
    if (!(intensity >= 0.0)) throw std::invalid_argument("intensity must be >= 0");
    if (!(blob_sigma_range.first > 0.0) || blob_sigma_range.first > blob_sigma_range.second)
        throw std::invalid_argument("blob_sigma_range must satisfy 0 < lo <= hi");
    if (amplitude_range.first < 0.0 || amplitude_range.first > amplitude_range.second)
        throw std::invalid_argument("amplitude_range must satisfy 0 <= lo <= hi");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be >= 0");
    if (process == PointProcess::ThomasCluster && (!(cluster_count > 0.0) || !(cluster_std > 0.0)))
        throw std::invalid_argument("thomas-cluster needs cluster_count > 0 and cluster_std > 0");
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace {

double draw_uniform(std::mt19937_64& rng, double lo, double hi) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::vector<Point> draw_points(const SceneGenSpec& spec, std::mt19937_64& rng) {
    std::vector<Point> pts;
    if (spec.intensity <= 0.0) return pts;
    const int n = std::poisson_distribution<int>(spec.intensity)(rng);
    std::uniform_real_distribution<double> ux(0.0, spec.width);
    std::uniform_real_distribution<double> uy(0.0, spec.height);
    auto clamp_inside = [&](Point p) {
        p.x = std::clamp(p.x, 0.0, std::nextafter(static_cast<double>(spec.width), 0.0));
        p.y = std::clamp(p.y, 0.0, std::nextafter(static_cast<double>(spec.height), 0.0));
        return p;
    };
    if (spec.process == PointProcess::UniformPoisson) {
        for (int i = 0; i < n; ++i) {
            const double x = ux(rng);
            const double y = uy(rng);
            pts.push_back({x, y});
        }
        return pts;
    }
    const int parents = std::max(1, std::poisson_distribution<int>(spec.cluster_count)(rng));
    std::vector<Point> centers(parents);
    for (auto& c : centers) {
        c.x = ux(rng);
        c.y = uy(rng);
    }
    std::uniform_int_distribution<int> pick(0, parents - 1);
    std::normal_distribution<double> offset(0.0, spec.cluster_std);
    for (int i = 0; i < n; ++i) {
        const Point& c = centers[pick(rng)];
        Point p{c.x + offset(rng), c.y + offset(rng)};
        for (int attempt = 0; attempt < 64 && !(p.x >= 0 && p.x < spec.width && p.y >= 0 && p.y < spec.height);
             ++attempt)
            p = {c.x + offset(rng), c.y + offset(rng)};
        pts.push_back(clamp_inside(p));
    }
    return pts;
}

}  // namespace

ImageGrid render_scene_image(const PointSet& truth, const SceneGenSpec& spec) {
    spec.validate();
    ImageGrid img(spec.height, spec.width, 1, 0.0);
    std::mt19937_64 rng(mix_seed(spec.seed, 1));
    for (std::size_t i = 0; i < truth.points.size(); ++i) {
        const double sigma = truth.has_scales() ? truth.scales[i] / 2.0
                                                : draw_uniform(rng, spec.blob_sigma_range.first,
                                                               spec.blob_sigma_range.second);
        const double amp = draw_uniform(rng, spec.amplitude_range.first, spec.amplitude_range.second);
        const Point p = truth.points[i];
        const int r = static_cast<int>(std::ceil(4.0 * sigma));
        const int cx = static_cast<int>(std::lround(p.x));
        const int cy = static_cast<int>(std::lround(p.y));
        const double inv = 1.0 / (2.0 * sigma * sigma);
        for (int y = std::max(0, cy - r); y <= std::min(spec.height - 1, cy + r); ++y)
            for (int x = std::max(0, cx - r); x <= std::min(spec.width - 1, cx + r); ++x) {
                const double dx = x - p.x;
                const double dy = y - p.y;
                img.at(y, x) += amp * std::exp(-(dx * dx + dy * dy) * inv);
            }
    }
    if (spec.noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise_std);
        for (auto& v : img.values) v += noise(rng);
    }
    for (auto& v : img.values) v = std::clamp(v, 0.0, 1.0);
    return img;
}

AnnotatedScene generate_synthetic_scene(const SceneGenSpec& spec) {
    spec.validate();
    std::mt19937_64 point_rng(mix_seed(spec.seed, 0));
    AnnotatedScene scene;
    scene.truth.points = draw_points(spec, point_rng);
    std::mt19937_64 scale_rng(mix_seed(spec.seed, 2));
    for (std::size_t i = 0; i < scene.truth.points.size(); ++i)
        scene.truth.scales.push_back(
            2.0 * draw_uniform(scale_rng, spec.blob_sigma_range.first, spec.blob_sigma_range.second));
    scene.image = render_scene_image(scene.truth, spec);
    scene.domain_tag = to_string(spec.process);
    return scene;
}

AnnotatedScene make_domain_scene(SyntheticDomain domain, const DomainSpec& d, std::uint64_t seed,
                                 std::size_t index) {
    SceneGenSpec spec;
    spec.height = d.height;
    spec.width = d.width;
    spec.blob_sigma_range = d.blob_sigma_range;
    spec.seed = mix_seed(seed, index);
    const bool dense = domain == SyntheticDomain::Target && index % 2 == 1;
    if (domain == SyntheticDomain::Source) {
        spec.amplitude_range = d.source_amplitude;
        spec.noise_std = d.source_noise;
    } else {
        spec.amplitude_range = d.target_amplitude;
        spec.noise_std = d.target_noise;
    }
    spec.process = PointProcess::UniformPoisson;
    spec.intensity = d.sparse_intensity;
    AnnotatedScene scene = generate_synthetic_scene(spec);
    const double cluster_intensity =
        domain == SyntheticDomain::Source ? d.source_cluster_intensity : dense ? d.dense_intensity : 0.0;
    if (cluster_intensity > 0.0) {
        SceneGenSpec cluster = spec;
        cluster.process = PointProcess::ThomasCluster;
        cluster.intensity = cluster_intensity;
        cluster.cluster_count = d.dense_cluster_count;
        cluster.cluster_std = domain == SyntheticDomain::Source ? d.source_cluster_std : d.dense_cluster_std;
        cluster.seed = mix_seed(spec.seed, 77);
        AnnotatedScene extra = generate_synthetic_scene(cluster);
        if (dense)
            for (auto& s : extra.truth.scales) s *= d.dense_head_scale;
        scene.truth.points.insert(scene.truth.points.end(), extra.truth.points.begin(), extra.truth.points.end());
        scene.truth.scales.insert(scene.truth.scales.end(), extra.truth.scales.begin(), extra.truth.scales.end());
        scene.image = render_scene_image(scene.truth, spec);
    }
    scene.domain_tag = domain == SyntheticDomain::Source ? "source" : dense ? "dense" : "sparse";
    return scene;
}

std::vector<AnnotatedScene> make_domain(SyntheticDomain domain, const DomainSpec& spec, std::uint64_t seed,
                                        std::size_t count) {
    std::vector<AnnotatedScene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_domain_scene(domain, spec, seed, i));
    return out;
}

// ---------------------------------------------------------------------------

std::vector<AnnotatedScene> load_annotations(const std::filesystem::path& path, const LoadOptions& options,
                                             std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("annotation file not found: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("malformed annotation JSON in " + path.string() + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("scenes") || !doc["scenes"].is_array())
        throw std::runtime_error("annotation JSON must be an object with a \"scenes\" array");
    if (doc.contains("version") && doc["version"] != 1)
        throw std::runtime_error("unsupported annotation version");

    std::vector<AnnotatedScene> scenes;
    const auto base = path.parent_path();
    const auto& records = doc["scenes"];
    for (std::size_t i = 0; i < records.size(); ++i) {
        try {
            const auto& rec = records[i];
            AnnotatedScene scene;
            const int width = rec.at("width").get<int>();
            const int height = rec.at("height").get<int>();
            if (width <= 0 || height <= 0) throw std::invalid_argument("non-positive image size");
            for (const auto& p : rec.at("points")) {
                if (!p.is_array() || p.size() != 2) throw std::invalid_argument("point must be [x, y]");
                scene.truth.points.push_back({p[0].get<double>(), p[1].get<double>()});
            }
            if (rec.contains("scales")) scene.truth.scales = rec["scales"].get<std::vector<double>>();
            scene.truth.validate();
            for (std::size_t j = 0; j < scene.truth.points.size(); ++j) {
                const auto& p = scene.truth.points[j];
                if (!(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height)) {
                    std::ostringstream msg;
                    msg << "point " << j << " (" << p.x << ", " << p.y << ") outside " << width << "x" << height
                        << " image";
                    throw std::invalid_argument(msg.str());
                }
            }
            scene.image_path = rec.value("image", std::string{});
            scene.domain_tag = rec.value("domain", std::string{});
            if (options.load_images && !scene.image_path.empty()) {
                scene.image = read_image(base / scene.image_path);
                if (scene.image.width != width || scene.image.height != height)
                    throw std::invalid_argument("image size differs from declared width/height");
            } else {
                scene.image = ImageGrid(height, width, 1, 0.0);
            }
            scenes.push_back(std::move(scene));
        } catch (const std::exception& e) {
            const std::string msg = "record " + std::to_string(i) + ": " + e.what();
            if (options.strict) throw std::runtime_error(msg);
            if (warnings) warnings->push_back(msg);
        }
    }
    return scenes;
}

void save_annotations(const std::vector<AnnotatedScene>& scenes, const std::filesystem::path& path,
                      bool write_images) {
    json doc;
    doc["version"] = 1;
    doc["scenes"] = json::array();
    const auto base = path.parent_path();
    for (const auto& s : scenes) {
        json rec;
        rec["image"] = s.image_path;
        rec["width"] = s.image.width;
        rec["height"] = s.image.height;
        json pts = json::array();
        for (const auto& p : s.truth.points) pts.push_back({p.x, p.y});
        rec["points"] = std::move(pts);
        if (s.truth.has_scales()) rec["scales"] = s.truth.scales;
        if (!s.domain_tag.empty()) rec["domain"] = s.domain_tag;
        doc["scenes"].push_back(std::move(rec));
        if (write_images && !s.image_path.empty() && !s.image.values.empty()) {
            const auto img_path = base / s.image_path;
            std::filesystem::create_directories(img_path.parent_path());
            write_png(s.image, img_path);
        }
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write annotation file: " + path.string());
    out << doc.dump(1) << '\n';
    if (!out) throw std::runtime_error("failed writing annotation file: " + path.string());
}

ImageGrid to_grayscale(const ImageGrid& image) {
    if (image.channels == 1) return image;
    ImageGrid out(image.height, image.width, 1);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            out.at(y, x) = std::clamp(
                0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2), 0.0, 1.0);
    return out;
}

}  // namespace bikt
