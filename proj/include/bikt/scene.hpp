#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace bikt {

/// Image-plane position: x grows rightward, y downward, origin at the
/// center of the top-left pixel. Subpixel values are allowed.
struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Head-center annotations or detections. `scales` and `scores` are either
/// empty or exactly as long as `points`.
struct PointSet {
    std::vector<Point> points;
    std::vector<double> scales;
    std::vector<double> scores;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_scales() const { return !scales.empty(); }
    bool has_scores() const { return !scores.empty(); }

    /// Throws std::invalid_argument when an invariant is broken.
    void validate() const;
    bool inside(int height, int width) const;
};

/// Row-major, channel-interleaved image with values in [0, 1].
struct ImageGrid {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<double> values;

    ImageGrid() = default;
    ImageGrid(int h, int w, int c = 1, double fill = 0.0);

    double& at(int y, int x, int c = 0) { return values[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c = 0) const {
        return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    void validate() const;
    ImageGrid crop(int x0, int y0, int w, int h) const;
};

struct AnnotatedScene {
    ImageGrid image;
    PointSet truth;
    std::string domain_tag;
    std::string image_path;  // relative path used by the annotation file; may be empty
};

enum class PointProcess { UniformPoisson, ThomasCluster };

std::string to_string(PointProcess p);
PointProcess point_process_from_string(const std::string& s);

struct SceneGenSpec {
    int height = 96;
    int width = 96;
    PointProcess process = PointProcess::UniformPoisson;
    double intensity = 10.0;           // expected points per image
    double cluster_count = 3.0;        // expected parents (Thomas)
    double cluster_std = 4.0;          // child offset std in pixels (Thomas)
    std::pair<double, double> blob_sigma_range{1.5, 2.5};
    std::pair<double, double> amplitude_range{0.5, 0.7};
    double noise_std = 0.02;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Deterministic given `spec.seed`. Truth scales are the rendered blob
/// diameters (2 sigma).
AnnotatedScene generate_synthetic_scene(const SceneGenSpec& spec);

/// Sum of isotropic Gaussian blobs plus Gaussian pixel noise, clipped to [0,1].
/// Blob sigma is scale/2 when the point set carries scales, otherwise drawn
/// from `blob_sigma_range` with a generator seeded from `spec.seed`.
ImageGrid render_scene_image(const PointSet& truth, const SceneGenSpec& spec);

/// Stable 64-bit mixing used to derive per-item seeds from a base seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt);

// Synthetic desk-scale domains. Source scenes are sparse uniform-Poisson
// crowds plus one tight cluster; target scenes alternate sparse crowds with
// clustered ones of smaller heads, rendered dimmer and noisier.
enum class SyntheticDomain { Source, Target };

struct DomainSpec {
    int height = 96;
    int width = 96;
    double sparse_intensity = 8.0;
    double source_cluster_intensity = 30.0;  // clustered crowd added to every source scene
    double source_cluster_std = 3.0;
    double dense_head_scale = 0.75;  // head size multiplier inside target clusters
    double dense_intensity = 40.0;
    double dense_cluster_count = 2.0;
    double dense_cluster_std = 6.0;
    std::pair<double, double> blob_sigma_range{1.5, 2.2};
    std::pair<double, double> source_amplitude{0.55, 0.75};
    std::pair<double, double> target_amplitude{0.45, 0.65};
    double source_noise = 0.015;
    double target_noise = 0.02;
};

/// Scene `index` of the named domain. Target scenes with even index are
/// tagged "sparse", odd ones "dense"; source scenes are tagged "source".
AnnotatedScene make_domain_scene(SyntheticDomain domain, const DomainSpec& spec, std::uint64_t seed,
                                 std::size_t index);
std::vector<AnnotatedScene> make_domain(SyntheticDomain domain, const DomainSpec& spec, std::uint64_t seed,
                                        std::size_t count);

// ---- annotation files ----

struct LoadOptions {
    bool strict = false;       // abort on the first bad record instead of skipping it
    bool load_images = true;   // otherwise each scene gets a blank image of the declared size
};

/// Reads `{"version":1,"scenes":[{"image":...,"width":W,"height":H,"points":[[x,y],...]}]}`.
/// Images are resolved relative to the annotation file. Rejected records are
/// described in `warnings` (each names the record index) unless strict.
std::vector<AnnotatedScene> load_annotations(const std::filesystem::path& path, const LoadOptions& options = {},
                                             std::vector<std::string>* warnings = nullptr);

/// Writes the annotation file. Scenes with a non-empty image and an
/// `image_path` have their image written next to it as PNG.
void save_annotations(const std::vector<AnnotatedScene>& scenes, const std::filesystem::path& path,
                      bool write_images = true);

// ---- raster images ----

/// PNG (8/16-bit gray, gray+alpha, RGB, RGBA) or binary PGM/PPM. Output is
/// normalized to [0,1]; alpha is dropped.
ImageGrid read_image(const std::filesystem::path& path);
/// Writes a 16-bit PNG (1 or 3 channels).
void write_png(const ImageGrid& image, const std::filesystem::path& path);
/// Luminance conversion of a 3-channel image; 1-channel images are returned unchanged.
ImageGrid to_grayscale(const ImageGrid& image);

}  // namespace bikt
