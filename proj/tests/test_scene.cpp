#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "bikt/scene.hpp"

namespace fs = std::filesystem;
using namespace bikt;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("bikt_scene_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::pair<int, int>> local_maxima(const ImageGrid& img, double floor) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double v = img.at(y, x);
            if (v <= floor) continue;
            bool peak = true;
            for (int dy = -1; dy <= 1 && peak; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= img.height || xx >= img.width) continue;
                    if (img.at(yy, xx) > v) {
                        peak = false;
                        break;
                    }
                }
            if (peak) out.emplace_back(x, y);
        }
    return out;
}

}  // namespace

TEST(PointSet, ValidateRejectsMismatchedScales) {
    PointSet p;
    p.points = {{1, 1}, {2, 2}};
    p.scales = {1.0};
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p.scales = {1.0, 2.0};
    EXPECT_NO_THROW(p.validate());
}

TEST(PointSet, InsideChecksBounds) {
    PointSet p;
    p.points = {{0, 0}, {9.5, 4.99}};
    EXPECT_TRUE(p.inside(5, 10));
    p.points.push_back({10.0, 1.0});
    EXPECT_FALSE(p.inside(5, 10));
}

TEST(Synthetic, ZeroIntensityIsEmpty) {
    SceneGenSpec spec;
    spec.intensity = 0.0;
    EXPECT_TRUE(generate_synthetic_scene(spec).truth.empty());
}

TEST(Synthetic, SameSeedSameScene) {
    SceneGenSpec spec;
    spec.seed = 42;
    spec.process = PointProcess::ThomasCluster;
    const auto a = generate_synthetic_scene(spec);
    const auto b = generate_synthetic_scene(spec);
    EXPECT_EQ(a.truth.points, b.truth.points);
    EXPECT_EQ(a.truth.scales, b.truth.scales);
    EXPECT_EQ(a.image.values, b.image.values);
}

TEST(Synthetic, PoissonMeanCount) {
    SceneGenSpec spec;
    spec.intensity = 50.0;
    spec.noise_std = 0.0;
    double total = 0.0;
    for (int i = 0; i < 1000; ++i) {
        spec.seed = static_cast<std::uint64_t>(i);
        total += static_cast<double>(generate_synthetic_scene(spec).truth.size());
    }
    const double mean = total / 1000.0;
    EXPECT_NEAR(mean, 50.0, 3.0 * std::sqrt(50.0 / 1000.0) * std::sqrt(50.0));
}

TEST(Synthetic, PointsInsideBounds) {
    for (auto process : {PointProcess::UniformPoisson, PointProcess::ThomasCluster}) {
        SceneGenSpec spec;
        spec.process = process;
        spec.intensity = 80;
        spec.cluster_std = 30;
        spec.height = 40;
        spec.width = 70;
        for (std::uint64_t s = 0; s < 20; ++s) {
            spec.seed = s;
            const auto scene = generate_synthetic_scene(spec);
            EXPECT_TRUE(scene.truth.inside(spec.height, spec.width));
            for (double v : scene.image.values) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
        }
    }
}

TEST(Render, EmptyNoiselessIsBlack) {
    SceneGenSpec spec;
    spec.noise_std = 0.0;
    const auto img = render_scene_image(PointSet{}, spec);
    for (double v : img.values) EXPECT_EQ(v, 0.0);
}

TEST(Render, CenteredPointIsArgmax) {
    SceneGenSpec spec;
    spec.noise_std = 0.0;
    PointSet p;
    p.points = {{48, 48}};
    const auto img = render_scene_image(p, spec);
    const auto it = std::max_element(img.values.begin(), img.values.end());
    const auto idx = static_cast<int>(it - img.values.begin());
    EXPECT_EQ(idx % img.width, 48);
    EXPECT_EQ(idx / img.width, 48);
}

TEST(Render, TwoFarPointsTwoMaxima) {
    SceneGenSpec spec;
    spec.noise_std = 0.0;
    PointSet p;
    p.points = {{20, 30}, {70, 60}};
    const auto peaks = local_maxima(render_scene_image(p, spec), 1e-6);
    ASSERT_EQ(peaks.size(), 2u);
    EXPECT_EQ(peaks[0], std::make_pair(20, 30));
    EXPECT_EQ(peaks[1], std::make_pair(70, 60));
}

TEST(Domain, TagsAlternateOnTarget) {
    DomainSpec d;
    const auto target = make_domain(SyntheticDomain::Target, d, 3, 4);
    EXPECT_EQ(target[0].domain_tag, "sparse");
    EXPECT_EQ(target[1].domain_tag, "dense");
    EXPECT_GT(target[1].truth.size(), target[0].truth.size());
    EXPECT_EQ(make_domain_scene(SyntheticDomain::Source, d, 3, 0).domain_tag, "source");
}

TEST(Annotations, RoundTripThreeScenes) {
    const auto dir = scratch_dir("roundtrip");
    std::vector<AnnotatedScene> scenes;
    for (std::uint64_t s = 0; s < 3; ++s) {
        SceneGenSpec spec;
        spec.seed = s;
        spec.height = 32;
        spec.width = 40;
        auto scene = generate_synthetic_scene(spec);
        scene.image_path = "images/" + std::to_string(s) + ".png";
        scenes.push_back(scene);
    }
    save_annotations(scenes, dir / "annotations.json");
    const auto loaded = load_annotations(dir / "annotations.json");
    ASSERT_EQ(loaded.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        ASSERT_EQ(loaded[i].truth.size(), scenes[i].truth.size());
        for (std::size_t j = 0; j < scenes[i].truth.size(); ++j) {
            EXPECT_NEAR(loaded[i].truth.points[j].x, scenes[i].truth.points[j].x, 1e-9);
            EXPECT_NEAR(loaded[i].truth.points[j].y, scenes[i].truth.points[j].y, 1e-9);
        }
        EXPECT_EQ(loaded[i].image.height, 32);
        EXPECT_EQ(loaded[i].image.width, 40);
        for (std::size_t k = 0; k < scenes[i].image.values.size(); ++k)
            EXPECT_NEAR(loaded[i].image.values[k], scenes[i].image.values[k], 1.0 / 65535.0);
    }
}

TEST(Annotations, EmptySequence) {
    const auto dir = scratch_dir("empty");
    save_annotations({}, dir / "a.json");
    EXPECT_TRUE(load_annotations(dir / "a.json").empty());
}

TEST(Annotations, SubpixelPoint) {
    const auto dir = scratch_dir("subpixel");
    AnnotatedScene scene;
    scene.image = ImageGrid(8, 16);
    scene.truth.points = {{10.25, 3.5}};
    save_annotations({scene}, dir / "a.json", false);
    const auto loaded = load_annotations(dir / "a.json", {.strict = false, .load_images = false});
    ASSERT_EQ(loaded.size(), 1u);
    EXPECT_NEAR(loaded[0].truth.points[0].x, 10.25, 1e-9);
    EXPECT_NEAR(loaded[0].truth.points[0].y, 3.5, 1e-9);
}

TEST(Annotations, BadRecordSkippedOrFatal) {
    const auto dir = scratch_dir("bad");
    std::ofstream(dir / "a.json") << R"({"version":1,"scenes":[
        {"image":"","width":10,"height":10,"points":[[1,1]]},
        {"image":"","width":10,"height":10,"points":[[50,1]]}]})";
    std::vector<std::string> warnings;
    const auto loaded = load_annotations(dir / "a.json", {.strict = false, .load_images = false}, &warnings);
    EXPECT_EQ(loaded.size(), 1u);
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find('1'), std::string::npos);
    EXPECT_THROW(load_annotations(dir / "a.json", {.strict = true, .load_images = false}), std::runtime_error);
}

TEST(Annotations, MissingFileThrows) {
    EXPECT_THROW(load_annotations("/nonexistent/annotations.json"), std::runtime_error);
}

TEST(Images, PngRoundTripAndGrayscale) {
    const auto dir = scratch_dir("png");
    ImageGrid rgb(4, 5, 3);
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : rgb.values) v = u(rng);
    write_png(rgb, dir / "a.png");
    const auto back = read_image(dir / "a.png");
    ASSERT_EQ(back.channels, 3);
    for (std::size_t i = 0; i < rgb.values.size(); ++i) EXPECT_NEAR(back.values[i], rgb.values[i], 1.0 / 65535.0);
    const auto gray = to_grayscale(back);
    EXPECT_EQ(gray.channels, 1);
    EXPECT_EQ(gray.values.size(), 20u);
}
