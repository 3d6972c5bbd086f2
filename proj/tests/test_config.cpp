#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "bikt/config.hpp"

namespace fs = std::filesystem;
using namespace bikt;
using nlohmann::json;

namespace {

fs::path write_config(const std::string& name, const json& j) {
    const auto path = fs::temp_directory_path() / ("bikt_config_" + name + ".json");
    std::ofstream(path) << j.dump();
    return path;
}

std::string error_key(const json& j) {
    try {
        config_from_json(j).validate();
    } catch (const ConfigError& e) {
        return e.key();
    }
    return {};
}

}  // namespace

TEST(Config, EmptyGivesDefaults) {
    const auto c = parse_config(std::nullopt);
    EXPECT_EQ(c.kernel.beta, 0.3);
    EXPECT_EQ(c.focal.gamma, 2.0);
    EXPECT_EQ(c.transfer.fusion.decode_threshold, 0.2);
    EXPECT_EQ(c.transfer.fusion.decode_window, 10);
    EXPECT_EQ(c.transfer.cycles, 4);
    EXPECT_EQ(c.transfer.fusion.patch_side, 224);
    EXPECT_EQ(c.transfer.reg_learning_rate, 1e-6);
    EXPECT_EQ(c.transfer.det_learning_rate, 1e-5);
    EXPECT_TRUE(c.transfer.freeze_all_but_last_two);
    EXPECT_EQ(parse_config(write_config("empty", json::object())).seed, 0u);
}

TEST(Config, FlagOverridesFile) {
    const auto path = write_config("cycles", {{"transfer", {{"cycles", 4}}}, {"seed", 3}});
    ConfigOverrides o;
    o.cycles = 6;
    const auto c = parse_config(path, o);
    EXPECT_EQ(c.transfer.cycles, 6);
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.transfer.seed, 3u);
}

TEST(Config, RangeErrorsNameKey) {
    EXPECT_EQ(error_key({{"focal", {{"gamma", -1}}}}), "focal.gamma");
    EXPECT_EQ(error_key({{"kernel", {{"beta", 0}}}}), "kernel.beta");
    EXPECT_EQ(error_key({{"transfer", {{"cycles", 0}}}}), "transfer.cycles");
    EXPECT_EQ(error_key({{"phi", {{"source_fraction", 1.5}}}}), "phi.source_fraction");
    EXPECT_EQ(error_key({{"device", "gpu"}}), "device");
    EXPECT_EQ(error_key({{"data", {{"source_annotations", "/nonexistent.json"}}}}), "data.source_annotations");
}

TEST(Config, UnknownAndMistypedKeys) {
    EXPECT_EQ(error_key({{"transfer", {{"cyclez", 4}}}}), "transfer.cyclez");
    EXPECT_EQ(error_key({{"bogus", 1}}), "bogus");
    EXPECT_EQ(error_key({{"transfer", {{"cycles", "four"}}}}), "transfer.cycles");
    EXPECT_EQ(error_key({{"transfer", {{"patch_policy", "best"}}}}), "transfer.patch_policy");
    EXPECT_EQ(error_key({{"kernel", {{"mode", "auto"}}}}), "kernel.mode");
}

TEST(Config, MalformedFile) {
    const auto path = fs::temp_directory_path() / "bikt_config_bad.json";
    std::ofstream(path) << "{ not json";
    EXPECT_THROW(parse_config(path), ConfigError);
    EXPECT_THROW(parse_config(fs::path("/nonexistent/config.json")), ConfigError);
}

TEST(Config, JsonRoundTrip) {
    auto c = parse_config(std::nullopt);
    c.seed = 17;
    c.kernel.mode = KernelMode::Adaptive;
    c.transfer.fusion.policy = PatchPolicy::Random;
    c.phi.loss = PhiLoss::Mse;
    c.data.domain.target_amplitude = {0.2, 0.4};
    const auto back = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(back), config_to_json(c));
    EXPECT_EQ(back.kernel.mode, KernelMode::Adaptive);
    EXPECT_EQ(back.transfer.fusion.policy, PatchPolicy::Random);
    EXPECT_EQ(back.phi.loss, PhiLoss::Mse);
    EXPECT_EQ(back.transfer.fusion.kernel.mode, KernelMode::Adaptive);
}

TEST(Config, OutDirResolution) {
    RunConfig c;
    c.out = "explicit";
    EXPECT_EQ(c.out_dir(), fs::path("explicit"));
    c.out.clear();
    ::setenv("BIKT_OUT", "/tmp/from_env", 1);
    EXPECT_EQ(c.out_dir(), fs::path("/tmp/from_env"));
    ::unsetenv("BIKT_OUT");
    EXPECT_EQ(c.out_dir(), fs::path("runs"));
}

TEST(Config, SeedsDerivedPerStage) {
    const auto c = config_from_json({{"seed", 5}});
    EXPECT_NE(c.regressor.train.seed, c.detector.train.seed);
    EXPECT_NE(c.detector.train.seed, c.phi.train.seed);
    EXPECT_EQ(config_from_json({{"seed", 5}}).phi.train.seed, c.phi.train.seed);
}
