#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "bikt/models.hpp"
#include "bikt/reg2det.hpp"
#include "bikt/scene.hpp"
#include "bikt/transfer.hpp"

namespace bikt {

/// Bad configuration; `key()` is the dotted path of the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message)
        : std::runtime_error("config key '" + key + "': " + message), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct DataConfig {
    DomainSpec domain;
    int source_scenes = 40;
    int target_scenes = 20;
    int probe_scenes = 20;
    // Optional annotation files replacing the synthetic domains.
    std::string source_annotations;
    std::string target_annotations;
    std::string probe_annotations;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out;  // empty: $BIKT_OUT or "runs"
    std::string device = "cpu";
    bool strict = false;
    DataConfig data;
    KernelSpec kernel;
    FocalSpec focal;
    RegressorTrainConfig regressor;
    DetectorTrainConfig detector;
    PhiTrainConfig phi;
    double source_fraction = 1.0;  // share of source scenes used to train Phi
    TransferConfig transfer;
    int profile_side = 32;

    /// Range checks; errors name the offending key.
    void validate() const;
    std::filesystem::path out_dir() const;
};

/// Command-line values that take precedence over the file.
struct ConfigOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> cycles;
    std::optional<double> source_fraction;
    std::optional<std::string> device;
    std::optional<bool> strict;
};

/// Unknown keys and type mismatches raise ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);

/// Reads `path` (if any), applies overrides, fills defaults, validates.
RunConfig parse_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& overrides = {});

nlohmann::json transfer_config_to_json(const TransferConfig& config);

}  // namespace bikt
