#pragma once

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bikt/config.hpp"

namespace bikt {

/// A stage ran before the stage it depends on. `missing_stage()` names the
/// command that produces the absent artifact.
class MissingStageError : public std::runtime_error {
public:
    MissingStageError(std::string stage, const std::filesystem::path& artifact)
        : std::runtime_error("missing " + artifact.string() + "; run " + stage + " first"), stage_(std::move(stage)) {}
    const std::string& missing_stage() const { return stage_; }

private:
    std::string stage_;
};

/// Another process holds the run directory.
class LockError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exclusive `.lock` file in a run directory, removed on destruction.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;
    ~RunLock();

private:
    std::filesystem::path path_;
};

const std::vector<std::string>& command_names();

/// Runs one pipeline stage; artifacts land under `config.out_dir()`.
/// Throws on failure.
void execute_command(const std::string& name, const RunConfig& config, std::ostream& log);

/// execute_command with errors reported as one JSON line on `err`.
/// Returns the process exit status.
int run_command(const std::string& name, const RunConfig& config, std::ostream& log, std::ostream& err);

}  // namespace bikt
