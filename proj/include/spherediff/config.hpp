#pragma once

// Run configuration as "key = value" text.
//
//   # comment
//   steps = 50
//   rings = -90:4, 90:4, 0:15
//   prompt.middle = a living room
//   foreground = 90, 0, -3, a red sofa   (azimuth, elevation, b, prompt; repeatable)

#include "spherediff/fusion.hpp"

#include <stdexcept>
#include <string>

namespace spherediff {

class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string key, const std::string& message)
        : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct RunConfig {
    PipelineConfig pipeline;
    PromptSet prompts;
};

/// Applies one setting. Throws ConfigError naming the key for unknown keys
/// and unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses a whole document on top of the defaults and validates the result.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Validates pipeline and prompts, rethrowing as ConfigError with the key.
void validate_config(const RunConfig& cfg);

/// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const RunConfig& cfg);

std::string format_rings(const std::vector<ScheduleRing>& rings);
std::vector<ScheduleRing> parse_rings(const std::string& text);

}  // namespace spherediff
