#pragma once

#include <stdexcept>
#include <string>

namespace dub3d {

// Invalid run/model configuration. `field` is a dotted path into the config.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string field, const std::string& message)
        : std::runtime_error(field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Malformed or inconsistent input data (manifests, clips, checkpoints, predictions).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dub3d
