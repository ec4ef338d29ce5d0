#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace splatsr {

/// Caller passed a value that violates an operation's preconditions.
class InvalidParameterError : public std::invalid_argument {
public:
    explicit InvalidParameterError(const std::string& what) : std::invalid_argument(what) {}
};

/// Two pieces of state that must agree (sizes, orderings) do not.
class InconsistentStateError : public std::logic_error {
public:
    explicit InconsistentStateError(const std::string& what) : std::logic_error(what) {}
};

/// Malformed file content; byte_offset points at the offending location.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (byte " + std::to_string(byte_offset) + ")"),
          byte_offset(byte_offset) {}
    std::size_t byte_offset;
};

/// Bad configuration value; key names the offending entry.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& key, const std::string& what)
        : std::runtime_error("config key '" + key + "': " + what), key(key) {}
    std::string key;
};

} // namespace splatsr
