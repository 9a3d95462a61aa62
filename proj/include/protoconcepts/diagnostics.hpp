#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace protoconcepts {

/// Runtime failure (CLI exit code 1).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad usage or configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf reached a place that requires finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

using WarningSink = std::function<void(std::string_view)>;

// Warnings go to stderr unless a sink is installed. Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace protoconcepts
