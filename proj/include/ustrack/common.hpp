#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <cstdio>

namespace ustrack {

// Raised for malformed configs (unknown keys, bad values). CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised for unreadable or inconsistent input data. CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a training loss turns non-finite. CLI exit code 4.
struct DivergenceError : std::runtime_error {
  int epoch;
  DivergenceError(const std::string& msg, int epoch_idx)
      : std::runtime_error(msg), epoch(epoch_idx) {}
};

using LogHandler = std::function<void(const std::string&)>;

inline LogHandler& log_handler() {
  static LogHandler h = [](const std::string& msg) {
    std::fprintf(stderr, "[ustrack] %s\n", msg.c_str());
  };
  return h;
}

inline void set_log_handler(LogHandler h) { log_handler() = std::move(h); }

inline void log_warn(const std::string& msg) {
  if (log_handler()) log_handler()(msg);
}

}  // namespace ustrack
