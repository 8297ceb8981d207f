#pragma once

#include <stdexcept>
#include <string>

namespace mrmp {

// Error taxonomy maps one-to-one onto CLI exit codes (see tools/mrmp.cpp):
// parse/config -> 2, degenerate data -> 3, numeric -> 4, mismatch -> 5.

struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct parse_error : std::runtime_error {
  explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct degenerate_data_error : std::runtime_error {
  explicit degenerate_data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct mismatch_error : std::runtime_error {
  explicit mismatch_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mrmp
