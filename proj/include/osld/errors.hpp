#pragma once

#include <stdexcept>
#include <string>

namespace osld {

// Error families map onto CLI exit codes: config errors -> 2,
// data/load errors -> 3, anything else -> 4.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct config_error : error {
  using error::error;
};

struct data_error : error {
  using error::error;
};

// Violated precondition / invariant of an in-process API.
struct contract_error : error {
  using error::error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw contract_error(msg);
}

}  // namespace osld
