#pragma once

#include <stdexcept>
#include <string>

namespace slm {

// Caller handed us something outside an operation's precondition.
class invalid_input : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure inside the model (NaN parameters, log 0 at the truth, ...).
class numeric_fault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw invalid_input(what);
}

}  // namespace detail
}  // namespace slm
