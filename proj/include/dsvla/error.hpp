#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace dsvla {

// Invalid configuration / CLI usage; maps to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/dimension contract violations; maps to exit code 3.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values or other numeric failures; maps to exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File I/O and parse failures; maps to exit code 3.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

}  // namespace dsvla
