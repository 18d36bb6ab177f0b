#ifndef STSPOT_COMMON_HPP_
#define STSPOT_COMMON_HPP_

#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace stspot {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor rank/size violation. Raised instead of broadcasting.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

/// Annotation / manifest text that cannot be interpreted. Message carries
/// the file position when one is known.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

template <typename... Args>
std::string str_cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

/// Non-fatal diagnostics go to stderr. Deliberately timestamp-free so that
/// repeated runs produce identical streams.
inline void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

// FNV-1a, used for file and parameter checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace stspot

#endif  // STSPOT_COMMON_HPP_
