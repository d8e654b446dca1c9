// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace trisim {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class... Args>
inline std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

// Contract violations (bad shapes, bad arguments, misuse of the tape).
template <class... Args>
inline void require(bool cond, Args&&... args) {
  if (!cond) throw std::invalid_argument(cat(args...));
}

// I/O and file-format failures.
template <class... Args>
inline void io_require(bool cond, Args&&... args) {
  if (!cond) throw std::runtime_error(cat(args...));
}

}  // namespace trisim
