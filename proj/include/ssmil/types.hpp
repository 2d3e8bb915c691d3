#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ssmil {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Array = Eigen::ArrayXd;
using ArrayXX = Eigen::ArrayXXd;
using Index = Eigen::Index;

using MaskVec = std::vector<std::uint8_t>;

/// Violated precondition or shape contract. CLI maps this to exit code 1.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed file or stream. Carries the byte offset of the first bad byte.
/// CLI maps this (and plain I/O failures) to exit code 2.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::uint64_t byte_offset)
      : std::runtime_error(msg + " (byte " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::uint64_t offset;
};

inline void contract(bool ok, const std::string& msg) {
  if (!ok) throw ContractViolation(msg);
}

inline std::string shape_str(Index rows, Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

}  // namespace ssmil
