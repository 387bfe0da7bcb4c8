#pragma once

#include <Eigen/Dense>

#include <array>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace moelrc {

using Index = Eigen::Index;

// Row-major so quantization groups (runs along a row) are contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Projection : std::uint8_t { w1 = 0, w2 = 1, w3 = 2 };

inline constexpr std::array<Projection, 3> kProjections{Projection::w1, Projection::w2,
                                                         Projection::w3};

std::string_view to_string(Projection p);
Projection projection_from_string(std::string_view name);

/// Identifies one projection matrix of one expert in one layer.
struct MatrixKey {
  int layer = 0;
  int expert = 0;
  Projection projection = Projection::w1;

  auto operator<=>(const MatrixKey&) const = default;
  std::string str() const;
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent user configuration. The CLI maps this to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or version-incompatible persisted data.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace moelrc
