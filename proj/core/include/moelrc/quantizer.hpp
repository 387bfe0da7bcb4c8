#pragma once

// Groupwise asymmetric low-bit quantization of weight matrices.
//
// Each row is split into groups of `group_size` consecutive elements (the
// last group of a row may be shorter). A group stores one scale and one zero
// point, and every element is reconstructed as code * scale + zero.
//
// Quant parameters start from a min-max fit and can optionally be refined by
// a half-quadratic loop that alternates an l_p shrinkage of the residual with
// a closed-form zero-point update.

#include "moelrc/types.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace moelrc {

struct QuantConfig {
  int bits = 2;
  int group_size = 64;
  int hqq_iters = 20;         // 0 disables refinement
  double hqq_shrink_p = 0.7;  // exponent of the sparsity-promoting norm, in (0, 1]
  double hqq_beta = 10.0;     // initial half-quadratic penalty
  double hqq_beta_growth = 1.01;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  bool operator==(const QuantConfig&) const = default;
};

struct QuantizedMatrix {
  Index rows = 0;
  Index cols = 0;
  int bits = 0;
  int group_size = 0;
  std::vector<std::uint8_t> codes;  // one code per element, row-major, unpacked in memory
  std::vector<double> scales;       // one per group
  std::vector<double> zero_points;  // one per group

  Index groups_per_row() const;
  Index num_groups() const;
  bool empty() const { return rows == 0 || cols == 0; }

  /// Structural consistency: lengths, bit-width and code range.
  void validate() const;

  bool operator==(const QuantizedMatrix&) const = default;
};

QuantizedMatrix quantize(const Matrix& w, const QuantConfig& cfg);

Matrix dequantize(const QuantizedMatrix& qm);

/// Storage for a rows x cols matrix at `bits` per element. With metadata, every
/// group adds a 16-bit scale and a 16-bit zero point.
std::uint64_t packed_size_bytes(std::uint64_t rows, std::uint64_t cols, int bits,
                                bool include_metadata = false, std::uint64_t group_size = 64);

/// Dense little-endian bit packing; code i occupies bits [i*bits, (i+1)*bits).
std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits);
std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count,
                                       int bits);

/// sum_i |r_i|^p, the objective the refinement loop minimizes per group.
double lp_objective(std::span<const double> residual, double p);

/// Round half away from zero; the only rounding used for codes.
inline double round_half_away(double x) { return std::round(x); }

}  // namespace moelrc
