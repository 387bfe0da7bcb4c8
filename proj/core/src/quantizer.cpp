#include "moelrc/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace moelrc {

namespace {

bool supported_bits(int bits) { return bits == 2 || bits == 3 || bits == 4; }

struct GroupParams {
  double scale = 1.0;
  double zero = 0.0;
};

std::uint8_t encode(double w, const GroupParams& p, double qmax) {
  const double q = round_half_away((w - p.zero) / p.scale);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, qmax));
}

double group_objective(std::span<const double> w, const GroupParams& p, double qmax,
                       double lp) {
  double obj = 0.0;
  for (double v : w) {
    const double r = v - (encode(v, p, qmax) * p.scale + p.zero);
    obj += std::pow(std::abs(r), lp);
  }
  return obj;
}

// Generalized soft-thresholding: the proximal operator of |x|^p / beta.
double shrink_lp(double x, double beta, double p) {
  const double a = std::abs(x);
  if (a == 0.0) return 0.0;
  const double t = a - std::pow(a, p - 1.0) / beta;
  return t > 0.0 ? std::copysign(t, x) : 0.0;
}

GroupParams fit_group(std::span<const double> w, const QuantConfig& cfg) {
  const double qmax = static_cast<double>((1 << cfg.bits) - 1);
  const auto [lo_it, hi_it] = std::minmax_element(w.begin(), w.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) return {1.0, lo};

  GroupParams params{(hi - lo) / qmax, lo};
  if (cfg.hqq_iters == 0) return params;

  // Refinement works in units of the (fixed) scale so the shrinkage threshold
  // does not depend on the magnitude of the weights.
  GroupParams best = params;
  double best_obj = group_objective(w, params, qmax, cfg.hqq_shrink_p);
  double beta = cfg.hqq_beta;
  const std::size_t n = w.size();
  std::vector<double> codes(n);
  for (int it = 0; it < cfg.hqq_iters; ++it) {
    double zero_acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      codes[i] = encode(w[i], params, qmax);
      const double r = (w[i] - (codes[i] * params.scale + params.zero)) / params.scale;
      const double e = shrink_lp(r, beta, cfg.hqq_shrink_p) * params.scale;
      zero_acc += w[i] - e - codes[i] * params.scale;
    }
    params.zero = zero_acc / static_cast<double>(n);
    beta *= cfg.hqq_beta_growth;

    const double obj = group_objective(w, params, qmax, cfg.hqq_shrink_p);
    if (obj < best_obj) {
      best_obj = obj;
      best = params;
    }
  }
  return best;
}

}  // namespace

void QuantConfig::validate() const {
  if (!supported_bits(bits))
    throw std::invalid_argument("quant.bits must be 2, 3 or 4 (got " + std::to_string(bits) +
                                ")");
  if (group_size < 1)
    throw std::invalid_argument("quant.group_size must be >= 1 (got " +
                                std::to_string(group_size) + ")");
  if (hqq_iters < 0)
    throw std::invalid_argument("quant.hqq_iters must be >= 0 (got " +
                                std::to_string(hqq_iters) + ")");
  if (!(hqq_shrink_p > 0.0 && hqq_shrink_p <= 1.0))
    throw std::invalid_argument("quant.hqq_shrink_p must lie in (0, 1]");
  if (!(hqq_beta > 0.0) || !(hqq_beta_growth >= 1.0))
    throw std::invalid_argument("quant.hqq_beta must be > 0 and quant.hqq_beta_growth >= 1");
}

Index QuantizedMatrix::groups_per_row() const {
  if (group_size <= 0 || cols == 0) return 0;
  return (cols + group_size - 1) / group_size;
}

Index QuantizedMatrix::num_groups() const { return rows * groups_per_row(); }

void QuantizedMatrix::validate() const {
  if (rows < 0 || cols < 0) throw std::invalid_argument("quantized matrix: negative shape");
  if (empty()) {
    if (!codes.empty() || !scales.empty() || !zero_points.empty())
      throw std::invalid_argument("quantized matrix: empty shape with payload");
    return;
  }
  if (bits < 1 || bits > 8) throw std::invalid_argument("quantized matrix: bad bit-width");
  if (group_size < 1) throw std::invalid_argument("quantized matrix: bad group size");
  if (codes.size() != static_cast<std::size_t>(rows * cols))
    throw std::invalid_argument("quantized matrix: codes length != rows*cols");
  const auto groups = static_cast<std::size_t>(num_groups());
  if (scales.size() != groups || zero_points.size() != groups)
    throw std::invalid_argument("quantized matrix: parameter count != number of groups");
  const unsigned limit = 1u << bits;
  for (auto c : codes)
    if (c >= limit) throw std::invalid_argument("quantized matrix: code out of range");
}

QuantizedMatrix quantize(const Matrix& w, const QuantConfig& cfg) {
  cfg.validate();
  if (!w.allFinite()) throw std::invalid_argument("quantize: input contains non-finite values");

  QuantizedMatrix qm;
  qm.rows = w.rows();
  qm.cols = w.cols();
  qm.bits = cfg.bits;
  qm.group_size = cfg.group_size;
  if (qm.empty()) return qm;

  const double qmax = static_cast<double>((1 << cfg.bits) - 1);
  const Index gpr = qm.groups_per_row();
  qm.codes.resize(static_cast<std::size_t>(w.size()));
  qm.scales.resize(static_cast<std::size_t>(qm.num_groups()));
  qm.zero_points.resize(qm.scales.size());

  for (Index r = 0; r < w.rows(); ++r) {
    const double* row = w.data() + r * w.cols();
    for (Index g = 0; g < gpr; ++g) {
      const Index begin = g * cfg.group_size;
      const Index len = std::min<Index>(cfg.group_size, w.cols() - begin);
      const std::span<const double> group(row + begin, static_cast<std::size_t>(len));
      const GroupParams p = fit_group(group, cfg);
      const auto gi = static_cast<std::size_t>(r * gpr + g);
      qm.scales[gi] = p.scale;
      qm.zero_points[gi] = p.zero;
      for (Index i = 0; i < len; ++i)
        qm.codes[static_cast<std::size_t>(r * w.cols() + begin + i)] =
            encode(group[static_cast<std::size_t>(i)], p, qmax);
    }
  }
  return qm;
}

Matrix dequantize(const QuantizedMatrix& qm) {
  qm.validate();
  Matrix out(qm.rows, qm.cols);
  if (qm.empty()) return out;
  const Index gpr = qm.groups_per_row();
  for (Index r = 0; r < qm.rows; ++r) {
    for (Index c = 0; c < qm.cols; ++c) {
      const auto gi = static_cast<std::size_t>(r * gpr + c / qm.group_size);
      out(r, c) = qm.codes[static_cast<std::size_t>(r * qm.cols + c)] * qm.scales[gi] +
                  qm.zero_points[gi];
    }
  }
  return out;
}

std::uint64_t packed_size_bytes(std::uint64_t rows, std::uint64_t cols, int bits,
                                bool include_metadata, std::uint64_t group_size) {
  const std::uint64_t code_bits = rows * cols * static_cast<std::uint64_t>(bits);
  std::uint64_t bytes = (code_bits + 7) / 8;
  if (include_metadata && group_size > 0) {
    const std::uint64_t groups = rows * ((cols + group_size - 1) / group_size);
    bytes += groups * 4;
  }
  return bytes;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits) {
  std::vector<std::uint8_t> out((codes.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  std::size_t bit = 0;
  for (auto c : codes) {
    for (int b = 0; b < bits; ++b, ++bit)
      if ((c >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
  }
  return out;
}

std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count,
                                       int bits) {
  if (packed.size() * 8 < count * static_cast<std::size_t>(bits))
    throw std::invalid_argument("unpack_codes: packed buffer too short");
  std::vector<std::uint8_t> out(count, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint8_t c = 0;
    for (int b = 0; b < bits; ++b, ++bit)
      if ((packed[bit / 8] >> (bit % 8)) & 1u) c |= static_cast<std::uint8_t>(1u << b);
    out[i] = c;
  }
  return out;
}

double lp_objective(std::span<const double> residual, double p) {
  double obj = 0.0;
  for (double r : residual) obj += std::pow(std::abs(r), p);
  return obj;
}

}  // namespace moelrc
