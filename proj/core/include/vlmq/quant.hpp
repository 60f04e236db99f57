// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace vlmq {

/// Uniform affine quantization parameters: code = clamp(round(v/s)+z, 0, 2^B-1),
/// value = s*(code-z). Rounding is half-to-even throughout.
struct QuantParams {
  double scale = 1.0;
  int zero_point = 0;
  int bits = 8;

  int max_code() const { return (1 << bits) - 1; }
};

/// Fits scale and zero-point from the min/max of `values`.
/// Degenerate range (max == min == v): s = max(|v|, 1e-8)/(2^B-1),
/// z = clamp(-round(v/s), 0, 2^B-1), which reconstructs nonzero constants
/// exactly and keeps s > 0 for all-zero input.
QuantParams fit_params(std::span<const double> values, int bits);

std::uint8_t quantize_value(double v, const QuantParams &p);
double dequantize_code(std::uint8_t code, const QuantParams &p);

struct QuantDequantResult {
  std::vector<std::uint8_t> codes;
  std::vector<double> values;
};

QuantDequantResult quant_dequant(std::span<const double> values, const QuantParams &p);

/// Group-wise quantization state for one weight row. Columns are visited in
/// the solver's (possibly permuted) order; groups are contiguous runs of
/// `group_size` visit positions. Params for a group are fitted on the row's
/// current (already error-compensated) values when the group head is reached.
class RowQuantizer {
public:
  /// group_size -1 selects per-channel (one group spanning the row).
  RowQuantizer(std::size_t width, int bits, int group_size);

  /// Must be called for each visit index in order; fits params at group heads
  /// from `current_row` (the working row in visit order).
  void begin_column(std::size_t visit_index, std::span<const double> current_row);

  /// Quantizes one value with its group's params.
  /// Throws GroupParamsMissing if the group head was never begun.
  std::pair<std::uint8_t, double> quantize(std::size_t visit_index, double value) const;

  std::size_t group_of(std::size_t visit_index) const { return visit_index / group_; }
  std::size_t num_groups() const;
  int effective_group_size() const { return static_cast<int>(group_); }
  const std::vector<QuantParams> &group_params() const { return params_; }

private:
  std::size_t width_;
  int bits_;
  std::size_t group_;
  std::vector<QuantParams> params_;
  std::vector<bool> fitted_;
};

} // namespace vlmq
