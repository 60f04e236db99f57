// SPDX-License-Identifier: Apache-2.0
#include "vlmq/quant.hpp"

#include <algorithm>
#include <cmath>

#include "vlmq/errors.hpp"
#include "vlmq/matrix.hpp"

namespace vlmq {

namespace {

// round-half-to-even; relies on the default FE_TONEAREST mode
double round_even(double v) { return std::nearbyint(v); }

void validate_bits(int bits) {
  if (bits < 2 || bits > 8) {
    throw Error(ErrorKind::Validation, "bits must be in [2, 8], got " + std::to_string(bits));
  }
}

} // namespace

QuantParams fit_params(std::span<const double> values, int bits) {
  validate_bits(bits);
  if (values.empty()) {
    throw Error(ErrorKind::Validation, "fit_params: empty value range");
  }
  if (!all_finite(values)) {
    throw Error(ErrorKind::Numerical, "fit_params: non-finite values");
  }
  const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
  const double mn = *mn_it;
  const double mx = *mx_it;
  const double levels = static_cast<double>((1 << bits) - 1);

  QuantParams p;
  p.bits = bits;
  if (mx > mn) {
    p.scale = (mx - mn) / levels;
    const double z = -round_even(mn / p.scale);
    p.zero_point = static_cast<int>(std::clamp(z, 0.0, levels));
  } else {
    // degenerate constant range: keep scale positive for the all-zero case
    // and pick it so the round trip reproduces nonzero constants exactly
    const double mag = std::max(std::fabs(mn), 1e-8);
    double s = mag / levels;
    if (s * levels != mag) {
      // quotient/product double rounding can land one ulp off; walk a few
      // ulps toward the target first
      const bool upward = s * levels < mag;
      double c = s;
      bool exact = false;
      for (int step = 0; step < 4 && c > 0.0; ++step) {
        c = std::nextafter(c, upward ? 1e300 : 0.0);
        if (c * levels == mag) {
          s = c;
          exact = true;
          break;
        }
      }
      if (!exact) {
        // the product grid steps by levels*ulp(s) > ulp(mag), so mag can sit
        // in a gap no nearby scale reaches; a power-of-two code multiplier
        // makes the round trip exact unconditionally
        s = mag / static_cast<double>(1 << (bits - 1));
      }
    }
    p.scale = s;
    const double z = -round_even(mn / p.scale);
    p.zero_point = static_cast<int>(std::clamp(z, 0.0, levels));
  }
  return p;
}

std::uint8_t quantize_value(double v, const QuantParams &p) {
  const double code = round_even(v / p.scale) + static_cast<double>(p.zero_point);
  const double clamped = std::clamp(code, 0.0, static_cast<double>(p.max_code()));
  return static_cast<std::uint8_t>(clamped);
}

double dequantize_code(std::uint8_t code, const QuantParams &p) {
  return p.scale * (static_cast<double>(code) - static_cast<double>(p.zero_point));
}

QuantDequantResult quant_dequant(std::span<const double> values, const QuantParams &p) {
  QuantDequantResult out;
  out.codes.reserve(values.size());
  out.values.reserve(values.size());
  for (double v : values) {
    const std::uint8_t c = quantize_value(v, p);
    out.codes.push_back(c);
    out.values.push_back(dequantize_code(c, p));
  }
  return out;
}

RowQuantizer::RowQuantizer(std::size_t width, int bits, int group_size)
  : width_(width), bits_(bits) {
  validate_bits(bits);
  if (width == 0) {
    throw Error(ErrorKind::Validation, "row quantizer: zero width");
  }
  if (group_size == 0 || group_size < -1) {
    throw Error(ErrorKind::Validation, "group size must be -1 or >= 1");
  }
  group_ = (group_size < 0) ? width : std::min<std::size_t>(static_cast<std::size_t>(group_size),
                                                            width);
  const std::size_t groups = (width_ + group_ - 1) / group_;
  params_.resize(groups);
  fitted_.assign(groups, false);
}

std::size_t RowQuantizer::num_groups() const { return params_.size(); }

void RowQuantizer::begin_column(std::size_t visit_index, std::span<const double> current_row) {
  if (visit_index >= width_ || current_row.size() != width_) {
    throw ShapeMismatch("row quantizer begin_column");
  }
  if (visit_index % group_ != 0) {
    return;
  }
  const std::size_t g = group_of(visit_index);
  if (fitted_[g]) {
    return;
  }
  const std::size_t end = std::min(width_, visit_index + group_);
  params_[g] = fit_params(current_row.subspan(visit_index, end - visit_index), bits_);
  fitted_[g] = true;
}

std::pair<std::uint8_t, double> RowQuantizer::quantize(std::size_t visit_index,
                                                       double value) const {
  const std::size_t g = group_of(visit_index);
  if (g >= params_.size() || !fitted_[g]) {
    throw GroupParamsMissing("column " + std::to_string(visit_index) +
                             " visited before its group head");
  }
  const std::uint8_t code = quantize_value(value, params_[g]);
  return {code, dequantize_code(code, params_[g])};
}

} // namespace vlmq
