// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vlmq/backward.hpp"
#include "vlmq/calib.hpp"
#include "vlmq/matrix.hpp"
#include "vlmq/quant.hpp"

namespace vlmq {

enum class Method : std::uint8_t { GPTQ = 0, GPTAQ = 1, VLMQ = 2 };
enum class Precursor : std::uint8_t { GPTAQ = 0, GPTQ = 1 };

std::string to_string(Method m);
std::string to_string(Precursor p);

/// Accumulators for one linear layer. `h` is X_hat * diag(G) * X_hat^T over
/// all calibration tokens; `cross` is X_hat * diag(G) * X_fp^T (the residual
/// term's realization, so memory is independent of token count). `h_unit`
/// additionally tracks the unweighted Hessian when G is non-unit.
class HessianState {
public:
  HessianState() = default;
  explicit HessianState(std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::size_t sample_count() const { return samples_; }
  bool weighted() const { return weighted_; }
  bool has_cross() const { return has_cross_; }

  const Matrix &h() const { return h_; }
  const Matrix &cross() const; // throws MissingCrossTerm when absent
  const Matrix &h_unit() const { return weighted_ ? h_unit_ : h_; }

  friend HessianState accumulate_hessian(HessianState state, const Matrix &x_hat,
                                         const Matrix *x_fp, const ImportanceFactors *g);

private:
  std::size_t dim_ = 0;
  std::size_t samples_ = 0;
  bool weighted_ = false;
  bool has_cross_ = false;
  Matrix h_;
  Matrix h_unit_;
  Matrix cross_;
};

/// H += X_hat diag(G) X_hat^T, cross += X_hat diag(G) X_fp^T (when x_fp
/// given). G defaults to unit importance. Symmetry of H is maintained.
HessianState accumulate_hessian(HessianState state, const Matrix &x_hat,
                                const Matrix *x_fp = nullptr,
                                const ImportanceFactors *g = nullptr);

/// H + damp * mean(diag(H)) * I. Throws ZeroHessian when the mean diagonal
/// is zero.
Matrix dampen(const Matrix &h, double damp);

struct SolveConfig {
  Method method = Method::VLMQ;
  Precursor precursor = Precursor::GPTAQ;
  int bits = 3;
  int group_size = -1; // -1 = per-channel
  bool act_order = false;
  double damp = 0.01;
  int lazy_block = 128;

  void validate() const;
};

struct QuantizedLayerResult {
  Matrix w_hat;                                 // dequantized weights, original column order
  std::vector<std::vector<std::uint8_t>> codes; // [row][original column]
  std::vector<std::vector<QuantParams>> params; // [row][group, visit order]
  std::vector<std::uint32_t> perm;              // visit position -> original column
  int group_size = -1;                          // effective group width
  std::vector<double> row_sq_error_weighted;    // dW H dW^T per row
  std::vector<double> row_sq_error_unweighted;  // dW H_unit dW^T per row

  const QuantParams &param_at(std::size_t row, std::size_t orig_col) const;
};

/// Column-ordered quantization with Hessian-guided error compensation
/// (descending-diagonal ordering when act_order, lazy block updates,
/// Cholesky-reformulated inverse).
QuantizedLayerResult quantize_layer_gptq(const Matrix &w, const HessianState &state,
                                         const SolveConfig &cfg);

/// GPTQ loop plus the asymmetric residual correction realized from the
/// cross/self accumulators. Requires an unweighted state with a cross term.
QuantizedLayerResult quantize_layer_gptaq(const Matrix &w, const HessianState &state,
                                          const SolveConfig &cfg);

/// Importance-weighted update: the GPTAQ loop on H = X G X^T (precursor
/// GPTAQ), or the plain GPTQ loop on the weighted Hessian (precursor GPTQ).
QuantizedLayerResult quantize_layer_vlmq(const Matrix &w, const HessianState &state,
                                         const SolveConfig &cfg);

/// Closed-form single-column update: minimizes the G-weighted squared error
/// of dw * X - r subject to dw_q = delta_q, expressed through the Hessian
/// h = X G X^T and the residual projection v = r G X^T. Validated against the
/// brute-force KKT oracle.
std::vector<double> closed_form_column_update(const Matrix &h, std::span<const double> v,
                                              std::size_t q, double delta_q);

struct PcaPoint {
  double pc1 = 0.0;
  double pc2 = 0.0;
  Modality modality = Modality::Text;
  double importance = 1.0;
};

/// Projects token activation columns onto the top-2 principal components of
/// the accumulated Hessian; one row per token for external plotting.
std::vector<PcaPoint> hessian_pca_export(const HessianState &state, const Matrix &activations,
                                         const std::vector<TokenRole> &roles,
                                         const ImportanceFactors &g, std::uint64_t seed = 0);

namespace detail {
std::vector<std::uint32_t> activation_order(const Matrix &h, bool act_order);
} // namespace detail

} // namespace vlmq
