// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vlmq/matrix.hpp"
#include "vlmq/model.hpp"

namespace vlmq {

enum class TokenRole : std::uint8_t { Sys = 0, Img = 1, Ins = 2, Ans = 3 };
enum class Modality : std::uint8_t { Text = 0, Vision = 1 };

inline Modality modality_of(TokenRole r) {
  return r == TokenRole::Img ? Modality::Vision : Modality::Text;
}

struct CalibrationSample {
  Matrix embeddings;            // d_model x N
  std::vector<TokenRole> roles; // length N, contiguous blocks Sys,Img,Ins,Ans

  std::size_t num_tokens() const { return roles.size(); }
  std::size_t num_text() const;
  std::size_t num_vision() const;
};

struct CalibrationBatch {
  std::size_t d_model = 0;
  std::vector<CalibrationSample> samples;

  std::size_t total_tokens() const;
};

/// Synthetic calibration data with the sys/img/ins/ans block structure.
/// Text tokens are i.i.d. isotropic; vision tokens are drawn from
/// ceil((1-redundancy)*n_vision) cluster centers with small jitter, so
/// redundancy -> 1 yields near-duplicate vision tokens. Deterministic per seed.
CalibrationBatch generate_batch(std::size_t d_model, std::size_t num_samples, std::size_t n_text,
                                std::size_t n_vision, double redundancy, std::uint64_t seed);

/// Jitter scale used around vision cluster centers (exposed for cluster-count
/// style checks).
double vision_jitter_scale();

/// Column partition of X by modality, original order preserved within parts.
std::pair<Matrix, Matrix> split_modality(const Matrix &x, const std::vector<TokenRole> &roles);

} // namespace vlmq
