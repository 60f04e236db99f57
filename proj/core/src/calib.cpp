// SPDX-License-Identifier: Apache-2.0
#include "vlmq/calib.hpp"

#include <cmath>
#include <random>

#include "vlmq/errors.hpp"
#include "vlmq/threads.hpp"

namespace vlmq {

namespace {
constexpr double kJitterScale = 0.01;
}

double vision_jitter_scale() { return kJitterScale; }

std::size_t CalibrationSample::num_text() const {
  std::size_t n = 0;
  for (TokenRole r : roles) {
    if (modality_of(r) == Modality::Text) {
      ++n;
    }
  }
  return n;
}

std::size_t CalibrationSample::num_vision() const { return roles.size() - num_text(); }

std::size_t CalibrationBatch::total_tokens() const {
  std::size_t n = 0;
  for (const auto &s : samples) {
    n += s.num_tokens();
  }
  return n;
}

CalibrationBatch generate_batch(std::size_t d_model, std::size_t num_samples, std::size_t n_text,
                                std::size_t n_vision, double redundancy, std::uint64_t seed) {
  if (redundancy < 0.0 || redundancy > 1.0) {
    throw InvalidRatio("redundancy must be in [0, 1]");
  }
  if (redundancy > 0.0 && n_vision < 1) {
    throw InvalidRatio("redundancy > 0 requires at least one vision token");
  }
  if (d_model < 1 || num_samples < 1 || n_text + n_vision < 1) {
    throw InvalidSpec("empty calibration batch");
  }

  CalibrationBatch batch;
  batch.d_model = d_model;
  batch.samples.reserve(num_samples);

  const std::size_t n_sys = n_text / 4;
  const std::size_t n_ins = n_text / 4;
  const std::size_t n_ans = n_text - n_sys - n_ins;
  const std::size_t n_total = n_text + n_vision;

  for (std::size_t s = 0; s < num_samples; ++s) {
    std::mt19937_64 rng(mix_seed(seed, s));
    std::normal_distribution<double> normal(0.0, 1.0);

    Matrix text(d_model, n_text);
    for (double &x : text.data()) {
      x = normal(rng);
    }

    std::size_t centers = 0;
    Matrix center_mat;
    if (n_vision > 0) {
      centers = static_cast<std::size_t>(
        std::ceil((1.0 - redundancy) * static_cast<double>(n_vision)));
      centers = std::max<std::size_t>(1, std::min(centers, n_vision));
      center_mat = Matrix(d_model, centers);
      for (double &x : center_mat.data()) {
        x = normal(rng);
      }
    }

    Matrix emb(d_model, n_total);
    std::vector<TokenRole> roles(n_total);

    std::size_t col = 0;
    std::size_t text_col = 0;
    auto put_text = [&](std::size_t count, TokenRole role) {
      for (std::size_t t = 0; t < count; ++t, ++col, ++text_col) {
        roles[col] = role;
        for (std::size_t r = 0; r < d_model; ++r) {
          emb.at(r, col) = text.at(r, text_col);
        }
      }
    };

    put_text(n_sys, TokenRole::Sys);
    for (std::size_t t = 0; t < n_vision; ++t, ++col) {
      roles[col] = TokenRole::Img;
      const std::size_t c = t % centers; // round-robin keeps every center populated
      for (std::size_t r = 0; r < d_model; ++r) {
        emb.at(r, col) = center_mat.at(r, c) + kJitterScale * normal(rng);
      }
    }
    put_text(n_ins, TokenRole::Ins);
    put_text(n_ans, TokenRole::Ans);

    batch.samples.push_back({std::move(emb), std::move(roles)});
  }
  return batch;
}

std::pair<Matrix, Matrix> split_modality(const Matrix &x, const std::vector<TokenRole> &roles) {
  if (roles.size() != x.cols()) {
    throw ShapeMismatch("split_modality roles length");
  }
  std::size_t n_text = 0;
  for (TokenRole r : roles) {
    if (modality_of(r) == Modality::Text) {
      ++n_text;
    }
  }
  Matrix xt(x.rows(), n_text);
  Matrix xv(x.rows(), roles.size() - n_text);
  std::size_t it = 0, iv = 0;
  for (std::size_t c = 0; c < roles.size(); ++c) {
    const bool text = modality_of(roles[c]) == Modality::Text;
    Matrix &dst = text ? xt : xv;
    const std::size_t dc = text ? it++ : iv++;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      dst.at(r, dc) = x.at(r, c);
    }
  }
  return {std::move(xt), std::move(xv)};
}

} // namespace vlmq
