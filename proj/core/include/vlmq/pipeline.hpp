// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vlmq/backward.hpp"
#include "vlmq/calib.hpp"
#include "vlmq/container.hpp"
#include "vlmq/model.hpp"
#include "vlmq/solver.hpp"

namespace vlmq {

inline constexpr std::array<const char *, 7> kLinearNames = {"q",    "k",    "v",   "o",
                                                             "up", "gate", "down"};

struct BiasLayers {
  bool q = true, k = true, v = true, o = true;

  bool any() const { return q || k || v || o; }
  static BiasLayers none() { return {false, false, false, false}; }
  static BiasLayers qkv() { return {true, true, true, false}; }
  static BiasLayers qkvo() { return {true, true, true, true}; }
};

struct PipelineConfig {
  SolveConfig solve;
  BiasLayers bias_layers = BiasLayers::qkvo();
  NormKind importance_norm = NormKind::L1;
  ImportanceSource importance_source = ImportanceSource::Gradient;
  double manual_li_ratio = 0.0;
  double manual_li_value = 1.0;
  std::uint64_t seed = 0;
  bool passthrough = false; // quantizer disabled; branches stay identical

  void validate() const;
};

struct QuantizedModel {
  ModelSpec spec;
  // layer -> linear name -> result, for all 7 linears
  std::vector<std::map<std::string, QuantizedLayerResult>> layers;
  std::vector<std::vector<double>> attn_norms, ffn_norms; // untouched gains
};

struct ImportanceSummary {
  double min = 0.0, mean = 0.0, max = 0.0;
  double text_mean = 0.0, vision_mean = 0.0;
};

struct LinearReport {
  double weighted_sq_error = 0.0;   // ||(W_hat X_hat - W X_fp) sqrt(G)||^2
  double unweighted_sq_error = 0.0; // ||W_hat X_hat - W X_fp||^2
  double row_weighted_sum = 0.0;    // sum over rows of dW H dW^T
  double row_unweighted_sum = 0.0;
};

struct LayerReportEntry {
  std::map<std::string, LinearReport> linears;
  double block_loss = 0.0; // attention-stream output error after quantization
  std::map<std::string, ImportanceSummary> importance;
  std::vector<PcaPoint> pca;
};

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct Report {
  std::string config_json; // echo enabling exact reproduction
  std::vector<LayerReportEntry> layers;
  double block_loss_sum = 0.0;
  double final_mse = 0.0;
  double final_relative_error = 0.0;
  std::vector<StageTiming> timings; // only populated when requested
};

struct QuantizeOutput {
  QuantizedModel model;
  Report report;
};

/// Orchestrates quantization of the whole model: dual-branch propagation,
/// one block-wise backward per layer for the importance factors, per-linear
/// Hessian accumulation and solver dispatch, stage-wise re-forwarding.
QuantizeOutput quantize_model(const std::vector<LayerWeights> &model, const ModelSpec &spec,
                              const CalibrationBatch &batch, const PipelineConfig &cfg,
                              bool collect_timings = false);

/// Rebuilds runnable layer weights from a quantized model.
std::vector<LayerWeights> to_weights(const QuantizedModel &qm);

struct EvalLinearReport {
  double sq_error = 0.0; // ||W_hat X_hat - W X_fp||^2 at this linear
};

struct EvalLayerReport {
  double block_loss = 0.0;
  std::map<std::string, EvalLinearReport> linears;
};

struct EvalReport {
  std::vector<EvalLayerReport> layers;
  double block_loss_sum = 0.0;
  double final_mse = 0.0;
  double final_relative_error = 0.0;
};

/// Dual-branch reconstruction metrics of a quantized model against its
/// full-precision source on a calibration batch.
EvalReport eval_reconstruction(const std::vector<LayerWeights> &model_fp,
                               const std::vector<LayerWeights> &model_q, const ModelSpec &spec,
                               const CalibrationBatch &batch);

// Quantized-model containers and JSON reports.
void write_quantized_model(const std::filesystem::path &dir, const QuantizedModel &qm,
                           const std::string &config_json);
QuantizedModel read_quantized_model(const std::filesystem::path &dir);

std::string report_to_json(const Report &report);
std::string eval_report_to_json(const EvalReport &report, const std::string &config_json);
void write_text_file(const std::filesystem::path &path, const std::string &text);

} // namespace vlmq
