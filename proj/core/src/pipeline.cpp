// SPDX-License-Identifier: Apache-2.0
#include "vlmq/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "vlmq/errors.hpp"
#include "vlmq/linalg.hpp"
#include "vlmq/threads.hpp"

namespace vlmq {

using json = nlohmann::ordered_json;

void PipelineConfig::validate() const {
  solve.validate();
  if (importance_source == ImportanceSource::Manual) {
    if (manual_li_ratio < 0.0 || manual_li_ratio > 1.0) {
      throw InvalidRatio("manual li_ratio must be in [0, 1]");
    }
    if (!(manual_li_value > 0.0)) {
      throw InvalidRatio("manual li_value must be positive");
    }
  }
}

namespace {

json config_to_json_obj(const PipelineConfig &cfg) {
  json j;
  j["method"] = to_string(cfg.solve.method);
  j["precursor"] = to_string(cfg.solve.precursor);
  j["bits"] = cfg.solve.bits;
  j["group_size"] = cfg.solve.group_size;
  j["act_order"] = cfg.solve.act_order;
  j["damp"] = cfg.solve.damp;
  j["lazy_block"] = cfg.solve.lazy_block;
  std::string bias;
  if (cfg.bias_layers.q) bias += 'q';
  if (cfg.bias_layers.k) bias += 'k';
  if (cfg.bias_layers.v) bias += 'v';
  if (cfg.bias_layers.o) bias += 'o';
  j["bias_layers"] = bias.empty() ? "none" : bias;
  j["importance_norm"] = cfg.importance_norm == NormKind::L1 ? "l1" : "l2";
  j["importance_source"] =
    cfg.importance_source == ImportanceSource::Gradient ? "gradient" : "manual";
  if (cfg.importance_source == ImportanceSource::Manual) {
    j["manual_li_ratio"] = cfg.manual_li_ratio;
    j["manual_li_value"] = cfg.manual_li_value;
  }
  j["seed"] = cfg.seed;
  j["passthrough"] = cfg.passthrough;
  return j;
}

double sq_diff_sum(const Matrix &a, const Matrix &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s;
}

// ||W_hat X_hat - W X_fp||^2, optionally G-weighted per token column
std::pair<double, double> linear_errors(const Matrix &w_hat, const Matrix &w,
                                        const std::vector<Matrix> &x_hat,
                                        const std::vector<Matrix> &x_fp,
                                        const std::vector<const ImportanceFactors *> &g) {
  double weighted = 0.0;
  double unweighted = 0.0;
  for (std::size_t s = 0; s < x_hat.size(); ++s) {
    const Matrix yh = multiply(w_hat, x_hat[s]);
    const Matrix yf = multiply(w, x_fp[s]);
    for (std::size_t t = 0; t < yh.cols(); ++t) {
      double col = 0.0;
      for (std::size_t r = 0; r < yh.rows(); ++r) {
        const double d = yh.at(r, t) - yf.at(r, t);
        col += d * d;
      }
      unweighted += col;
      weighted += (g[s] ? g[s]->diag[t] : 1.0) * col;
    }
  }
  return {weighted, unweighted};
}

Matrix gated_product(const Matrix &up_w, const Matrix &gate_w, const Matrix &xn) {
  const Matrix up = multiply(up_w, xn);
  const Matrix gate = multiply(gate_w, xn);
  Matrix out(up.rows(), up.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double gv = gate.data()[i];
    out.data()[i] = gv / (1.0 + std::exp(-gv)) * up.data()[i];
  }
  return out;
}

QuantizedLayerResult passthrough_result(const Matrix &w) {
  QuantizedLayerResult res;
  res.w_hat = w;
  res.perm.resize(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    res.perm[j] = static_cast<std::uint32_t>(j);
  }
  res.group_size = -1;
  res.row_sq_error_weighted.assign(w.rows(), 0.0);
  res.row_sq_error_unweighted.assign(w.rows(), 0.0);
  return res;
}

ImportanceSummary summarize_importance(const std::vector<const ImportanceFactors *> &g,
                                       const std::vector<const CalibrationSample *> &samples) {
  ImportanceSummary sum;
  double total = 0.0, text = 0.0, vision = 0.0;
  std::size_t n = 0, n_text = 0, n_vision = 0;
  sum.min = 1e300;
  sum.max = -1e300;
  for (std::size_t s = 0; s < g.size(); ++s) {
    const std::vector<double> unit(samples[s]->num_tokens(), 1.0);
    const std::vector<double> &diag = g[s] ? g[s]->diag : unit;
    for (std::size_t t = 0; t < diag.size(); ++t) {
      const double v = diag[t];
      sum.min = std::min(sum.min, v);
      sum.max = std::max(sum.max, v);
      total += v;
      ++n;
      if (modality_of(samples[s]->roles[t]) == Modality::Text) {
        text += v;
        ++n_text;
      } else {
        vision += v;
        ++n_vision;
      }
    }
  }
  sum.mean = n ? total / static_cast<double>(n) : 0.0;
  sum.text_mean = n_text ? text / static_cast<double>(n_text) : 0.0;
  sum.vision_mean = n_vision ? vision / static_cast<double>(n_vision) : 0.0;
  if (n == 0) {
    sum.min = sum.max = 0.0;
  }
  return sum;
}

class StageClock {
public:
  explicit StageClock(bool enabled) : enabled_(enabled) {}

  void start() {
    if (enabled_) {
      t0_ = std::chrono::steady_clock::now();
    }
  }

  void stop(const std::string &stage) {
    if (!enabled_) {
      return;
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    buckets_[stage] += sec;
  }

  std::vector<StageTiming> timings() const {
    std::vector<StageTiming> out;
    for (const auto &[stage, sec] : buckets_) {
      out.push_back({stage, sec});
    }
    return out;
  }

private:
  bool enabled_;
  std::chrono::steady_clock::time_point t0_;
  std::map<std::string, double> buckets_;
};

} // namespace

QuantizeOutput quantize_model(const std::vector<LayerWeights> &model, const ModelSpec &spec,
                              const CalibrationBatch &batch, const PipelineConfig &cfg,
                              bool collect_timings) {
  spec.validate();
  cfg.validate();
  if (model.size() != spec.num_layers) {
    throw ShapeMismatch("model layer count");
  }
  if (batch.d_model != spec.d_model || batch.samples.empty()) {
    throw ShapeMismatch("calibration batch incompatible with model");
  }

  const std::size_t num_samples = batch.samples.size();
  const Method method = cfg.solve.method;
  const Precursor precursor = cfg.solve.precursor;
  const bool base_residual =
    method == Method::GPTAQ || (method == Method::VLMQ && precursor == Precursor::GPTAQ);

  std::vector<Matrix> x_fp, x_hat;
  x_fp.reserve(num_samples);
  for (const auto &s : batch.samples) {
    x_fp.push_back(s.embeddings);
    x_hat.push_back(s.embeddings);
  }

  QuantizedModel qm;
  qm.spec = spec;
  qm.layers.resize(spec.num_layers);
  Report report;
  report.config_json = config_to_json_obj(cfg).dump();
  report.layers.resize(spec.num_layers);
  StageClock clock(collect_timings);

  auto wrap_layer_errors = [](std::size_t layer, const char *linear, auto &&fn) {
    try {
      return fn();
    } catch (const Error &e) {
      throw Error(e.kind(), "layer " + std::to_string(layer) + " " + linear + ": " + e.what());
    }
  };

  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    const LayerWeights &w = model[l];
    LayerWeights wq = w;
    LayerReportEntry &lrep = report.layers[l];

    // one block-wise backward per layer, before any linear is quantized
    std::vector<ImportanceFactors> g_store[4];
    bool have_importance = false;
    if (method == Method::VLMQ && !cfg.passthrough && cfg.bias_layers.any()) {
      clock.start();
      for (int p = 0; p < 4; ++p) {
        g_store[p].resize(num_samples);
      }
      for (std::size_t s = 0; s < num_samples; ++s) {
        if (cfg.importance_source == ImportanceSource::Gradient) {
          const ProjectionGradients grads = block_backward(x_fp[s], x_hat[s], w, spec);
          g_store[0][s] = gradients_to_importance(grads.q, cfg.importance_norm);
          g_store[1][s] = gradients_to_importance(grads.k, cfg.importance_norm);
          g_store[2][s] = gradients_to_importance(grads.v, cfg.importance_norm);
          g_store[3][s] = gradients_to_importance(grads.o, cfg.importance_norm);
        } else {
          const ImportanceFactors m =
            manual_importance(batch.samples[s].roles, cfg.manual_li_ratio, cfg.manual_li_value,
                              mix_seed(cfg.seed, 4096 + l * num_samples + s));
          g_store[0][s] = m;
          g_store[1][s] = m;
          g_store[2][s] = m;
          g_store[3][s] = m;
        }
      }
      have_importance = true;
      clock.stop("backward");
    }

    auto projection_g = [&](int proj, bool biased) {
      std::vector<const ImportanceFactors *> g(num_samples, nullptr);
      if (biased && have_importance) {
        for (std::size_t s = 0; s < num_samples; ++s) {
          g[s] = &g_store[proj][s];
        }
      }
      return g;
    };

    // stage 1: shared q/k/v input on both branches
    clock.start();
    std::vector<Matrix> qkv_in_fp(num_samples), qkv_in_hat(num_samples);
    std::vector<Matrix> o_in_fp(num_samples), attn_out_fp(num_samples);
    for (std::size_t s = 0; s < num_samples; ++s) {
      ForwardResult fp = attn_forward(x_fp[s], w, spec, /*capture=*/true);
      qkv_in_fp[s] = std::move(fp.trace.qkv_input);
      o_in_fp[s] = std::move(fp.trace.o_input);
      attn_out_fp[s] = std::move(fp.out);
      ForwardResult qh = attn_forward(x_hat[s], wq, spec, /*capture=*/true);
      qkv_in_hat[s] = std::move(qh.trace.qkv_input);
    }
    clock.stop("forward");

    struct LinearPlan {
      const char *name;
      int proj; // index into g_store, -1 for ffn linears
      const Matrix *weight;
      Matrix *target;
    };

    auto solve_linear = [&](const LinearPlan &plan, const std::vector<Matrix> &in_hat,
                            const std::vector<Matrix> &in_fp) {
      const bool biased =
        method == Method::VLMQ && plan.proj >= 0 &&
        ((plan.proj == 0 && cfg.bias_layers.q) || (plan.proj == 1 && cfg.bias_layers.k) ||
         (plan.proj == 2 && cfg.bias_layers.v) || (plan.proj == 3 && cfg.bias_layers.o));
      const std::vector<const ImportanceFactors *> g = projection_g(plan.proj, biased);

      QuantizedLayerResult result;
      if (cfg.passthrough) {
        result = passthrough_result(*plan.weight);
      } else {
        clock.start();
        HessianState state;
        for (std::size_t s = 0; s < num_samples; ++s) {
          state = accumulate_hessian(std::move(state), in_hat[s],
                                     base_residual ? &in_fp[s] : nullptr, g[s]);
        }
        clock.stop("hessian");
        clock.start();
        result = wrap_layer_errors(l, plan.name, [&] {
          if (method == Method::GPTQ) {
            return quantize_layer_gptq(*plan.weight, state, cfg.solve);
          }
          if (method == Method::GPTAQ) {
            return quantize_layer_gptaq(*plan.weight, state, cfg.solve);
          }
          if (biased) {
            return quantize_layer_vlmq(*plan.weight, state, cfg.solve);
          }
          return precursor == Precursor::GPTAQ ? quantize_layer_gptaq(*plan.weight, state,
                                                                      cfg.solve)
                                               : quantize_layer_gptq(*plan.weight, state,
                                                                     cfg.solve);
        });
        clock.stop("solve");
      }

      LinearReport lin;
      const auto [we, ue] = linear_errors(result.w_hat, *plan.weight, in_hat, in_fp, g);
      lin.weighted_sq_error = we;
      lin.unweighted_sq_error = ue;
      for (double e : result.row_sq_error_weighted) {
        lin.row_weighted_sum += e;
      }
      for (double e : result.row_sq_error_unweighted) {
        lin.row_unweighted_sum += e;
      }
      lrep.linears[plan.name] = lin;

      *plan.target = result.w_hat;
      qm.layers[l][plan.name] = std::move(result);
    };

    // quantize q, k, v from the shared captured input
    solve_linear({"q", 0, &w.q, &wq.q}, qkv_in_hat, qkv_in_fp);
    solve_linear({"k", 1, &w.k, &wq.k}, qkv_in_hat, qkv_in_fp);
    solve_linear({"v", 2, &w.v, &wq.v}, qkv_in_hat, qkv_in_fp);

    // stage 2: re-forward attention with quantized q/k/v to capture o's input
    clock.start();
    std::vector<Matrix> o_in_hat(num_samples);
    for (std::size_t s = 0; s < num_samples; ++s) {
      o_in_hat[s] = attn_forward(x_hat[s], wq, spec, /*capture=*/true).trace.o_input;
    }
    clock.stop("forward");
    solve_linear({"o", 3, &w.o, &wq.o}, o_in_hat, o_in_fp);

    // attention-stream outputs with the fully quantized attention
    clock.start();
    std::vector<Matrix> attn_out_hat(num_samples);
    double block_loss_value = 0.0;
    for (std::size_t s = 0; s < num_samples; ++s) {
      attn_out_hat[s] = attn_forward(x_hat[s], wq, spec).out;
      block_loss_value += sq_diff_sum(attn_out_fp[s], attn_out_hat[s]);
    }
    lrep.block_loss = block_loss_value;
    report.block_loss_sum += block_loss_value;

    // ffn stage: shared up/gate input, then the gated product for down
    std::vector<Matrix> upgate_in_fp(num_samples), upgate_in_hat(num_samples);
    std::vector<Matrix> down_in_fp(num_samples);
    for (std::size_t s = 0; s < num_samples; ++s) {
      upgate_in_fp[s] = rms_norm(attn_out_fp[s], w.ffn_norm, spec.norm_eps);
      upgate_in_hat[s] = rms_norm(attn_out_hat[s], wq.ffn_norm, spec.norm_eps);
      down_in_fp[s] = gated_product(w.up, w.gate, upgate_in_fp[s]);
    }
    clock.stop("forward");

    solve_linear({"up", -1, &w.up, &wq.up}, upgate_in_hat, upgate_in_fp);
    solve_linear({"gate", -1, &w.gate, &wq.gate}, upgate_in_hat, upgate_in_fp);

    clock.start();
    std::vector<Matrix> down_in_hat(num_samples);
    for (std::size_t s = 0; s < num_samples; ++s) {
      down_in_hat[s] = gated_product(wq.up, wq.gate, upgate_in_hat[s]);
    }
    clock.stop("forward");
    solve_linear({"down", -1, &w.down, &wq.down}, down_in_hat, down_in_fp);

    // importance summaries and the PCA point set for this layer
    std::vector<const CalibrationSample *> sample_ptrs;
    for (const auto &s : batch.samples) {
      sample_ptrs.push_back(&s);
    }
    const char *proj_names[4] = {"q", "k", "v", "o"};
    for (int p = 0; p < 4; ++p) {
      std::vector<const ImportanceFactors *> g(num_samples, nullptr);
      if (have_importance) {
        for (std::size_t s = 0; s < num_samples; ++s) {
          g[s] = &g_store[p][s];
        }
      }
      lrep.importance[proj_names[p]] = summarize_importance(g, sample_ptrs);
    }

    {
      clock.start();
      HessianState pca_state;
      std::size_t total_tokens = 0;
      for (std::size_t s = 0; s < num_samples; ++s) {
        pca_state = accumulate_hessian(std::move(pca_state), qkv_in_hat[s]);
        total_tokens += batch.samples[s].num_tokens();
      }
      Matrix acts(spec.d_model, total_tokens);
      std::vector<TokenRole> roles;
      ImportanceFactors mean_g;
      roles.reserve(total_tokens);
      mean_g.diag.reserve(total_tokens);
      std::size_t col = 0;
      for (std::size_t s = 0; s < num_samples; ++s) {
        const std::size_t n = batch.samples[s].num_tokens();
        for (std::size_t t = 0; t < n; ++t, ++col) {
          for (std::size_t r = 0; r < spec.d_model; ++r) {
            acts.at(r, col) = qkv_in_hat[s].at(r, t);
          }
          roles.push_back(batch.samples[s].roles[t]);
          double imp = 1.0;
          if (have_importance) {
            imp = 0.25 * (g_store[0][s].diag[t] + g_store[1][s].diag[t] + g_store[2][s].diag[t] +
                          g_store[3][s].diag[t]);
          }
          mean_g.diag.push_back(imp);
        }
      }
      lrep.pca = hessian_pca_export(pca_state, acts, roles, mean_g, mix_seed(cfg.seed, 7000 + l));
      clock.stop("report");
    }

    qm.attn_norms.push_back(w.attn_norm);
    qm.ffn_norms.push_back(w.ffn_norm);

    // propagate both branches
    clock.start();
    for (std::size_t s = 0; s < num_samples; ++s) {
      x_fp[s] = mlp_forward(attn_out_fp[s], w, spec).out;
      x_hat[s] = mlp_forward(attn_out_hat[s], wq, spec).out;
    }
    clock.stop("forward");
  }

  double diff = 0.0, ref = 0.0;
  std::size_t entries = 0;
  for (std::size_t s = 0; s < num_samples; ++s) {
    diff += sq_diff_sum(x_fp[s], x_hat[s]);
    for (double v : x_fp[s].data()) {
      ref += v * v;
    }
    entries += x_fp[s].size();
  }
  report.final_mse = entries ? diff / static_cast<double>(entries) : 0.0;
  report.final_relative_error = ref > 0.0 ? std::sqrt(diff / ref) : 0.0;
  report.timings = clock.timings();

  QuantizeOutput out;
  out.model = std::move(qm);
  out.report = std::move(report);
  return out;
}

std::vector<LayerWeights> to_weights(const QuantizedModel &qm) {
  std::vector<LayerWeights> layers;
  layers.reserve(qm.layers.size());
  for (std::size_t l = 0; l < qm.layers.size(); ++l) {
    LayerWeights w;
    w.q = qm.layers[l].at("q").w_hat;
    w.k = qm.layers[l].at("k").w_hat;
    w.v = qm.layers[l].at("v").w_hat;
    w.o = qm.layers[l].at("o").w_hat;
    w.up = qm.layers[l].at("up").w_hat;
    w.gate = qm.layers[l].at("gate").w_hat;
    w.down = qm.layers[l].at("down").w_hat;
    w.attn_norm = qm.attn_norms[l];
    w.ffn_norm = qm.ffn_norms[l];
    w.validate(qm.spec);
    layers.push_back(std::move(w));
  }
  return layers;
}

EvalReport eval_reconstruction(const std::vector<LayerWeights> &model_fp,
                               const std::vector<LayerWeights> &model_q, const ModelSpec &spec,
                               const CalibrationBatch &batch) {
  spec.validate();
  if (model_fp.size() != spec.num_layers || model_q.size() != spec.num_layers) {
    throw ShapeMismatch("eval layer counts");
  }
  if (batch.d_model != spec.d_model || batch.samples.empty()) {
    throw ShapeMismatch("eval batch incompatible with model");
  }

  const std::size_t num_samples = batch.samples.size();
  std::vector<Matrix> x_fp, x_hat;
  for (const auto &s : batch.samples) {
    x_fp.push_back(s.embeddings);
    x_hat.push_back(s.embeddings);
  }

  EvalReport report;
  report.layers.resize(spec.num_layers);

  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    const LayerWeights &wf = model_fp[l];
    const LayerWeights &wq = model_q[l];
    EvalLayerReport &lrep = report.layers[l];

    auto add_linear = [&](const char *name, const Matrix &w_hat, const Matrix &w,
                          const Matrix &in_hat, const Matrix &in_fp) {
      lrep.linears[name].sq_error +=
        sq_diff_sum(multiply(w_hat, in_hat), multiply(w, in_fp));
    };

    for (std::size_t s = 0; s < num_samples; ++s) {
      ForwardResult fp = attn_forward(x_fp[s], wf, spec, /*capture=*/true);
      ForwardResult qh = attn_forward(x_hat[s], wq, spec, /*capture=*/true);
      lrep.block_loss += sq_diff_sum(fp.out, qh.out);

      add_linear("q", wq.q, wf.q, qh.trace.qkv_input, fp.trace.qkv_input);
      add_linear("k", wq.k, wf.k, qh.trace.qkv_input, fp.trace.qkv_input);
      add_linear("v", wq.v, wf.v, qh.trace.qkv_input, fp.trace.qkv_input);
      add_linear("o", wq.o, wf.o, qh.trace.o_input, fp.trace.o_input);

      const Matrix up_in_fp = rms_norm(fp.out, wf.ffn_norm, spec.norm_eps);
      const Matrix up_in_hat = rms_norm(qh.out, wq.ffn_norm, spec.norm_eps);
      add_linear("up", wq.up, wf.up, up_in_hat, up_in_fp);
      add_linear("gate", wq.gate, wf.gate, up_in_hat, up_in_fp);

      const Matrix down_in_fp = gated_product(wf.up, wf.gate, up_in_fp);
      const Matrix down_in_hat = gated_product(wq.up, wq.gate, up_in_hat);
      add_linear("down", wq.down, wf.down, down_in_hat, down_in_fp);

      x_fp[s] = mlp_forward(fp.out, wf, spec).out;
      x_hat[s] = mlp_forward(qh.out, wq, spec).out;
    }
    report.block_loss_sum += lrep.block_loss;
  }

  double diff = 0.0, ref = 0.0;
  std::size_t entries = 0;
  for (std::size_t s = 0; s < num_samples; ++s) {
    diff += sq_diff_sum(x_fp[s], x_hat[s]);
    for (double v : x_fp[s].data()) {
      ref += v * v;
    }
    entries += x_fp[s].size();
  }
  report.final_mse = entries ? diff / static_cast<double>(entries) : 0.0;
  report.final_relative_error = ref > 0.0 ? std::sqrt(diff / ref) : 0.0;
  return report;
}

namespace {

json spec_meta(const ModelSpec &spec) {
  json j;
  j["num_layers"] = spec.num_layers;
  j["d_model"] = spec.d_model;
  j["num_heads"] = spec.num_heads;
  j["head_dim"] = spec.head_dim;
  j["d_ff"] = spec.d_ff;
  j["norm_eps"] = spec.norm_eps;
  j["rope"] = spec.rope_enabled;
  j["seed"] = spec.seed;
  return j;
}

} // namespace

void write_quantized_model(const std::filesystem::path &dir, const QuantizedModel &qm,
                           const std::string &config_json) {
  ContainerWriter w;
  json meta;
  meta["kind"] = "quantized_model";
  meta["spec"] = spec_meta(qm.spec);
  meta["config"] = json::parse(config_json, nullptr, false).is_discarded()
                     ? json::object()
                     : json::parse(config_json);
  w.set_meta_json(meta.dump());

  for (std::size_t l = 0; l < qm.layers.size(); ++l) {
    for (const char *name : kLinearNames) {
      const QuantizedLayerResult &res = qm.layers[l].at(name);
      const std::string base = "layers." + std::to_string(l) + "." + name;
      w.add_f64(base + ".weight", {res.w_hat.rows(), res.w_hat.cols()}, res.w_hat.data());
      if (!res.codes.empty()) {
        std::vector<std::uint8_t> codes;
        codes.reserve(res.w_hat.size());
        for (const auto &row : res.codes) {
          codes.insert(codes.end(), row.begin(), row.end());
        }
        w.add_u8(base + ".codes", {res.w_hat.rows(), res.w_hat.cols()}, codes);

        const std::size_t groups = res.params.front().size();
        std::vector<double> scales;
        std::vector<std::int32_t> zeros;
        scales.reserve(res.params.size() * groups);
        zeros.reserve(res.params.size() * groups);
        for (const auto &row : res.params) {
          for (const QuantParams &p : row) {
            scales.push_back(p.scale);
            zeros.push_back(p.zero_point);
          }
        }
        w.add_f64(base + ".scales", {res.params.size(), groups}, scales);
        w.add_i32(base + ".zeros", {res.params.size(), groups}, zeros);

        std::vector<std::int32_t> perm(res.perm.begin(), res.perm.end());
        w.add_i32(base + ".perm", {perm.size()}, perm);
      }
    }
    w.add_f64("layers." + std::to_string(l) + ".attn_norm", {qm.attn_norms[l].size()},
              qm.attn_norms[l]);
    w.add_f64("layers." + std::to_string(l) + ".ffn_norm", {qm.ffn_norms[l].size()},
              qm.ffn_norms[l]);
  }
  w.write(dir);
}

QuantizedModel read_quantized_model(const std::filesystem::path &dir) {
  ContainerReader r(dir);
  const json meta = json::parse(r.meta_json());
  if (meta.value("kind", "") != "quantized_model") {
    throw IoError("container at " + dir.string() + " is not a quantized model");
  }
  QuantizedModel qm;
  const json &sj = meta.at("spec");
  qm.spec.num_layers = sj.at("num_layers").get<std::size_t>();
  qm.spec.d_model = sj.at("d_model").get<std::size_t>();
  qm.spec.num_heads = sj.at("num_heads").get<std::size_t>();
  qm.spec.head_dim = sj.at("head_dim").get<std::size_t>();
  qm.spec.d_ff = sj.at("d_ff").get<std::size_t>();
  qm.spec.norm_eps = sj.at("norm_eps").get<double>();
  qm.spec.rope_enabled = sj.at("rope").get<bool>();
  qm.spec.seed = sj.at("seed").get<std::uint64_t>();
  qm.spec.validate();

  const int bits = meta.contains("config") && meta["config"].contains("bits")
                     ? meta["config"]["bits"].get<int>()
                     : 8;

  qm.layers.resize(qm.spec.num_layers);
  for (std::size_t l = 0; l < qm.spec.num_layers; ++l) {
    for (const char *name : kLinearNames) {
      const std::string base = "layers." + std::to_string(l) + "." + name;
      QuantizedLayerResult res;
      res.w_hat = r.read_matrix(base + ".weight");
      if (r.has(base + ".codes")) {
        const auto codes = r.read_u8(base + ".codes");
        const std::size_t rows = res.w_hat.rows();
        const std::size_t cols = res.w_hat.cols();
        res.codes.assign(rows, std::vector<std::uint8_t>(cols));
        for (std::size_t i = 0; i < rows; ++i) {
          std::copy(codes.begin() + static_cast<long>(i * cols),
                    codes.begin() + static_cast<long>((i + 1) * cols), res.codes[i].begin());
        }
        const auto scales = r.read_f64(base + ".scales");
        const auto zeros = r.read_i32(base + ".zeros");
        const std::size_t groups = r.entry(base + ".scales").shape[1];
        res.params.assign(rows, std::vector<QuantParams>(groups));
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t g = 0; g < groups; ++g) {
            res.params[i][g] = {scales[i * groups + g], zeros[i * groups + g], bits};
          }
        }
        const auto perm = r.read_i32(base + ".perm");
        res.perm.assign(perm.begin(), perm.end());
        res.group_size = static_cast<int>((cols + groups - 1) / groups);
      }
      qm.layers[l][name] = std::move(res);
    }
    qm.attn_norms.push_back(r.read_f64("layers." + std::to_string(l) + ".attn_norm"));
    qm.ffn_norms.push_back(r.read_f64("layers." + std::to_string(l) + ".ffn_norm"));
  }
  return qm;
}

namespace {

json importance_to_json(const ImportanceSummary &s) {
  json j;
  j["min"] = s.min;
  j["mean"] = s.mean;
  j["max"] = s.max;
  j["text_mean"] = s.text_mean;
  j["vision_mean"] = s.vision_mean;
  return j;
}

} // namespace

std::string report_to_json(const Report &report) {
  json j;
  j["config"] = json::parse(report.config_json);
  json layers = json::array();
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const LayerReportEntry &e = report.layers[l];
    json lj;
    lj["layer"] = l;
    lj["block_loss"] = e.block_loss;
    json linears;
    for (const char *name : kLinearNames) {
      const auto it = e.linears.find(name);
      if (it == e.linears.end()) {
        continue;
      }
      json v;
      v["weighted_sq_error"] = it->second.weighted_sq_error;
      v["unweighted_sq_error"] = it->second.unweighted_sq_error;
      v["row_weighted_sum"] = it->second.row_weighted_sum;
      v["row_unweighted_sum"] = it->second.row_unweighted_sum;
      linears[name] = std::move(v);
    }
    lj["linears"] = std::move(linears);
    json imp;
    for (const auto &[name, summary] : e.importance) {
      imp[name] = importance_to_json(summary);
    }
    lj["importance"] = std::move(imp);
    json pca = json::array();
    for (const PcaPoint &p : e.pca) {
      pca.push_back(json::array(
        {p.pc1, p.pc2, p.modality == Modality::Text ? "text" : "vision", p.importance}));
    }
    lj["pca"] = std::move(pca);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  json totals;
  totals["block_loss_sum"] = report.block_loss_sum;
  totals["final_mse"] = report.final_mse;
  totals["final_relative_error"] = report.final_relative_error;
  j["totals"] = std::move(totals);
  if (!report.timings.empty()) {
    json t;
    for (const StageTiming &st : report.timings) {
      t[st.stage] = st.seconds;
    }
    j["timings"] = std::move(t);
  }
  return j.dump(2) + "\n";
}

std::string eval_report_to_json(const EvalReport &report, const std::string &config_json) {
  json j;
  const json cfg = json::parse(config_json, nullptr, false);
  j["config"] = cfg.is_discarded() ? json::object() : cfg;
  json layers = json::array();
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    json lj;
    lj["layer"] = l;
    lj["block_loss"] = report.layers[l].block_loss;
    json linears;
    for (const char *name : kLinearNames) {
      const auto it = report.layers[l].linears.find(name);
      if (it != report.layers[l].linears.end()) {
        linears[name] = json{{"sq_error", it->second.sq_error}};
      }
    }
    lj["linears"] = std::move(linears);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  json totals;
  totals["block_loss_sum"] = report.block_loss_sum;
  totals["final_mse"] = report.final_mse;
  totals["final_relative_error"] = report.final_relative_error;
  j["totals"] = std::move(totals);
  return j.dump(2) + "\n";
}

void write_text_file(const std::filesystem::path &path, const std::string &text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << text;
}

} // namespace vlmq
