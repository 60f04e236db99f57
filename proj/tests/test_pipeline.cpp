// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "vlmq/container.hpp"
#include "vlmq/errors.hpp"
#include "vlmq/linalg.hpp"
#include "vlmq/pipeline.hpp"

using namespace vlmq;
namespace fs = std::filesystem;

namespace {

ModelSpec toy_spec(std::uint64_t seed) {
  ModelSpec spec;
  spec.num_layers = 2;
  spec.d_model = 16;
  spec.num_heads = 2;
  spec.head_dim = 8;
  spec.d_ff = 32;
  spec.seed = seed;
  return spec;
}

PipelineConfig base_cfg(Method method) {
  PipelineConfig cfg;
  cfg.solve.method = method;
  cfg.solve.precursor = Precursor::GPTAQ;
  cfg.solve.bits = 3;
  cfg.solve.act_order = true;
  cfg.solve.damp = 0.01;
  cfg.seed = 5;
  return cfg;
}

bool models_bitwise_equal(const QuantizedModel &a, const QuantizedModel &b) {
  if (a.layers.size() != b.layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (const char *name : kLinearNames) {
      const auto &ra = a.layers[l].at(name);
      const auto &rb = b.layers[l].at(name);
      if (!bitwise_equal(ra.w_hat, rb.w_hat) || ra.codes != rb.codes || ra.perm != rb.perm) {
        return false;
      }
    }
  }
  return true;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string &tag) {
    path = fs::temp_directory_path() / ("vlmq_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("passthrough keeps both branches identical and importance flat") {
  const ModelSpec spec = toy_spec(1);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 2, 8, 16, 0.5, 2);
  PipelineConfig cfg = base_cfg(Method::VLMQ);
  cfg.passthrough = true;
  const QuantizeOutput out = quantize_model(model, spec, batch, cfg);
  CHECK(out.report.block_loss_sum == 0.0);
  CHECK(out.report.final_mse == 0.0);
  for (const auto &layer : out.report.layers) {
    for (const char *name : kLinearNames) {
      CHECK(layer.linears.at(name).unweighted_sq_error == 0.0);
    }
  }
  const auto weights = to_weights(out.model);
  CHECK(bitwise_equal(weights[0].q, model[0].q));
}

TEST_CASE("vlmq with flat manual importance reproduces gptaq bit for bit") {
  const ModelSpec spec = toy_spec(3);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 3, 8, 24, 0.8, 4);

  PipelineConfig vlmq_cfg = base_cfg(Method::VLMQ);
  vlmq_cfg.importance_source = ImportanceSource::Manual;
  vlmq_cfg.manual_li_ratio = 0.0;
  vlmq_cfg.manual_li_value = 1.0;
  const QuantizeOutput a = quantize_model(model, spec, batch, vlmq_cfg);

  const QuantizeOutput b = quantize_model(model, spec, batch, base_cfg(Method::GPTAQ));
  CHECK(models_bitwise_equal(a.model, b.model));
}

TEST_CASE("vlmq with gptq precursor and flat importance reproduces gptq") {
  const ModelSpec spec = toy_spec(5);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 2, 8, 24, 0.8, 6);

  PipelineConfig vlmq_cfg = base_cfg(Method::VLMQ);
  vlmq_cfg.solve.precursor = Precursor::GPTQ;
  vlmq_cfg.importance_source = ImportanceSource::Manual;
  vlmq_cfg.manual_li_ratio = 0.0;
  const QuantizeOutput a = quantize_model(model, spec, batch, vlmq_cfg);

  PipelineConfig gptq_cfg = base_cfg(Method::GPTQ);
  const QuantizeOutput b = quantize_model(model, spec, batch, gptq_cfg);
  CHECK(models_bitwise_equal(a.model, b.model));
}

TEST_CASE("empty bias set degenerates vlmq to its precursor") {
  const ModelSpec spec = toy_spec(7);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 2, 8, 24, 0.9, 8);

  PipelineConfig vlmq_cfg = base_cfg(Method::VLMQ);
  vlmq_cfg.bias_layers = BiasLayers::none();
  const QuantizeOutput a = quantize_model(model, spec, batch, vlmq_cfg);
  const QuantizeOutput b = quantize_model(model, spec, batch, base_cfg(Method::GPTAQ));
  CHECK(models_bitwise_equal(a.model, b.model));
}

TEST_CASE("quantize_model is deterministic") {
  const ModelSpec spec = toy_spec(9);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 2, 8, 24, 0.7, 10);
  const PipelineConfig cfg = base_cfg(Method::VLMQ);
  const QuantizeOutput a = quantize_model(model, spec, batch, cfg);
  const QuantizeOutput b = quantize_model(model, spec, batch, cfg);
  CHECK(models_bitwise_equal(a.model, b.model));
  CHECK(report_to_json(a.report) == report_to_json(b.report));
}

TEST_CASE("eval on an unquantized copy reports all zeros") {
  const ModelSpec spec = toy_spec(11);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 2, 6, 12, 0.4, 12);
  const EvalReport rep = eval_reconstruction(model, model, spec, batch);
  CHECK(rep.block_loss_sum == 0.0);
  CHECK(rep.final_mse == 0.0);
  for (const auto &layer : rep.layers) {
    for (const char *name : kLinearNames) {
      CHECK(layer.linears.at(name).sq_error == 0.0);
    }
  }
}

TEST_CASE("quantize-time metrics match eval recomputation") {
  const ModelSpec spec = toy_spec(13);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 2, 8, 20, 0.6, 14);
  const QuantizeOutput out = quantize_model(model, spec, batch, base_cfg(Method::VLMQ));
  const EvalReport rep = eval_reconstruction(model, to_weights(out.model), spec, batch);
  CHECK(rep.block_loss_sum ==
        doctest::Approx(out.report.block_loss_sum).epsilon(1e-10));
  for (std::size_t l = 0; l < rep.layers.size(); ++l) {
    CHECK(rep.layers[l].block_loss ==
          doctest::Approx(out.report.layers[l].block_loss).epsilon(1e-10));
    for (const char *name : kLinearNames) {
      CHECK(rep.layers[l].linears.at(name).sq_error ==
            doctest::Approx(out.report.layers[l].linears.at(name).unweighted_sq_error)
              .epsilon(1e-9));
    }
  }
}

TEST_CASE("solver errors carry the layer and linear location") {
  const ModelSpec spec = toy_spec(15);
  const auto model = generate_model(spec);
  // two samples of two tokens each: rank-4 Hessian in dim 16, and a damp so
  // small the lift vanishes against the elimination residue
  const CalibrationBatch batch = generate_batch(16, 2, 2, 0, 0.0, 16);
  PipelineConfig cfg = base_cfg(Method::GPTQ);
  cfg.solve.damp = 1e-300;
  try {
    quantize_model(model, spec, batch, cfg);
    FAIL("expected NotPositiveDefinite");
  } catch (const Error &e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    CHECK(e.kind() == ErrorKind::Numerical);
  }
}

TEST_CASE("importance summaries separate text and vision means") {
  const ModelSpec spec = toy_spec(17);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 2, 8, 32, 0.9, 18);
  PipelineConfig cfg = base_cfg(Method::VLMQ);
  cfg.importance_source = ImportanceSource::Manual;
  cfg.manual_li_ratio = 1.0;
  cfg.manual_li_value = 0.01;
  const QuantizeOutput out = quantize_model(model, spec, batch, cfg);
  const ImportanceSummary &s = out.report.layers[0].importance.at("q");
  CHECK(s.vision_mean == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(s.text_mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.min == 0.01);
  CHECK(s.max == 1.0);
}

TEST_CASE("gradient importance down-weights redundant vision tokens") {
  const ModelSpec spec = toy_spec(2);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 4, 12, 48, 0.95, 200);
  PipelineConfig cfg = base_cfg(Method::VLMQ);
  cfg.seed = 2;
  const QuantizeOutput out = quantize_model(model, spec, batch, cfg);

  // layer 0 sees identical branches, so its factors are uniform
  for (const char *p : {"q", "k", "v", "o"}) {
    const ImportanceSummary &s0 = out.report.layers[0].importance.at(p);
    CHECK(s0.min == 1.0);
    CHECK(s0.max == 1.0);
  }
  // from layer 1 on, near-duplicate vision tokens carry smaller gradients
  for (const char *p : {"q", "k", "v", "o"}) {
    const ImportanceSummary &s1 = out.report.layers[1].importance.at(p);
    CHECK(s1.text_mean > s1.vision_mean);
  }
}

TEST_CASE("worker count does not change the quantized model") {
  const ModelSpec spec = toy_spec(29);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 2, 8, 24, 0.7, 30);
  const PipelineConfig cfg = base_cfg(Method::VLMQ);

  setenv("VLMQ_THREADS", "1", 1);
  const QuantizeOutput serial = quantize_model(model, spec, batch, cfg);
  setenv("VLMQ_THREADS", "8", 1);
  const QuantizeOutput parallel = quantize_model(model, spec, batch, cfg);
  unsetenv("VLMQ_THREADS");

  CHECK(models_bitwise_equal(serial.model, parallel.model));
  CHECK(report_to_json(serial.report) == report_to_json(parallel.report));
}

TEST_CASE("pca point sets cover every token in the batch") {
  const ModelSpec spec = toy_spec(19);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 3, 6, 18, 0.5, 20);
  const QuantizeOutput out = quantize_model(model, spec, batch, base_cfg(Method::VLMQ));
  for (const auto &layer : out.report.layers) {
    CHECK(layer.pca.size() == batch.total_tokens());
  }
}

TEST_CASE("tensor containers round-trip bit-exactly") {
  const TempDir dir("container");
  const ModelSpec spec = toy_spec(21);
  const auto model = generate_model(spec);
  write_model(dir.path / "m", spec, model);
  const auto [spec2, model2] = read_model(dir.path / "m");
  CHECK(spec2.d_model == spec.d_model);
  CHECK(spec2.seed == spec.seed);
  for (std::size_t l = 0; l < model.size(); ++l) {
    CHECK(bitwise_equal(model[l].q, model2[l].q));
    CHECK(bitwise_equal(model[l].down, model2[l].down));
    CHECK(model[l].attn_norm == model2[l].attn_norm);
  }

  const CalibrationBatch batch = generate_batch(16, 2, 6, 10, 0.3, 22);
  write_batch(dir.path / "b", batch);
  const CalibrationBatch batch2 = read_batch(dir.path / "b");
  CHECK(batch2.samples.size() == batch.samples.size());
  for (std::size_t s = 0; s < batch.samples.size(); ++s) {
    CHECK(bitwise_equal(batch.samples[s].embeddings, batch2.samples[s].embeddings));
    CHECK(batch.samples[s].roles == batch2.samples[s].roles);
  }
}

TEST_CASE("model container writes are byte-identical across runs") {
  const TempDir dir("deterministic");
  const ModelSpec spec = toy_spec(23);
  const auto model = generate_model(spec);
  write_model(dir.path / "a", spec, model);
  write_model(dir.path / "b", spec, model);
  CHECK(slurp(dir.path / "a" / "manifest.json") == slurp(dir.path / "b" / "manifest.json"));
  CHECK(slurp(dir.path / "a" / "data.bin") == slurp(dir.path / "b" / "data.bin"));
}

TEST_CASE("quantized model containers carry codes, params and perm") {
  const TempDir dir("qmodel");
  const ModelSpec spec = toy_spec(25);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 2, 6, 14, 0.5, 26);
  const QuantizeOutput out = quantize_model(model, spec, batch, base_cfg(Method::VLMQ));
  write_quantized_model(dir.path / "q", out.model, out.report.config_json);
  const QuantizedModel back = read_quantized_model(dir.path / "q");
  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    for (const char *name : kLinearNames) {
      const auto &a = out.model.layers[l].at(name);
      const auto &b = back.layers[l].at(name);
      CHECK(bitwise_equal(a.w_hat, b.w_hat));
      CHECK(a.codes == b.codes);
      CHECK(a.perm == b.perm);
      for (std::size_t r = 0; r < a.params.size(); ++r) {
        for (std::size_t g = 0; g < a.params[r].size(); ++g) {
          CHECK(a.params[r][g].scale == b.params[r][g].scale);
          CHECK(a.params[r][g].zero_point == b.params[r][g].zero_point);
        }
      }
    }
  }
}

TEST_CASE("container reader rejects corrupt input") {
  const TempDir dir("bad");
  fs::create_directories(dir.path / "c");
  std::ofstream(dir.path / "c" / "manifest.json") << "{\"version\": \"other/9\", \"tensors\": []}";
  std::ofstream(dir.path / "c" / "data.bin") << "";
  CHECK_THROWS_AS(ContainerReader(dir.path / "c"), IoError);
  CHECK_THROWS_AS(ContainerReader(dir.path / "missing"), IoError);
}

TEST_CASE("timings appear only when requested") {
  const ModelSpec spec = toy_spec(27);
  const auto model = generate_model(spec);
  const CalibrationBatch batch = generate_batch(16, 1, 6, 10, 0.5, 28);
  const QuantizeOutput with = quantize_model(model, spec, batch, base_cfg(Method::GPTQ), true);
  const QuantizeOutput without = quantize_model(model, spec, batch, base_cfg(Method::GPTQ));
  CHECK_FALSE(with.report.timings.empty());
  CHECK(without.report.timings.empty());
  CHECK(report_to_json(with.report).find("timings") != std::string::npos);
  CHECK(report_to_json(without.report).find("timings") == std::string::npos);
}
