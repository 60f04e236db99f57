// SPDX-License-Identifier: Apache-2.0
//
// Batch front end: model/calibration generation, quantization, reconstruction
// evaluation, Hessian PCA diagnostics and the oracle check suites.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vlmq/backward.hpp"
#include "vlmq/calib.hpp"
#include "vlmq/container.hpp"
#include "vlmq/errors.hpp"
#include "vlmq/model.hpp"
#include "vlmq/pipeline.hpp"
#include "vlmq/selfcheck.hpp"
#include "vlmq/solver.hpp"

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

vlmq::ModelSpec parse_spec_file(const fs::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw vlmq::IoError("cannot open spec file " + path.string());
  }
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw vlmq::InvalidSpec("spec file is not a JSON object");
  }
  vlmq::ModelSpec spec;
  try {
    spec.num_layers = j.at("num_layers").get<std::size_t>();
    spec.d_model = j.at("d_model").get<std::size_t>();
    spec.num_heads = j.at("num_heads").get<std::size_t>();
    spec.d_ff = j.at("d_ff").get<std::size_t>();
    if (j.contains("head_dim")) {
      spec.head_dim = j.at("head_dim").get<std::size_t>();
    } else if (spec.num_heads > 0 && spec.d_model % spec.num_heads == 0) {
      spec.head_dim = spec.d_model / spec.num_heads;
    } else {
      throw vlmq::InvalidSpec("d_model not divisible by num_heads");
    }
    spec.norm_eps = j.value("norm_eps", 1e-6);
    spec.rope_enabled = j.value("rope", false);
    spec.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception &e) {
    throw vlmq::InvalidSpec(std::string("spec file: ") + e.what());
  }
  spec.validate();
  return spec;
}

struct QuantizeArgs {
  std::string model_dir, calib_dir, out_dir, report_path;
  std::string method = "vlmq";
  std::string precursor = "gptaq";
  int bits = 3;
  int group_size = -1;
  bool act_order = false;
  double damp = 0.01;
  int lazy_block = 128;
  std::string bias_layers = "qkvo";
  std::string importance_norm = "l1";
  std::string manual_li; // "ratio,value"
  std::uint64_t seed = 0;
  bool timings = false;
};

vlmq::PipelineConfig to_pipeline_config(const QuantizeArgs &a) {
  vlmq::PipelineConfig cfg;
  if (a.method == "gptq") {
    cfg.solve.method = vlmq::Method::GPTQ;
  } else if (a.method == "gptaq") {
    cfg.solve.method = vlmq::Method::GPTAQ;
  } else if (a.method == "vlmq") {
    cfg.solve.method = vlmq::Method::VLMQ;
  } else {
    throw vlmq::Error(vlmq::ErrorKind::Validation, "unknown method " + a.method);
  }
  if (a.precursor == "gptaq") {
    cfg.solve.precursor = vlmq::Precursor::GPTAQ;
  } else if (a.precursor == "gptq") {
    cfg.solve.precursor = vlmq::Precursor::GPTQ;
  } else {
    throw vlmq::Error(vlmq::ErrorKind::Validation, "unknown precursor " + a.precursor);
  }
  cfg.solve.bits = a.bits;
  cfg.solve.group_size = a.group_size;
  cfg.solve.act_order = a.act_order;
  cfg.solve.damp = a.damp;
  cfg.solve.lazy_block = a.lazy_block;
  if (a.bias_layers == "qkvo") {
    cfg.bias_layers = vlmq::BiasLayers::qkvo();
  } else if (a.bias_layers == "qkv") {
    cfg.bias_layers = vlmq::BiasLayers::qkv();
  } else if (a.bias_layers == "none") {
    cfg.bias_layers = vlmq::BiasLayers::none();
  } else {
    throw vlmq::Error(vlmq::ErrorKind::Validation, "bias-layers must be qkvo|qkv|none");
  }
  if (a.importance_norm == "l1") {
    cfg.importance_norm = vlmq::NormKind::L1;
  } else if (a.importance_norm == "l2") {
    cfg.importance_norm = vlmq::NormKind::L2;
  } else {
    throw vlmq::Error(vlmq::ErrorKind::Validation, "importance-norm must be l1|l2");
  }
  if (!a.manual_li.empty()) {
    cfg.importance_source = vlmq::ImportanceSource::Manual;
    const auto comma = a.manual_li.find(',');
    if (comma == std::string::npos) {
      throw vlmq::Error(vlmq::ErrorKind::Validation, "--manual-li expects ratio,value");
    }
    try {
      cfg.manual_li_ratio = std::stod(a.manual_li.substr(0, comma));
      cfg.manual_li_value = std::stod(a.manual_li.substr(comma + 1));
    } catch (const std::exception &) {
      throw vlmq::Error(vlmq::ErrorKind::Validation, "--manual-li expects ratio,value");
    }
  }
  cfg.seed = a.seed;
  cfg.validate();
  return cfg;
}

int cmd_gen_model(const std::string &spec_path, const std::string &out_dir, long long seed) {
  vlmq::ModelSpec spec = parse_spec_file(spec_path);
  if (seed >= 0) {
    spec.seed = static_cast<std::uint64_t>(seed);
  }
  const auto layers = vlmq::generate_model(spec);
  vlmq::write_model(out_dir, spec, layers);
  std::cout << "wrote model (" << spec.num_layers << " layers, d_model=" << spec.d_model
            << ") to " << out_dir << "\n";
  return 0;
}

int cmd_gen_calib(const std::string &model_dir, std::size_t samples, std::size_t text,
                  std::size_t vision, double redundancy, const std::string &out_dir,
                  std::uint64_t seed) {
  const auto [spec, layers] = vlmq::read_model(model_dir);
  (void)layers;
  const vlmq::CalibrationBatch batch =
    vlmq::generate_batch(spec.d_model, samples, text, vision, redundancy, seed);
  json extra;
  extra["n_text"] = text;
  extra["n_vision"] = vision;
  extra["redundancy"] = redundancy;
  extra["seed"] = seed;
  vlmq::write_batch(out_dir, batch, extra.dump());
  std::cout << "wrote calibration batch (" << samples << " samples, " << text << " text + "
            << vision << " vision tokens) to " << out_dir << "\n";
  return 0;
}

int cmd_quantize(const QuantizeArgs &args) {
  const vlmq::PipelineConfig cfg = to_pipeline_config(args);
  const auto [spec, layers] = vlmq::read_model(args.model_dir);
  const vlmq::CalibrationBatch batch = vlmq::read_batch(args.calib_dir);

  vlmq::QuantizeOutput out = vlmq::quantize_model(layers, spec, batch, cfg, args.timings);
  if (!args.timings) {
    out.report.timings.clear();
  }
  {
    // echo the inputs so the run is reproducible from the report alone
    json echo = json::parse(out.report.config_json);
    echo["model"] = args.model_dir;
    echo["calib"] = args.calib_dir;
    echo["out"] = args.out_dir;
    out.report.config_json = echo.dump();
  }
  vlmq::write_quantized_model(args.out_dir, out.model, out.report.config_json);
  const std::string report_path =
    args.report_path.empty() ? (fs::path(args.out_dir) / "report.json").string()
                             : args.report_path;
  vlmq::write_text_file(report_path, vlmq::report_to_json(out.report));
  std::cout << "quantized " << spec.num_layers << " layers (" << to_string(cfg.solve.method)
            << ", " << cfg.solve.bits << "-bit); block loss sum = " << out.report.block_loss_sum
            << "\n";
  std::cout << "container: " << args.out_dir << "\nreport: " << report_path << "\n";
  return 0;
}

int cmd_eval_recon(const std::string &fp_dir, const std::string &quant_dir,
                   const std::string &calib_dir, const std::string &report_path) {
  const auto [spec, fp_layers] = vlmq::read_model(fp_dir);
  const vlmq::CalibrationBatch batch = vlmq::read_batch(calib_dir);
  // --quant accepts a quantized container or a plain model container (the
  // latter makes comparing a model against itself report exact zeros)
  std::vector<vlmq::LayerWeights> q_layers;
  try {
    q_layers = vlmq::to_weights(vlmq::read_quantized_model(quant_dir));
  } catch (const vlmq::IoError &) {
    q_layers = vlmq::read_model(quant_dir).second;
  }

  const vlmq::EvalReport report = vlmq::eval_reconstruction(fp_layers, q_layers, spec, batch);
  json cfg;
  cfg["fp"] = fp_dir;
  cfg["quant"] = quant_dir;
  cfg["calib"] = calib_dir;
  vlmq::write_text_file(report_path, vlmq::eval_report_to_json(report, cfg.dump()));
  std::cout << "block loss sum = " << report.block_loss_sum
            << ", final mse = " << report.final_mse
            << ", final relative error = " << report.final_relative_error << "\n";
  std::cout << "report: " << report_path << "\n";
  return 0;
}

int cmd_diag(const std::string &model_dir, const std::string &calib_dir, std::size_t layer,
             const std::string &out_csv, int bits, const std::string &norm, std::uint64_t seed) {
  const auto [spec, layers] = vlmq::read_model(model_dir);
  if (layer >= spec.num_layers) {
    throw vlmq::Error(vlmq::ErrorKind::Validation, "layer index out of range");
  }
  const vlmq::CalibrationBatch batch = vlmq::read_batch(calib_dir);

  vlmq::PipelineConfig cfg;
  cfg.solve.method = vlmq::Method::VLMQ;
  cfg.solve.precursor = vlmq::Precursor::GPTAQ;
  cfg.solve.bits = bits;
  cfg.solve.act_order = true;
  cfg.importance_norm = norm == "l2" ? vlmq::NormKind::L2 : vlmq::NormKind::L1;
  cfg.seed = seed;
  const vlmq::QuantizeOutput out = vlmq::quantize_model(layers, spec, batch, cfg);

  std::ostringstream csv;
  csv << "pc1,pc2,modality,importance\n";
  csv.precision(17);
  for (const vlmq::PcaPoint &p : out.report.layers[layer].pca) {
    csv << p.pc1 << ',' << p.pc2 << ','
        << (p.modality == vlmq::Modality::Text ? "text" : "vision") << ',' << p.importance
        << '\n';
  }
  vlmq::write_text_file(out_csv, csv.str());
  std::cout << "wrote " << out.report.layers[layer].pca.size() << " points to " << out_csv
            << "\n";
  return 0;
}

int cmd_check(const std::string &suite, std::uint64_t seed) {
  std::vector<vlmq::checks::SuiteResult> results;
  if (suite == "all") {
    results = vlmq::checks::run_all_suites(seed);
  } else if (suite == "quant") {
    results = {vlmq::checks::run_quant_suite(seed)};
  } else if (suite == "backward") {
    results = {vlmq::checks::run_backward_suite(seed)};
  } else if (suite == "solver") {
    results = {vlmq::checks::run_solver_suite(seed)};
  } else {
    throw vlmq::Error(vlmq::ErrorKind::Validation, "--suite must be all|solver|backward|quant");
  }

  std::size_t passed = 0, failed = 0;
  for (const auto &s : results) {
    for (const auto &c : s.checks) {
      std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << " - " << c.detail << "\n";
      if (c.pass) {
        ++passed;
      } else {
        ++failed;
      }
    }
  }
  std::cout << passed << " passed, " << failed << " failed\n";
  if (failed > 0) {
    throw vlmq::Error(vlmq::ErrorKind::Numerical, std::to_string(failed) + " checks failed");
  }
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Hessian-guided post-training quantization workbench"};
  app.require_subcommand(1);

  auto *gen_model = app.add_subcommand("gen-model", "generate a seeded toy decoder model");
  std::string gm_spec, gm_out;
  long long gm_seed = -1;
  gen_model->add_option("--spec", gm_spec, "model spec JSON file")->required();
  gen_model->add_option("--out", gm_out, "output container directory")->required();
  gen_model->add_option("--seed", gm_seed, "override the spec's seed");

  auto *gen_calib = app.add_subcommand("gen-calib", "generate a synthetic calibration batch");
  std::string gc_model, gc_out;
  std::size_t gc_samples = 8, gc_text = 16, gc_vision = 48;
  double gc_redundancy = 0.5;
  std::uint64_t gc_seed = 0;
  gen_calib->add_option("--model", gc_model, "model container directory")->required();
  gen_calib->add_option("--samples", gc_samples, "number of samples")->required();
  gen_calib->add_option("--text", gc_text, "text tokens per sample")->required();
  gen_calib->add_option("--vision", gc_vision, "vision tokens per sample")->required();
  gen_calib->add_option("--redundancy", gc_redundancy, "vision redundancy in [0,1]")->required();
  gen_calib->add_option("--out", gc_out, "output container directory")->required();
  gen_calib->add_option("--seed", gc_seed, "generation seed");

  auto *quantize = app.add_subcommand("quantize", "quantize a model against a calibration batch");
  QuantizeArgs qa;
  quantize->add_option("--model", qa.model_dir, "model container")->required();
  quantize->add_option("--calib", qa.calib_dir, "calibration container")->required();
  quantize->add_option("--method", qa.method, "gptq|gptaq|vlmq");
  quantize->add_option("--precursor", qa.precursor, "gptaq|gptq (vlmq only)");
  quantize->add_option("--bits", qa.bits, "bit width in [2,8]");
  quantize->add_option("--group-size", qa.group_size, "group size; -1 = per-channel");
  quantize->add_flag("--act-order", qa.act_order, "quantize columns by descending Hessian diag");
  quantize->add_option("--damp", qa.damp, "dampening ratio");
  quantize->add_option("--lazy-block", qa.lazy_block, "lazy update block width");
  quantize->add_option("--bias-layers", qa.bias_layers, "qkvo|qkv|none");
  quantize->add_option("--importance-norm", qa.importance_norm, "l1|l2");
  quantize->add_option("--manual-li", qa.manual_li,
                       "ratio,value: mark a random vision subset low-importance");
  quantize->add_option("--out", qa.out_dir, "output container directory")->required();
  quantize->add_option("--report", qa.report_path, "report JSON path");
  quantize->add_option("--seed", qa.seed, "pipeline seed");
  quantize->add_flag("--timings", qa.timings, "include wall-clock per stage in the report");

  auto *eval = app.add_subcommand("eval-recon", "reconstruction metrics fp vs quantized");
  std::string ev_fp, ev_quant, ev_calib, ev_report;
  eval->add_option("--fp", ev_fp, "full-precision model container")->required();
  eval->add_option("--quant", ev_quant, "quantized model container")->required();
  eval->add_option("--calib", ev_calib, "calibration container")->required();
  eval->add_option("--report", ev_report, "report JSON path")->required();

  auto *diag = app.add_subcommand("diag", "Hessian PCA point set for one layer");
  std::string dg_model, dg_calib, dg_out, dg_norm = "l1";
  std::size_t dg_layer = 0;
  int dg_bits = 4;
  std::uint64_t dg_seed = 0;
  diag->add_option("--model", dg_model, "model container")->required();
  diag->add_option("--calib", dg_calib, "calibration container")->required();
  diag->add_option("--layer", dg_layer, "layer index")->required();
  diag->add_option("--out", dg_out, "output CSV path")->required();
  diag->add_option("--bits", dg_bits, "bit width for the probing run");
  diag->add_option("--importance-norm", dg_norm, "l1|l2");
  diag->add_option("--seed", dg_seed, "probe seed");

  auto *check = app.add_subcommand("check", "run the oracle verification suites");
  std::string ck_suite = "all";
  std::uint64_t ck_seed = 0;
  check->add_option("--suite", ck_suite, "all|solver|backward|quant");
  check->add_option("--seed", ck_seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen_model->parsed()) {
      return cmd_gen_model(gm_spec, gm_out, gm_seed);
    }
    if (gen_calib->parsed()) {
      return cmd_gen_calib(gc_model, gc_samples, gc_text, gc_vision, gc_redundancy, gc_out,
                           gc_seed);
    }
    if (quantize->parsed()) {
      return cmd_quantize(qa);
    }
    if (eval->parsed()) {
      return cmd_eval_recon(ev_fp, ev_quant, ev_calib, ev_report);
    }
    if (diag->parsed()) {
      return cmd_diag(dg_model, dg_calib, dg_layer, dg_out, dg_bits, dg_norm, dg_seed);
    }
    if (check->parsed()) {
      return cmd_check(ck_suite, ck_seed);
    }
  } catch (const vlmq::Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
