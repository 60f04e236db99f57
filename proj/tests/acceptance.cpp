// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one pass/fail line per criterion. Exit code is nonzero
// when any criterion fails.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlmq/calib.hpp"
#include "vlmq/container.hpp"
#include "vlmq/linalg.hpp"
#include "vlmq/model.hpp"
#include "vlmq/pipeline.hpp"
#include "vlmq/selfcheck.hpp"
#include "vlmq/solver.hpp"
#include "vlmq/threads.hpp"

namespace fs = std::filesystem;
using namespace vlmq;
using json = nlohmann::ordered_json;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string &what, const std::string &detail) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << what;
  if (!detail.empty()) {
    std::cout << " (" << detail << ")";
  }
  std::cout << std::endl;
  if (!pass) {
    ++g_failures;
  }
}

double seconds_since(const std::chrono::steady_clock::time_point &t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) {
    return "<missing " + p.string() + ">";
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const checks::CheckResult &find_check(const checks::SuiteResult &suite, const std::string &name) {
  for (const auto &c : suite.checks) {
    if (c.name == name) {
      return c;
    }
  }
  throw std::runtime_error("check not found: " + name);
}

ModelSpec acceptance_spec(std::uint64_t seed) {
  ModelSpec spec;
  spec.num_layers = 2;
  spec.d_model = 16;
  spec.num_heads = 2;
  spec.head_dim = 8;
  spec.d_ff = 32;
  spec.seed = seed;
  return spec;
}

PipelineConfig acceptance_cfg(Method method, Precursor precursor) {
  PipelineConfig cfg;
  cfg.solve.method = method;
  cfg.solve.precursor = precursor;
  cfg.solve.bits = 3;
  cfg.solve.group_size = -1;
  cfg.solve.act_order = true;
  cfg.solve.damp = 0.01;
  cfg.seed = 17;
  return cfg;
}

// containers must agree on every numeric payload; the manifest's config echo
// necessarily differs in the method fields
bool containers_match_modulo_method(const fs::path &a, const fs::path &b, std::string &why) {
  if (slurp(a / "data.bin") != slurp(b / "data.bin")) {
    why = "data.bin differs";
    return false;
  }
  json ma = json::parse(slurp(a / "manifest.json"), nullptr, false);
  json mb = json::parse(slurp(b / "manifest.json"), nullptr, false);
  if (ma.is_discarded() || mb.is_discarded()) {
    why = "unparseable manifest";
    return false;
  }
  if (ma["tensors"] != mb["tensors"]) {
    why = "tensor tables differ";
    return false;
  }
  for (const char *key : {"method", "precursor", "importance_source", "importance_norm",
                          "manual_li_ratio", "manual_li_value", "bias_layers"}) {
    ma["meta"]["config"].erase(key);
    mb["meta"]["config"].erase(key);
  }
  if (ma != mb) {
    why = "manifest differs beyond method fields";
    return false;
  }
  return true;
}

void criterion_1(const checks::SuiteResult &solver, double suite_seconds) {
  const auto &c = find_check(solver, "solver.kkt_oracle");
  std::ostringstream detail;
  detail << c.detail << "; solver suite took " << suite_seconds << " s";
  report(1, c.pass && suite_seconds < 10.0,
         "closed-form column update matches the brute-force KKT oracle", detail.str());
}

void criterion_2() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelSpec spec = acceptance_spec(11);
  const auto model = generate_model(spec);
  // 12 text + 36 vision tokens per sample (N = 48), 8 samples
  const CalibrationBatch batch = generate_batch(16, 8, 12, 36, 0.8, 13);

  const fs::path root = fs::temp_directory_path() / "vlmq_acceptance_c2";
  fs::remove_all(root);
  fs::create_directories(root);

  PipelineConfig vlmq_cfg = acceptance_cfg(Method::VLMQ, Precursor::GPTAQ);
  vlmq_cfg.importance_source = ImportanceSource::Manual;
  vlmq_cfg.manual_li_ratio = 0.0;
  vlmq_cfg.manual_li_value = 1.0;
  const QuantizeOutput vlmq_out = quantize_model(model, spec, batch, vlmq_cfg);
  write_quantized_model(root / "vlmq", vlmq_out.model, vlmq_out.report.config_json);

  const PipelineConfig gptaq_cfg = acceptance_cfg(Method::GPTAQ, Precursor::GPTAQ);
  const QuantizeOutput gptaq_out = quantize_model(model, spec, batch, gptaq_cfg);
  write_quantized_model(root / "gptaq", gptaq_out.model, gptaq_out.report.config_json);

  PipelineConfig vlmq_g_cfg = acceptance_cfg(Method::VLMQ, Precursor::GPTQ);
  vlmq_g_cfg.importance_source = ImportanceSource::Manual;
  vlmq_g_cfg.manual_li_ratio = 0.0;
  vlmq_g_cfg.manual_li_value = 1.0;
  const QuantizeOutput vlmq_g_out = quantize_model(model, spec, batch, vlmq_g_cfg);
  write_quantized_model(root / "vlmq_g", vlmq_g_out.model, vlmq_g_out.report.config_json);

  const PipelineConfig gptq_cfg = acceptance_cfg(Method::GPTQ, Precursor::GPTAQ);
  const QuantizeOutput gptq_out = quantize_model(model, spec, batch, gptq_cfg);
  write_quantized_model(root / "gptq", gptq_out.model, gptq_out.report.config_json);

  std::string why1, why2;
  const bool id1 = containers_match_modulo_method(root / "vlmq", root / "gptaq", why1);
  const bool id2 = containers_match_modulo_method(root / "vlmq_g", root / "gptq", why2);
  const double dt = seconds_since(t0);

  std::ostringstream detail;
  detail << "VLMQ(G=I)==GPTAQ: " << (id1 ? "yes" : why1)
         << "; VLMQ(GPTQ precursor, G=I)==GPTQ: " << (id2 ? "yes" : why2) << "; " << dt << " s";
  report(2, id1 && id2 && dt < 30.0, "reduction identities produce bit-identical containers",
         detail.str());
  fs::remove_all(root);
}

void criterion_3(const checks::SuiteResult &solver) {
  const auto &c = find_check(solver, "solver.scale_invariance");
  report(3, c.pass, "uniform importance rescaling leaves codes and weights unchanged", c.detail);
}

void criterion_4(const checks::SuiteResult &backward, double suite_seconds) {
  const auto &fd = find_check(backward, "backward.finite_difference");
  const auto &ratio = find_check(backward, "backward.first_order_ratio");
  std::ostringstream detail;
  detail << fd.detail << "; " << ratio.detail << "; suite took " << suite_seconds << " s";
  report(4, fd.pass && ratio.pass && suite_seconds < 60.0,
         "projection gradients match finite differences and the first-order identity",
         detail.str());
}

void criterion_5(const checks::SuiteResult &quant) {
  const auto &bound = find_check(quant, "quant.roundtrip_bound");
  const auto &idem = find_check(quant, "quant.grid_idempotence");
  const auto &deg = find_check(quant, "quant.degenerate_rows");
  report(5, bound.pass && idem.pass && deg.pass, "quantizer round-trip contract",
         bound.detail + "; " + idem.detail + "; " + deg.detail);
}

void criterion_6(const checks::SuiteResult &solver) {
  const auto &c = find_check(solver, "solver.cholesky_vs_naive");
  report(6, c.pass, "lazy/Cholesky solver matches the naive re-inversion solver", c.detail);
}

void criterion_7(const checks::SuiteResult &solver) {
  const auto &c = find_check(solver, "solver.asymmetric_benefit");
  report(7, c.pass, "asymmetric objective beats the symmetric one under upstream noise",
         c.detail);
}

void criterion_8() {
  const int seeds = 20;
  int wins = 0;
  std::ostringstream per_seed;
  per_seed.precision(6);
  for (int s = 0; s < seeds; ++s) {
    const ModelSpec spec = acceptance_spec(1000 + s);
    const auto model = generate_model(spec);
    const CalibrationBatch batch =
      generate_batch(16, 4, 12, 48, 0.9, 2000 + static_cast<std::uint64_t>(s));

    PipelineConfig vlmq_cfg = acceptance_cfg(Method::VLMQ, Precursor::GPTAQ);
    vlmq_cfg.seed = 3000 + s;
    const QuantizeOutput vlmq_out = quantize_model(model, spec, batch, vlmq_cfg);

    PipelineConfig gptq_cfg = acceptance_cfg(Method::GPTQ, Precursor::GPTAQ);
    gptq_cfg.seed = 3000 + s;
    const QuantizeOutput gptq_out = quantize_model(model, spec, batch, gptq_cfg);

    const bool win = vlmq_out.report.block_loss_sum <= gptq_out.report.block_loss_sum;
    wins += win ? 1 : 0;
    per_seed << "\n    seed " << s << ": vlmq=" << vlmq_out.report.block_loss_sum
             << " gptq=" << gptq_out.report.block_loss_sum << (win ? "  <=" : "  >");
  }
  std::ostringstream detail;
  detail << wins << "/" << seeds << " seeds with vlmq block-loss sum <= gptq" << per_seed.str();
  report(8, wins * 10 >= seeds * 7, "importance weighting beats gptq on redundant vision tokens",
         detail.str());
}

void criterion_9(const checks::SuiteResult &solver) {
  const auto &c = find_check(solver, "solver.pilot_mechanics");
  report(9, c.pass, "manual low-importance marking and weighted accumulation mechanics",
         c.detail);
}

#ifndef VLMQ_CLI_PATH
#define VLMQ_CLI_PATH "vlmq"
#endif

int run_cli(const std::string &args, const std::string &threads) {
  const std::string cmd = "VLMQ_THREADS=" + threads + " " + VLMQ_CLI_PATH + " " + args +
                          " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

void criterion_10() {
  const fs::path root = fs::temp_directory_path() / "vlmq_acceptance_c10";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream spec(root / "spec.json");
    spec << R"({"num_layers": 2, "d_model": 16, "num_heads": 2, "d_ff": 32, "seed": 3})";
  }

  bool ok = run_cli("gen-model --spec " + (root / "spec.json").string() + " --out " +
                      (root / "model").string(),
                    "1") == 0;
  ok = ok && run_cli("gen-calib --model " + (root / "model").string() +
                       " --samples 4 --text 12 --vision 36 --redundancy 0.9 --out " +
                       (root / "calib").string() + " --seed 5",
                     "1") == 0;

  // identical flags including --out: rerun into the same directory and
  // snapshot each run's bytes
  const std::string quant_args = "quantize --model " + (root / "model").string() + " --calib " +
                                 (root / "calib").string() +
                                 " --method vlmq --bits 3 --act-order --seed 9 --out " +
                                 (root / "q").string();
  const char *threads[4] = {"1", "1", "8", "8"};
  std::string manifests[4], payloads[4], reports[4];
  for (int i = 0; i < 4 && ok; ++i) {
    fs::remove_all(root / "q");
    ok = run_cli(quant_args, threads[i]) == 0;
    manifests[i] = slurp(root / "q" / "manifest.json");
    payloads[i] = slurp(root / "q" / "data.bin");
    reports[i] = slurp(root / "q" / "report.json");
  }

  std::string detail = "4 cli runs with VLMQ_THREADS in {1,8}";
  if (ok) {
    for (int i = 1; i < 4; ++i) {
      if (manifests[i] != manifests[0] || payloads[i] != payloads[0] ||
          reports[i] != reports[0]) {
        ok = false;
        detail = "run " + std::to_string(i) + " differs from run 0";
      }
    }
  } else {
    detail = "cli invocation failed";
  }
  report(10, ok, "identical flags and seeds give byte-identical containers and reports", detail);
  fs::remove_all(root);
}

} // namespace

int main() {
  std::cout << "acceptance suite (workers available: " << worker_count() << ")" << std::endl;

  const checks::SuiteResult quant = checks::run_quant_suite(0);

  auto t0 = std::chrono::steady_clock::now();
  const checks::SuiteResult backward = checks::run_backward_suite(0);
  const double backward_seconds = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const checks::SuiteResult solver = checks::run_solver_suite(0);
  const double solver_seconds = seconds_since(t0);

  criterion_1(solver, solver_seconds);
  criterion_2();
  criterion_3(solver);
  criterion_4(backward, backward_seconds);
  criterion_5(quant);
  criterion_6(solver);
  criterion_7(solver);
  criterion_8();
  criterion_9(solver);
  criterion_10();

  std::cout << (g_failures == 0 ? "all criteria passed" : "criteria failed") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
