// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vlmq/calib.hpp"
#include "vlmq/matrix.hpp"
#include "vlmq/model.hpp"

namespace vlmq {

// Tensor container: a directory holding manifest.json plus a single data.bin
// of little-endian row-major payloads.
//
//   manifest.json:
//     version : "vlmq-container/1"
//     meta    : free-form object (model spec, config echo, ...)
//     tensors : [{name, shape, dtype in {f64,u8,i32}, offset, length}]
//
// offset/length are byte ranges into data.bin. Writes are byte-exact and
// deterministic for identical inputs.

inline constexpr const char *kContainerVersion = "vlmq-container/1";

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::string dtype; // "f64" | "u8" | "i32"
  std::size_t offset = 0;
  std::size_t length = 0;
};

class ContainerWriter {
public:
  void set_meta_json(const std::string &json_text); // must be a JSON object
  void add_f64(const std::string &name, std::vector<std::size_t> shape,
               std::span<const double> values);
  void add_u8(const std::string &name, std::vector<std::size_t> shape,
              std::span<const std::uint8_t> values);
  void add_i32(const std::string &name, std::vector<std::size_t> shape,
               std::span<const std::int32_t> values);
  void write(const std::filesystem::path &dir) const;

private:
  std::string meta_json_ = "{}";
  std::vector<TensorEntry> entries_;
  std::vector<std::uint8_t> payload_;
};

class ContainerReader {
public:
  explicit ContainerReader(const std::filesystem::path &dir);

  const std::string &meta_json() const { return meta_json_; }
  bool has(const std::string &name) const;
  std::vector<std::string> names() const;
  const TensorEntry &entry(const std::string &name) const;

  Matrix read_matrix(const std::string &name) const; // f64, rank-2
  std::vector<double> read_f64(const std::string &name) const;
  std::vector<std::uint8_t> read_u8(const std::string &name) const;
  std::vector<std::int32_t> read_i32(const std::string &name) const;

private:
  std::filesystem::path dir_;
  std::string meta_json_;
  std::map<std::string, TensorEntry> entries_;
  std::vector<std::string> order_;
};

// Model containers.
void write_model(const std::filesystem::path &dir, const ModelSpec &spec,
                 const std::vector<LayerWeights> &layers);
std::pair<ModelSpec, std::vector<LayerWeights>> read_model(const std::filesystem::path &dir);

// Calibration batch containers (roles stored as uint8 codes per sample).
void write_batch(const std::filesystem::path &dir, const CalibrationBatch &batch,
                 const std::string &meta_extra_json = "{}");
CalibrationBatch read_batch(const std::filesystem::path &dir);

} // namespace vlmq
