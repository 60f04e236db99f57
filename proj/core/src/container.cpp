// SPDX-License-Identifier: Apache-2.0
#include "vlmq/container.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "vlmq/errors.hpp"

namespace vlmq {

using json = nlohmann::ordered_json;

namespace {

std::size_t dtype_size(const std::string &dtype) {
  if (dtype == "f64") {
    return 8;
  }
  if (dtype == "u8") {
    return 1;
  }
  if (dtype == "i32") {
    return 4;
  }
  throw IoError("unknown dtype " + dtype);
}

std::size_t shape_count(const std::vector<std::size_t> &shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

} // namespace

void ContainerWriter::set_meta_json(const std::string &json_text) {
  const json parsed = json::parse(json_text, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    throw IoError("container meta must be a JSON object");
  }
  meta_json_ = parsed.dump();
}

void ContainerWriter::add_f64(const std::string &name, std::vector<std::size_t> shape,
                              std::span<const double> values) {
  if (shape_count(shape) != values.size()) {
    throw ShapeMismatch("tensor " + name + " payload size");
  }
  TensorEntry e{name, std::move(shape), "f64", payload_.size(), values.size() * 8};
  payload_.resize(payload_.size() + e.length);
  std::memcpy(payload_.data() + e.offset, values.data(), e.length);
  entries_.push_back(std::move(e));
}

void ContainerWriter::add_u8(const std::string &name, std::vector<std::size_t> shape,
                             std::span<const std::uint8_t> values) {
  if (shape_count(shape) != values.size()) {
    throw ShapeMismatch("tensor " + name + " payload size");
  }
  TensorEntry e{name, std::move(shape), "u8", payload_.size(), values.size()};
  payload_.insert(payload_.end(), values.begin(), values.end());
  entries_.push_back(std::move(e));
}

void ContainerWriter::add_i32(const std::string &name, std::vector<std::size_t> shape,
                              std::span<const std::int32_t> values) {
  if (shape_count(shape) != values.size()) {
    throw ShapeMismatch("tensor " + name + " payload size");
  }
  TensorEntry e{name, std::move(shape), "i32", payload_.size(), values.size() * 4};
  payload_.resize(payload_.size() + e.length);
  std::memcpy(payload_.data() + e.offset, values.data(), e.length);
  entries_.push_back(std::move(e));
}

void ContainerWriter::write(const std::filesystem::path &dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  }

  json manifest;
  manifest["version"] = kContainerVersion;
  manifest["meta"] = json::parse(meta_json_);
  json tensors = json::array();
  for (const TensorEntry &e : entries_) {
    json t;
    t["name"] = e.name;
    t["shape"] = e.shape;
    t["dtype"] = e.dtype;
    t["offset"] = e.offset;
    t["length"] = e.length;
    tensors.push_back(std::move(t));
  }
  manifest["tensors"] = std::move(tensors);

  {
    std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot write manifest in " + dir.string());
    }
    out << manifest.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "data.bin", std::ios::binary | std::ios::trunc);
    if (!out) {
      throw IoError("cannot write data.bin in " + dir.string());
    }
    out.write(reinterpret_cast<const char *>(payload_.data()),
              static_cast<std::streamsize>(payload_.size()));
  }
}

ContainerReader::ContainerReader(const std::filesystem::path &dir) : dir_(dir) {
  const json manifest = json::parse(read_file(dir / "manifest.json"), nullptr, false);
  if (manifest.is_discarded()) {
    throw IoError("malformed manifest in " + dir.string());
  }
  if (manifest.value("version", "") != kContainerVersion) {
    throw IoError("unsupported container version in " + dir.string());
  }
  meta_json_ = manifest.contains("meta") ? manifest["meta"].dump() : "{}";
  for (const auto &t : manifest["tensors"]) {
    TensorEntry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<std::vector<std::size_t>>();
    e.dtype = t.at("dtype").get<std::string>();
    e.offset = t.at("offset").get<std::size_t>();
    e.length = t.at("length").get<std::size_t>();
    if (e.length != shape_count(e.shape) * dtype_size(e.dtype)) {
      throw IoError("tensor " + e.name + " length does not match shape");
    }
    order_.push_back(e.name);
    entries_[e.name] = std::move(e);
  }
}

bool ContainerReader::has(const std::string &name) const { return entries_.count(name) > 0; }

std::vector<std::string> ContainerReader::names() const { return order_; }

const TensorEntry &ContainerReader::entry(const std::string &name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw IoError("tensor " + name + " not found in " + dir_.string());
  }
  return it->second;
}

namespace {

std::vector<std::uint8_t> read_range(const std::filesystem::path &path, std::size_t offset,
                                     std::size_t length) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  in.seekg(static_cast<std::streamoff>(offset));
  std::vector<std::uint8_t> bytes(length);
  in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(length));
  if (static_cast<std::size_t>(in.gcount()) != length) {
    throw IoError("short read from " + path.string());
  }
  return bytes;
}

} // namespace

std::vector<double> ContainerReader::read_f64(const std::string &name) const {
  const TensorEntry &e = entry(name);
  if (e.dtype != "f64") {
    throw IoError("tensor " + name + " is not f64");
  }
  const auto bytes = read_range(dir_ / "data.bin", e.offset, e.length);
  std::vector<double> out(e.length / 8);
  std::memcpy(out.data(), bytes.data(), e.length);
  return out;
}

std::vector<std::uint8_t> ContainerReader::read_u8(const std::string &name) const {
  const TensorEntry &e = entry(name);
  if (e.dtype != "u8") {
    throw IoError("tensor " + name + " is not u8");
  }
  return read_range(dir_ / "data.bin", e.offset, e.length);
}

std::vector<std::int32_t> ContainerReader::read_i32(const std::string &name) const {
  const TensorEntry &e = entry(name);
  if (e.dtype != "i32") {
    throw IoError("tensor " + name + " is not i32");
  }
  const auto bytes = read_range(dir_ / "data.bin", e.offset, e.length);
  std::vector<std::int32_t> out(e.length / 4);
  std::memcpy(out.data(), bytes.data(), e.length);
  return out;
}

Matrix ContainerReader::read_matrix(const std::string &name) const {
  const TensorEntry &e = entry(name);
  if (e.shape.size() != 2) {
    throw IoError("tensor " + name + " is not rank-2");
  }
  return Matrix(e.shape[0], e.shape[1], read_f64(name));
}

namespace {

json spec_to_json(const ModelSpec &spec) {
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

ModelSpec spec_from_json(const json &j) {
  ModelSpec spec;
  spec.num_layers = j.at("num_layers").get<std::size_t>();
  spec.d_model = j.at("d_model").get<std::size_t>();
  spec.num_heads = j.at("num_heads").get<std::size_t>();
  if (j.contains("head_dim")) {
    spec.head_dim = j.at("head_dim").get<std::size_t>();
  } else {
    if (spec.num_heads == 0 || spec.d_model % spec.num_heads != 0) {
      throw InvalidSpec("d_model must be divisible by num_heads");
    }
    spec.head_dim = spec.d_model / spec.num_heads;
  }
  spec.d_ff = j.at("d_ff").get<std::size_t>();
  spec.norm_eps = j.value("norm_eps", 1e-6);
  spec.rope_enabled = j.value("rope", false);
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.validate();
  return spec;
}

std::string layer_name(std::size_t l, const char *tensor) {
  return "layers." + std::to_string(l) + "." + tensor;
}

} // namespace

void write_model(const std::filesystem::path &dir, const ModelSpec &spec,
                 const std::vector<LayerWeights> &layers) {
  spec.validate();
  if (layers.size() != spec.num_layers) {
    throw ShapeMismatch("layer count");
  }
  ContainerWriter w;
  json meta;
  meta["kind"] = "model";
  meta["spec"] = spec_to_json(spec);
  w.set_meta_json(meta.dump());

  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerWeights &lw = layers[l];
    lw.validate(spec);
    auto put = [&](const char *name, const Matrix &m) {
      w.add_f64(layer_name(l, name), {m.rows(), m.cols()}, m.data());
    };
    put("q", lw.q);
    put("k", lw.k);
    put("v", lw.v);
    put("o", lw.o);
    put("up", lw.up);
    put("gate", lw.gate);
    put("down", lw.down);
    w.add_f64(layer_name(l, "attn_norm"), {lw.attn_norm.size()}, lw.attn_norm);
    w.add_f64(layer_name(l, "ffn_norm"), {lw.ffn_norm.size()}, lw.ffn_norm);
  }
  w.write(dir);
}

std::pair<ModelSpec, std::vector<LayerWeights>> read_model(const std::filesystem::path &dir) {
  ContainerReader r(dir);
  const json meta = json::parse(r.meta_json());
  if (meta.value("kind", "") != "model") {
    throw IoError("container at " + dir.string() + " is not a model");
  }
  const ModelSpec spec = spec_from_json(meta.at("spec"));
  std::vector<LayerWeights> layers;
  layers.reserve(spec.num_layers);
  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    LayerWeights lw;
    lw.q = r.read_matrix(layer_name(l, "q"));
    lw.k = r.read_matrix(layer_name(l, "k"));
    lw.v = r.read_matrix(layer_name(l, "v"));
    lw.o = r.read_matrix(layer_name(l, "o"));
    lw.up = r.read_matrix(layer_name(l, "up"));
    lw.gate = r.read_matrix(layer_name(l, "gate"));
    lw.down = r.read_matrix(layer_name(l, "down"));
    lw.attn_norm = r.read_f64(layer_name(l, "attn_norm"));
    lw.ffn_norm = r.read_f64(layer_name(l, "ffn_norm"));
    lw.validate(spec);
    layers.push_back(std::move(lw));
  }
  return {spec, std::move(layers)};
}

void write_batch(const std::filesystem::path &dir, const CalibrationBatch &batch,
                 const std::string &meta_extra_json) {
  ContainerWriter w;
  json meta;
  meta["kind"] = "calib";
  meta["d_model"] = batch.d_model;
  meta["num_samples"] = batch.samples.size();
  const json extra = json::parse(meta_extra_json, nullptr, false);
  if (!extra.is_discarded() && extra.is_object()) {
    for (const auto &[key, value] : extra.items()) {
      meta[key] = value;
    }
  }
  w.set_meta_json(meta.dump());

  for (std::size_t s = 0; s < batch.samples.size(); ++s) {
    const CalibrationSample &sample = batch.samples[s];
    const std::string base = "samples." + std::to_string(s);
    w.add_f64(base + ".embeddings", {sample.embeddings.rows(), sample.embeddings.cols()},
              sample.embeddings.data());
    std::vector<std::uint8_t> roles(sample.roles.size());
    for (std::size_t i = 0; i < roles.size(); ++i) {
      roles[i] = static_cast<std::uint8_t>(sample.roles[i]);
    }
    w.add_u8(base + ".roles", {roles.size()}, roles);
  }
  w.write(dir);
}

CalibrationBatch read_batch(const std::filesystem::path &dir) {
  ContainerReader r(dir);
  const json meta = json::parse(r.meta_json());
  if (meta.value("kind", "") != "calib") {
    throw IoError("container at " + dir.string() + " is not a calibration batch");
  }
  CalibrationBatch batch;
  batch.d_model = meta.at("d_model").get<std::size_t>();
  const std::size_t num_samples = meta.at("num_samples").get<std::size_t>();
  for (std::size_t s = 0; s < num_samples; ++s) {
    const std::string base = "samples." + std::to_string(s);
    CalibrationSample sample;
    sample.embeddings = r.read_matrix(base + ".embeddings");
    const auto role_codes = r.read_u8(base + ".roles");
    sample.roles.reserve(role_codes.size());
    for (std::uint8_t c : role_codes) {
      if (c > 3) {
        throw IoError("invalid role code in " + dir.string());
      }
      sample.roles.push_back(static_cast<TokenRole>(c));
    }
    if (sample.roles.size() != sample.embeddings.cols() ||
        sample.embeddings.rows() != batch.d_model) {
      throw IoError("inconsistent sample shapes in " + dir.string());
    }
    batch.samples.push_back(std::move(sample));
  }
  return batch;
}

} // namespace vlmq
