// SPDX-License-Identifier: Apache-2.0
#include "pcsot/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace pcsot {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

constexpr int kFormatVersion = 1;

nlohmann::json manifest_json(const Model& model, const RunConfig& cfg,
                             std::size_t* blob_bytes) {
  nlohmann::json params = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name},
                      {"shape", p.value.shape()},
                      {"frozen", p.frozen},
                      {"offset", offset}});
    offset += static_cast<std::size_t>(p.value.size()) * sizeof(float);
  }
  *blob_bytes = offset;
  nlohmann::json root;
  root["format_version"] = kFormatVersion;
  root["config"] = nlohmann::json::parse(run_config_to_json_text(cfg));
  root["params"] = params;
  root["blob_bytes"] = offset;
  return root;
}

}  // namespace

void save_checkpoint(const Model& model, const RunConfig& cfg, const fs::path& path) {
  std::size_t blob_bytes = 0;
  const nlohmann::json manifest = manifest_json(model, cfg, &blob_bytes);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << manifest.dump() << "\n";
  std::vector<float> buf;
  for (const auto& p : model.parameters()) {
    buf.resize(static_cast<std::size_t>(p.value.size()));
    const auto& d = p.value.data();
    for (std::size_t i = 0; i < d.size(); ++i) buf[i] = static_cast<float>(d[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write on checkpoint " + path.string());
}

namespace {

struct RawCheckpoint {
  nlohmann::json manifest;
  std::vector<char> blob;
};

RawCheckpoint read_raw(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw CheckpointError("checkpoint " + path.string() + " has no manifest line");
  RawCheckpoint raw;
  try {
    raw.manifest = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad manifest in " + path.string() + ": " + e.what());
  }
  if (raw.manifest.value("format_version", -1) != kFormatVersion)
    throw CheckpointError("unsupported checkpoint format version in " + path.string());
  raw.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const auto expect = raw.manifest.at("blob_bytes").get<std::size_t>();
  if (raw.blob.size() != expect)
    throw CheckpointError("checkpoint blob is " + std::to_string(raw.blob.size()) +
                          " bytes, manifest says " + std::to_string(expect));
  return raw;
}

void apply_blob(Model& model, const RawCheckpoint& raw) {
  const auto& params = raw.manifest.at("params");
  auto& live = model.parameters();
  if (params.size() != live.size())
    throw CheckpointError("checkpoint has " + std::to_string(params.size()) +
                          " parameters, model has " + std::to_string(live.size()));
  for (std::size_t i = 0; i < live.size(); ++i) {
    const auto& entry = params[i];
    const std::string name = entry.at("name").get<std::string>();
    if (name != live[i].name)
      throw CheckpointError("checkpoint parameter '" + name +
                            "' does not match model parameter '" + live[i].name + "'");
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    if (shape != live[i].value.shape())
      throw CheckpointError("shape mismatch for parameter '" + name + "'");
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(live[i].value.size()) * sizeof(float);
    if (offset + bytes > raw.blob.size())
      throw CheckpointError("blob overrun for parameter '" + name + "'");
    auto& dst = live[i].value.mutable_data();
    const char* src = raw.blob.data() + offset;
    for (std::size_t j = 0; j < dst.size(); ++j) {
      float v;
      std::memcpy(&v, src + j * sizeof(float), sizeof(float));
      dst[j] = static_cast<double>(v);
    }
  }
}

}  // namespace

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  RawCheckpoint raw = read_raw(path);
  RunConfig cfg;
  try {
    cfg = run_config_from_json_text(raw.manifest.at("config").dump());
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError("bad embedded config in " + path.string() + ": " + e.what());
  }
  LoadedCheckpoint loaded{cfg, Model(cfg.model)};
  apply_blob(loaded.model, raw);
  return loaded;
}

void load_checkpoint_into(Model& model, const fs::path& path) {
  RawCheckpoint raw = read_raw(path);
  apply_blob(model, raw);
}

}  // namespace pcsot
