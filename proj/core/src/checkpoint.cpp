// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#include "duodet/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

#include "config_codec.hpp"

static_assert(std::endian::native == std::endian::little,
              "params.bin is written as raw little-endian float32");

namespace duodet {

namespace fs = std::filesystem;
using nlohmann::json;

void save_bundle(const CheckpointBundle& bundle, const std::string& dir) {
  fs::create_directories(dir);

  json manifest;
  manifest["format_version"] = bundle.format_version;
  manifest["detector"] = cfgjson::detector_to_json(bundle.config);
  std::int64_t offset = 0;
  auto describe = [&offset](const std::vector<TensorBlob>& blobs) {
    json arr = json::array();
    for (const auto& blob : blobs) {
      arr.push_back(json{{"name", blob.name}, {"shape", blob.shape}, {"offset", offset}});
      offset += static_cast<std::int64_t>(blob.values.size());
    }
    return arr;
  };
  manifest["params"] = describe(bundle.params);
  manifest["state"] = describe(bundle.state);

  const auto manifest_path = fs::path(dir) / "manifest.json";
  {
    std::ofstream out(manifest_path);
    out << manifest.dump(2) << '\n';
    if (!out) throw ConfigError("checkpoint: cannot write " + manifest_path.string());
  }
  const auto bin_path = fs::path(dir) / "params.bin";
  std::ofstream out(bin_path, std::ios::binary);
  for (const auto* blobs : {&bundle.params, &bundle.state})
    for (const auto& blob : *blobs)
      out.write(reinterpret_cast<const char*>(blob.values.data()),
                static_cast<std::streamsize>(blob.values.size() * sizeof(float)));
  if (!out) throw ConfigError("checkpoint: cannot write " + bin_path.string());
}

namespace {

std::vector<TensorBlob> parse_entries(const json& arr, const std::string& where,
                                      std::int64_t& offset) {
  if (!arr.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<TensorBlob> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    const auto& e = arr[i];
    cfgjson::check_keys(e, {"name", "shape", "offset"}, at);
    TensorBlob blob;
    if (!e.contains("name") || !e.at("name").is_string())
      throw ConfigError(at + ": expected a string name");
    blob.name = e.at("name").get<std::string>();
    if (!e.contains("shape") || !e.at("shape").is_array())
      throw ConfigError(at + ": expected a shape array");
    std::int64_t count = 1;
    for (const auto& d : e.at("shape")) {
      if (!d.is_number_integer() || d.get<std::int64_t>() < 1)
        throw ConfigError(at + ": shape entries must be positive integers");
      blob.shape.push_back(d.get<int>());
      count *= d.get<std::int64_t>();
    }
    if (!e.contains("offset") || !e.at("offset").is_number_integer() ||
        e.at("offset").get<std::int64_t>() != offset)
      throw ConfigError(at + ": offset does not match the preceding tensors");
    blob.values.resize(static_cast<std::size_t>(count));
    offset += count;
    out.push_back(std::move(blob));
  }
  return out;
}

}  // namespace

CheckpointBundle load_bundle(const std::string& dir) {
  const auto manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("checkpoint: cannot open " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("checkpoint: " + manifest_path.string() + " is not valid JSON: " +
                      e.what());
  }
  cfgjson::check_keys(manifest, {"format_version", "detector", "params", "state"}, "checkpoint");
  for (const char* key : {"format_version", "detector", "params", "state"})
    if (!manifest.contains(key))
      throw ConfigError(std::string("checkpoint: missing key '") + key + "'");

  CheckpointBundle bundle;
  if (!manifest.at("format_version").is_number_integer())
    throw ConfigError("checkpoint: format_version must be an integer");
  bundle.format_version = manifest.at("format_version").get<int>();
  bundle.config = cfgjson::detector_from_json(manifest.at("detector"), "checkpoint.detector");

  std::int64_t offset = 0;
  bundle.params = parse_entries(manifest.at("params"), "checkpoint.params", offset);
  bundle.state = parse_entries(manifest.at("state"), "checkpoint.state", offset);

  const auto bin_path = fs::path(dir) / "params.bin";
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw ConfigError("checkpoint: cannot open " + bin_path.string());
  bin.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::int64_t>(bin.tellg());
  bin.seekg(0, std::ios::beg);
  const std::int64_t expected = offset * static_cast<std::int64_t>(sizeof(float));
  if (bytes != expected)
    throw ConfigError("checkpoint: params.bin holds " + std::to_string(bytes) +
                      " bytes, expected " + std::to_string(expected));
  for (auto* blobs : {&bundle.params, &bundle.state})
    for (auto& blob : *blobs)
      bin.read(reinterpret_cast<char*>(blob.values.data()),
               static_cast<std::streamsize>(blob.values.size() * sizeof(float)));
  if (!bin) throw ConfigError("checkpoint: failed reading " + bin_path.string());
  return bundle;
}

}  // namespace duodet
