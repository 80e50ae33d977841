// Copyright (C) 2026 the duodet authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "duodet/errors.hpp"
#include "duodet/model.hpp"

// Checkpoints are a directory holding manifest.json and params.bin. The
// manifest carries the format version, the full detector configuration and
// the name/shape/offset of every tensor; params.bin is the matching flat
// little-endian float32 stream, parameters first, then normalization running
// statistics.
namespace duodet {

inline constexpr int kCheckpointFormatVersion = 1;

struct TensorBlob {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

struct CheckpointBundle {
  int format_version = kCheckpointFormatVersion;
  DetectorConfig config;
  std::vector<TensorBlob> params;
  std::vector<TensorBlob> state;
};

void save_bundle(const CheckpointBundle& bundle, const std::string& dir);
CheckpointBundle load_bundle(const std::string& dir);

template <class T>
CheckpointBundle pack_checkpoint(Detector<T>& model) {
  CheckpointBundle out;
  out.config = model.config();
  auto flatten = [](const std::string& name, const Tensor<T>& t) {
    TensorBlob blob{name, t.dims(), {}};
    blob.values.reserve(t.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      blob.values.push_back(static_cast<float>(t[i]));
    return blob;
  };
  for (auto* p : model.params()) out.params.push_back(flatten(p->name, p->value));
  for (auto& [name, tensor] : model.state()) out.state.push_back(flatten(name, *tensor));
  return out;
}

/// Copies bundle values into an already constructed model. The model must
/// expose exactly the tensors the bundle names, in order and shape.
template <class T>
void unpack_checkpoint(Detector<T>& model, const CheckpointBundle& bundle) {
  if (bundle.format_version != kCheckpointFormatVersion)
    throw ConfigError("checkpoint: unsupported format version " +
                      std::to_string(bundle.format_version));
  if (model.config().variant != bundle.config.variant)
    throw ConfigError(std::string("checkpoint: variant mismatch (model is ") +
                      variant_name(model.config().variant) + ", checkpoint holds " +
                      variant_name(bundle.config.variant) + ")");
  auto restore = [](const TensorBlob& blob, Tensor<T>& dst, const std::string& kind) {
    if (blob.shape != dst.dims())
      throw ConfigError("checkpoint: shape mismatch for " + kind + " '" + blob.name + "'");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(blob.values[i]);
  };
  auto params = model.params();
  if (params.size() != bundle.params.size())
    throw ConfigError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->name != bundle.params[i].name)
      throw ConfigError("checkpoint: expected parameter '" + params[i]->name + "', found '" +
                        bundle.params[i].name + "'");
    restore(bundle.params[i], params[i]->value, "parameter");
  }
  auto state = model.state();
  if (state.size() != bundle.state.size())
    throw ConfigError("checkpoint: state tensor count mismatch");
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i].first != bundle.state[i].name)
      throw ConfigError("checkpoint: expected state tensor '" + state[i].first + "', found '" +
                        bundle.state[i].name + "'");
    restore(bundle.state[i], *state[i].second, "state tensor");
  }
}

template <class T>
void save_checkpoint(Detector<T>& model, const std::string& dir) {
  save_bundle(pack_checkpoint(model), dir);
}

/// Rebuilds the detector from the configuration echoed in the manifest.
template <class T>
Detector<T> load_checkpoint(const std::string& dir) {
  auto bundle = load_bundle(dir);
  Detector<T> model(bundle.config);
  unpack_checkpoint(model, bundle);
  return model;
}

}  // namespace duodet
