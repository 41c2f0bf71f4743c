#pragma once

#include <filesystem>
#include <string>

#include "qrkit/model.hpp"

namespace qrkit {

// Weight container:
//   bytes 0..3   "QRKW"
//   bytes 4..11  header length N, uint64 little-endian
//   N bytes      JSON header {"format", "version", "config", "tensors": [{"name", "shape"}]}
//   body         row-major little-endian float32 tensors in manifest order
//
// A pure-JSON variant {"config": {...}, "tensors": {"name": nested arrays}} is
// accepted for hand-written models. load_weights picks the variant from the
// first non-whitespace byte ('{' means JSON).

ModelWeights load_weights(const std::filesystem::path& path);
ModelWeights parse_weights(const std::string& bytes);

std::string serialize_weights_binary(const ModelWeights& weights);
std::string serialize_weights_json(const ModelWeights& weights);

void save_weights_binary(const ModelWeights& weights, const std::filesystem::path& path);
void save_weights_json(const ModelWeights& weights, const std::filesystem::path& path);

}  // namespace qrkit
