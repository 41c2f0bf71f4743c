#include "qrkit/weights_io.hpp"

#include <cstring>
#include <functional>
#include <map>

#include <fmt/core.h>
#include <json.hpp>

#include "qrkit/errors.hpp"
#include "qrkit/io_util.hpp"

namespace qrkit {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'Q', 'R', 'K', 'W'};
constexpr int kVersion = 1;

struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float>* data;
  Matrix* matrix;  // set for 2-D tensors so rows/cols can be filled
};

// Manifest order of every tensor. pos_embed is listed only when present.
std::vector<TensorRef> tensor_refs(ModelWeights& w, bool with_pos) {
  const std::size_t d = w.config.d_model, v = w.config.vocab_size, f = w.config.d_ff;
  std::vector<TensorRef> refs;
  auto mat = [&](std::string name, Matrix& m, std::size_t r, std::size_t c) {
    refs.push_back({std::move(name), {r, c}, &m.data, &m});
  };
  auto vec = [&](std::string name, std::vector<float>& x, std::size_t n) {
    refs.push_back({std::move(name), {n}, &x, nullptr});
  };
  mat("tok_embed", w.tok_embed, v, d);
  if (with_pos) {
    if (!w.pos_embed) w.pos_embed = Matrix();
    mat("pos_embed", *w.pos_embed, w.config.max_seq_len, d);
  }
  w.layers.resize(w.config.n_layers);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& L = w.layers[i];
    const std::string p = fmt::format("layers.{}.", i);
    vec(p + "ln1.weight", L.ln1_weight, d);
    vec(p + "ln1.bias", L.ln1_bias, d);
    mat(p + "attn.wq", L.wq, d, d);
    mat(p + "attn.wk", L.wk, d, d);
    mat(p + "attn.wv", L.wv, d, d);
    mat(p + "attn.wo", L.wo, d, d);
    vec(p + "ln2.weight", L.ln2_weight, d);
    vec(p + "ln2.bias", L.ln2_bias, d);
    mat(p + "mlp.w1", L.w1, d, f);
    vec(p + "mlp.b1", L.b1, f);
    mat(p + "mlp.w2", L.w2, f, d);
    vec(p + "mlp.b2", L.b2, d);
  }
  vec("ln_f.weight", w.lnf_weight, d);
  vec("ln_f.bias", w.lnf_bias, d);
  mat("unembed", w.unembed, d, v);
  return refs;
}

std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

void assign_shape(TensorRef& ref) {
  if (ref.matrix) {
    ref.matrix->rows = ref.shape[0];
    ref.matrix->cols = ref.shape[1];
  }
  ref.data->resize(numel(ref.shape));
}

std::map<std::string, TensorRef*> index_refs(std::vector<TensorRef>& refs) {
  std::map<std::string, TensorRef*> by_name;
  for (auto& r : refs) by_name[r.name] = &r;
  return by_name;
}

ModelWeights parse_binary(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError("weights: missing QRKW magic");
  }
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) {
    header_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[4 + i])) << (8 * i);
  }
  if (bytes.size() < 12 + header_len) throw ParseError("weights: file too small for header");
  json header;
  try {
    header = json::parse(bytes.substr(12, header_len));
  } catch (const json::exception& e) {
    throw ParseError(std::string("weights: bad header: ") + e.what());
  }
  if (header.value("version", 0) != kVersion) {
    throw ParseError(fmt::format("weights: unsupported version {}", header.value("version", 0)));
  }

  ModelWeights w;
  w.config = header.at("config").get<ModelConfig>();
  w.config.validate();
  const auto& manifest = header.at("tensors");
  bool with_pos = false;
  for (const auto& t : manifest) with_pos |= t.at("name").get<std::string>() == "pos_embed";
  auto refs = tensor_refs(w, with_pos);
  auto by_name = index_refs(refs);
  if (manifest.size() != refs.size()) {
    throw ParseError(fmt::format("weights: manifest lists {} tensors, expected {}",
                                 manifest.size(), refs.size()));
  }

  std::size_t pos = 12 + header_len;
  for (const auto& t : manifest) {
    const auto name = t.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("weights: unexpected tensor " + name);
    TensorRef& ref = *it->second;
    if (t.at("shape").get<std::vector<std::size_t>>() != ref.shape) {
      throw ParseError("weights: shape mismatch for tensor " + name);
    }
    assign_shape(ref);
    const std::size_t n = ref.data->size();
    if (bytes.size() < pos + 4 * n) throw ParseError("weights: body truncated at tensor " + name);
    for (std::size_t i = 0; i < n; ++i, pos += 4) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) {
        u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + b])) << (8 * b);
      }
      float f;
      std::memcpy(&f, &u, 4);
      (*ref.data)[i] = f;
    }
    by_name.erase(it);
  }
  if (pos != bytes.size()) throw ParseError("weights: trailing bytes after body");
  if (!with_pos) w.pos_embed.reset();
  w.validate();
  return w;
}

void flatten_into(const json& j, std::vector<float>& out) {
  if (j.is_array()) {
    for (const auto& e : j) flatten_into(e, out);
  } else {
    out.push_back(j.get<float>());
  }
}

ModelWeights parse_json(const std::string& bytes) {
  json doc;
  try {
    doc = json::parse(bytes);
  } catch (const json::exception& e) {
    throw ParseError(std::string("weights: bad JSON: ") + e.what());
  }
  ModelWeights w;
  w.config = doc.at("config").get<ModelConfig>();
  w.config.validate();
  const auto& tensors = doc.at("tensors");
  auto refs = tensor_refs(w, tensors.contains("pos_embed"));
  for (auto& ref : refs) {
    if (!tensors.contains(ref.name)) throw ParseError("weights: missing tensor " + ref.name);
    std::vector<float> flat;
    flatten_into(tensors.at(ref.name), flat);
    if (flat.size() != numel(ref.shape)) {
      throw ParseError(fmt::format("weights: tensor {} has {} values, expected {}", ref.name,
                                   flat.size(), numel(ref.shape)));
    }
    assign_shape(ref);
    *ref.data = std::move(flat);
  }
  if (tensors.size() != refs.size()) throw ParseError("weights: unexpected extra tensors");
  w.validate();
  return w;
}

}  // namespace

ModelWeights parse_weights(const std::string& bytes) {
  try {
    const auto first = bytes.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && bytes[first] == '{') return parse_json(bytes);
    return parse_binary(bytes);
  } catch (const json::exception& e) {
    throw ParseError(std::string("weights: ") + e.what());
  }
}

ModelWeights load_weights(const std::filesystem::path& path) {
  try {
    return parse_weights(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string serialize_weights_binary(const ModelWeights& weights) {
  weights.validate();
  ModelWeights copy = weights;
  auto refs = tensor_refs(copy, weights.pos_embed.has_value());
  json manifest = json::array();
  for (const auto& r : refs) manifest.push_back({{"name", r.name}, {"shape", r.shape}});
  const json header = {{"format", "qrkit-weights"},
                       {"version", kVersion},
                       {"config", weights.config},
                       {"tensors", manifest}};
  const std::string h = header.dump();
  std::string out(kMagic, 4);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((h.size() >> (8 * i)) & 0xff));
  out += h;
  for (const auto& r : refs) {
    for (float f : *r.data) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
  }
  return out;
}

std::string serialize_weights_json(const ModelWeights& weights) {
  weights.validate();
  ModelWeights copy = weights;
  auto refs = tensor_refs(copy, weights.pos_embed.has_value());
  json tensors = json::object();
  for (const auto& r : refs) {
    if (r.shape.size() == 1) {
      tensors[r.name] = *r.data;
    } else {
      json rows = json::array();
      for (std::size_t i = 0; i < r.shape[0]; ++i) {
        rows.push_back(std::vector<float>(r.data->begin() + i * r.shape[1],
                                          r.data->begin() + (i + 1) * r.shape[1]));
      }
      tensors[r.name] = rows;
    }
  }
  return json{{"config", weights.config}, {"tensors", tensors}}.dump();
}

void save_weights_binary(const ModelWeights& weights, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_weights_binary(weights));
}

void save_weights_json(const ModelWeights& weights, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_weights_json(weights));
}

}  // namespace qrkit
