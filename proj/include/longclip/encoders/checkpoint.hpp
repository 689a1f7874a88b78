#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "longclip/encoders/model.hpp"

namespace longclip::encoders {

// Layout: magic line, one line of JSON header, then every tensor's values as
// little-endian IEEE floats in header order.
inline constexpr const char* kCheckpointMagic = "LONGCLIP-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

template <typename T = double>
struct Checkpoint {
  Model<T> model;
  std::size_t step = 0;
};

inline nlohmann::json to_json(const TextEncoderConfig& c) {
  return {{"context_length", c.context_length}, {"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},
          {"num_layers", c.num_layers},         {"num_heads", c.num_heads},   {"output_dim", c.output_dim},
          {"mlp_ratio", c.mlp_ratio}};
}

inline nlohmann::json to_json(const ImageEncoderConfig& c) {
  return {{"input_dim", c.input_dim},
          {"hidden_dim", c.hidden_dim},
          {"num_layers", c.num_layers},
          {"output_dim", c.output_dim}};
}

inline TextEncoderConfig text_config_from_json(const nlohmann::json& j) {
  TextEncoderConfig c;
  c.context_length = j.at("context_length").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  return c;
}

inline ImageEncoderConfig image_config_from_json(const nlohmann::json& j) {
  ImageEncoderConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.output_dim = j.at("output_dim").get<std::size_t>();
  return c;
}

namespace detail {

template <typename T>
const char* dtype_name() {
  return std::is_same_v<T, float> ? "float32" : "float64";
}

template <typename U, typename T>
void read_values(std::istream& in, DenseArray<T>& a, const std::string& where) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  std::vector<U> buf(a.size());
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(U)));
  if (!in) throw ParseError(where, "checkpoint ends before all tensor values");
  for (std::size_t k = 0; k < buf.size(); ++k) a[k] = static_cast<T>(buf[k]);
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["dtype"] = detail::dtype_name<T>();
  header["step"] = ckpt.step;
  header["text"] = to_json(ckpt.model.text);
  header["image"] = to_json(ckpt.model.image);
  header["log_scale"] = static_cast<double>(ckpt.model.log_scale());
  auto& tensors = header["tensors"] = nlohmann::json::array();
  for (const auto& [name, a] : ckpt.model.params) tensors.push_back({{"name", name}, {"shape", a.shape()}});

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << kCheckpointMagic << '\n' << header.dump() << '\n';
  for (const auto& [name, a] : ckpt.model.params) {
    out.write(reinterpret_cast<const char*>(a.data().data()), static_cast<std::streamsize>(a.size() * sizeof(T)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

// Loads a checkpoint of either stored precision into a model of precision T.
template <typename T = double>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + where);
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw ParseError(where, "not a checkpoint file");
  std::getline(in, header_line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where, std::string("bad checkpoint header: ") + e.what());
  }

  Checkpoint<T> ckpt;
  try {
    if (header.at("version").get<int>() != kCheckpointVersion) {
      throw ParseError(where, "unsupported checkpoint version " + header.at("version").dump());
    }
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != "float32" && dtype != "float64") throw ParseError(where, "unknown dtype " + dtype);
    ckpt.step = header.at("step").get<std::size_t>();
    ckpt.model.text = text_config_from_json(header.at("text"));
    ckpt.model.image = image_config_from_json(header.at("image"));
    validate_pair(ckpt.model.text, ckpt.model.image);
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      DenseArray<T> a(t.at("shape").get<Shape>());
      if (dtype == "float32") {
        detail::read_values<float>(in, a, where + ":" + name);
      } else {
        detail::read_values<double>(in, a, where + ":" + name);
      }
      ckpt.model.params.emplace(name, std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where, std::string("bad checkpoint header: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(where, "trailing bytes after tensor data");

  // Every tensor the configs call for must be present with the right shape.
  const auto expected = init_params<T>(ckpt.model.text, ckpt.model.image, 0);
  for (const auto& [name, a] : expected) {
    auto it = ckpt.model.params.find(name);
    if (it == ckpt.model.params.end()) throw ParseError(where, "missing tensor " + name);
    if (it->second.shape() != a.shape()) throw ParseError(where, "tensor " + name + " has the wrong shape");
  }
  if (ckpt.model.params.size() != expected.size()) throw ParseError(where, "unexpected extra tensors");
  return ckpt;
}

}  // namespace longclip::encoders
