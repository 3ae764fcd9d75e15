#include "orstereo/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace orstereo {
namespace {

constexpr const char *kMagic = "ORSTEREO-CHECKPOINT 1";

void put_f32_le(std::string &out, float v) {
  auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
}

float get_f32_le(const unsigned char *p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

Shape parse_shape(const std::string &s, const std::string &path) {
  Shape shape;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, 'x')) {
    try {
      shape.push_back(std::stoi(item));
    } catch (const std::exception &) {
      throw ValidationError(path + ": bad shape '" + s + "' in checkpoint manifest");
    }
  }
  return shape;
}

}  // namespace

void save_checkpoint(const std::string &path, const ModelConfig &config, const ParamStore<float> &params,
                     const KeyValues &meta) {
  std::string manifest, payload;
  for (const auto &[k, v] : config.to_key_values()) manifest += "config " + k + "=" + v + "\n";
  for (const auto &[k, v] : meta) manifest += "meta " + k + "=" + v + "\n";
  for (const auto &name : params.names()) {
    const Tensor<float> &t = params.get(name).value();
    std::string shape;
    for (int i = 0; i < t.rank(); ++i) shape += (i ? "x" : "") + std::to_string(t.dim(i));
    manifest += "param " + name + " f32 " + shape + " " + std::to_string(payload.size()) + " " +
                std::to_string(t.size() * 4) + "\n";
    for (float v : t.data()) put_f32_le(payload, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  out << kMagic << "\n" << "manifest-bytes " << manifest.size() << "\n" << manifest;
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw ValidationError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::istringstream head(bytes);
  std::string magic, tag;
  std::getline(head, magic);
  if (magic != kMagic) throw ValidationError(path + ": not an orstereo checkpoint");
  std::size_t manifest_bytes = 0;
  head >> tag >> manifest_bytes;
  if (tag != "manifest-bytes") throw ValidationError(path + ": missing manifest-bytes header");
  head.get();
  std::size_t manifest_start = static_cast<std::size_t>(head.tellg());
  if (manifest_start + manifest_bytes > bytes.size()) throw ValidationError(path + ": truncated manifest");
  std::string manifest = bytes.substr(manifest_start, manifest_bytes);
  const std::size_t payload_start = manifest_start + manifest_bytes;
  const auto *payload = reinterpret_cast<const unsigned char *>(bytes.data()) + payload_start;
  const std::size_t payload_size = bytes.size() - payload_start;

  KeyValues config_kv;
  Checkpoint ck;
  std::istringstream lines(manifest);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config" || kind == "meta") {
      std::string rest;
      std::getline(ls, rest);
      rest.erase(0, rest.find_first_not_of(' '));
      auto eq = rest.find('=');
      if (eq == std::string::npos) throw ValidationError(path + ": bad manifest line '" + line + "'");
      (kind == "config" ? config_kv : ck.meta)[rest.substr(0, eq)] = rest.substr(eq + 1);
    } else if (kind == "param") {
      std::string name, dtype, shape_s;
      std::size_t offset = 0, nbytes = 0;
      ls >> name >> dtype >> shape_s >> offset >> nbytes;
      if (!ls || dtype != "f32") throw ValidationError(path + ": bad param line '" + line + "'");
      Tensor<float> t(parse_shape(shape_s, path));
      if (nbytes != t.size() * 4 || offset + nbytes > payload_size)
        throw ValidationError(path + ": payload for '" + name + "' truncated or inconsistent");
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f32_le(payload + offset + 4 * i);
      ck.params.add(name, std::move(t));
    } else {
      throw ValidationError(path + ": unknown manifest entry '" + kind + "'");
    }
  }
  ck.config = ModelConfig::from_key_values(config_kv);
  return ck;
}

}  // namespace orstereo
