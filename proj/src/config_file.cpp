#include "orstereo/config_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "orstereo/tensor.hpp"

namespace orstereo {
namespace {

std::string trim(const std::string &s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string &text, const std::string &origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path);
}

std::string format_key_values(const KeyValues &kv) {
  std::string out;
  for (const auto &[k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

int kv_int(const KeyValues &kv, const std::string &key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception &) {
    throw ValidationError("config key '" + key + "': expected an integer, got '" + it->second + "'");
  }
}

double kv_double(const KeyValues &kv, const std::string &key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception &) {
    throw ValidationError("config key '" + key + "': expected a number, got '" + it->second + "'");
  }
}

bool kv_bool(const KeyValues &kv, const std::string &key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string &v = it->second;
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ValidationError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::string kv_string(const KeyValues &kv, const std::string &key, const std::string &fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

std::vector<int> kv_int_list(const KeyValues &kv, const std::string &key, const std::vector<int> &fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    KeyValues one{{key, trim(item)}};
    out.push_back(kv_int(one, key, 0));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string join_ints(const std::vector<int> &v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace orstereo
