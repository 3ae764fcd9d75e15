#pragma once

#include <map>
#include <string>
#include <vector>

namespace orstereo {

using KeyValues = std::map<std::string, std::string>;

/// key=value lines; '#' starts a comment; blank lines ignored.
KeyValues parse_key_values(const std::string &text, const std::string &origin = "<string>");
KeyValues read_key_values(const std::string &path);
std::string format_key_values(const KeyValues &kv);

int kv_int(const KeyValues &kv, const std::string &key, int fallback);
double kv_double(const KeyValues &kv, const std::string &key, double fallback);
bool kv_bool(const KeyValues &kv, const std::string &key, bool fallback);
std::string kv_string(const KeyValues &kv, const std::string &key, const std::string &fallback);
std::vector<int> kv_int_list(const KeyValues &kv, const std::string &key, const std::vector<int> &fallback);
std::string join_ints(const std::vector<int> &v);
/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace orstereo
