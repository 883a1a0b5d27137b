#include "fhvae/config.hpp"

#include <fstream>
#include <limits>
#include <set>

#include "fhvae/checkpoint.hpp"

namespace fhvae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string render_value(int v) { return std::to_string(v); }
std::string render_value(double v) { return format_double(v); }
std::string render_value(bool v) { return v ? "true" : "false"; }
std::string render_value(std::uint64_t v) { return std::to_string(v); }
std::string render_value(const std::string& v) { return v; }

void parse_value(const std::string& key, const std::string& text, int& out) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size() || v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
      throw std::invalid_argument(text);
    out = static_cast<int>(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
}

void parse_value(const std::string& key, const std::string& text, double& out) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    out = v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
}

void parse_value(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") {
    out = true;
  } else if (text == "false" || text == "0" || text == "no" || text == "off") {
    out = false;
  } else {
    throw ConfigError(key + ": expected a boolean, got '" + text + "'");
  }
}

void parse_value(const std::string& key, const std::string& text, std::uint64_t& out) {
  try {
    if (text.empty() || text[0] == '-') throw std::invalid_argument(text);
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    out = v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  }
}

void parse_value(const std::string&, const std::string& text, std::string& out) { out = text; }

KeyValues RunSettings::to_kv() const {
  KeyValues kv;
  store_fields(kv, "model", model);
  store_fields(kv, "priors", priors);
  store_fields(kv, "train", train);
  store_fields(kv, "frontend", frontend);
  store_fields(kv, "synth", synth);
  kv["run.workers"] = render_value(workers);
  return kv;
}

void RunSettings::apply(const KeyValues& kv) {
  const KeyValues known = to_kv();
  for (const auto& [k, v] : kv)
    if (!known.contains(k)) throw ConfigError("unknown configuration key '" + k + "'");
  load_fields(kv, "model", model);
  load_fields(kv, "priors", priors);
  load_fields(kv, "train", train);
  load_fields(kv, "frontend", frontend);
  load_fields(kv, "synth", synth);
  if (auto it = kv.find("run.workers"); it != kv.end()) parse_value(it->first, it->second, workers);
}

void RunSettings::validate() const {
  model.validate();
  priors.validate();
  train.validate();
  frontend.validate();
  synth.validate();
  if (workers < 1) throw ConfigError("run.workers must be >= 1");
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_config_file(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file " + path.string());
  out << "# resolved configuration\n";
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  if (!out) throw IoError("failed writing config file " + path.string());
}

KeyValues parse_overrides(const std::vector<std::string>& items) {
  KeyValues kv;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not of the form key=value");
    kv[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
  return kv;
}

}  // namespace fhvae
