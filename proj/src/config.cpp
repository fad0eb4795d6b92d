#include "fdseg/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace fdseg {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ConfigError("config: bad value '" + text + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: bad boolean '" + text + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"learning_rate", [](RunConfig& c, auto& k, auto& v) { c.train.learning_rate = parse_number<double>(k, v); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_number<int>(k, v); }},
      {"max_epochs", [](RunConfig& c, auto& k, auto& v) { c.train.max_epochs = parse_number<int>(k, v); }},
      {"patience", [](RunConfig& c, auto& k, auto& v) { c.train.patience = parse_number<int>(k, v); }},
      {"lambda_fd", [](RunConfig& c, auto& k, auto& v) { c.train.lambda_fd = parse_number<double>(k, v); }},
      {"lambda_sweep", [](RunConfig& c, auto& k, auto& v) { c.lambda_sweep = parse_list<double>(k, v); }},
      {"include_bce", [](RunConfig& c, auto& k, auto& v) { c.train.include_bce = parse_bool(k, v); }},
      {"augment", [](RunConfig& c, auto& k, auto& v) { c.train.augment = parse_bool(k, v); }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_number<std::uint64_t>(k, v); }},
      {"threads", [](RunConfig& c, auto& k, auto& v) { c.train.threads = parse_number<int>(k, v); }},
      {"adam_beta1", [](RunConfig& c, auto& k, auto& v) { c.train.adam_beta1 = parse_number<double>(k, v); }},
      {"adam_beta2", [](RunConfig& c, auto& k, auto& v) { c.train.adam_beta2 = parse_number<double>(k, v); }},
      {"adam_eps", [](RunConfig& c, auto& k, auto& v) { c.train.adam_eps = parse_number<double>(k, v); }},
      {"stages", [](RunConfig& c, auto& k, auto& v) { c.train.net.stages = parse_number<int>(k, v); }},
      {"stage_channels", [](RunConfig& c, auto& k, auto& v) { c.train.net.stage_channels = parse_list<int>(k, v); }},
      {"blocks_per_stage", [](RunConfig& c, auto& k, auto& v) { c.train.net.blocks_per_stage = parse_number<int>(k, v); }},
      {"kernel_size", [](RunConfig& c, auto& k, auto& v) { c.train.net.kernel_size = parse_number<int>(k, v); }},
      {"expansion", [](RunConfig& c, auto& k, auto& v) { c.train.net.expansion = parse_number<int>(k, v); }},
      {"input_size", [](RunConfig& c, auto& k, auto& v) { c.train.net.input_h = c.train.net.input_w = parse_number<int>(k, v); }},
      {"n_train", [](RunConfig& c, auto& k, auto& v) { c.n_train = parse_number<int>(k, v); }},
      {"n_val", [](RunConfig& c, auto& k, auto& v) { c.n_val = parse_number<int>(k, v); }},
      {"n_test", [](RunConfig& c, auto& k, auto& v) { c.n_test = parse_number<int>(k, v); }},
      {"data_seed", [](RunConfig& c, auto& k, auto& v) { c.data_seed = parse_number<std::uint64_t>(k, v); }},
      {"data_dir", [](RunConfig& c, auto&, auto& v) { c.data_dir = v; }},
      {"log_wall_time", [](RunConfig& c, auto& k, auto& v) { c.log_wall_time = parse_bool(k, v); }},
      {"gallery_count", [](RunConfig& c, auto& k, auto& v) { c.gallery_count = parse_number<int>(k, v); }},
  };
  return table;
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

RunConfig apply_key_values(RunConfig base, const KeyValues& values) {
  const auto& table = setters();
  for (const auto& [key, value] : values) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(base, key, value);
  }
  return base;
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace fdseg
