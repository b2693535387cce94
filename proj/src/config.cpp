#include "dap/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dap/error.hpp"

namespace dap::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += items[i];
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) {
    throw ConfigError("betas must lie in (0, 1)");
  }
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (height < 16 || width < 16 || height % 16 || width % 16) {
    throw ConfigError("resolution must be at least 16x16 and divisible by 16");
  }
  if (base_channels == 0 || umb_width == 0) throw ConfigError("channel widths must be positive");
  if (pixel_budget == 0) throw ConfigError("pixel_budget must be positive");
  keb.validate();
}

std::size_t TrainConfig::resolve_warmup(std::size_t total_steps) const {
  if (warmup_steps) return std::min(*warmup_steps, total_steps);
  return static_cast<std::size_t>(std::round(0.05 * static_cast<double>(total_steps)));
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "lr = " << fmt(lr) << "\n";
  os << "betas = " << fmt(beta1) << ", " << fmt(beta2) << "\n";
  os << "weight_decay = " << fmt(weight_decay) << "\n";
  os << "epochs = " << epochs << "\n";
  os << "batch_size = " << batch_size << "\n";
  if (warmup_steps) os << "warmup_steps = " << *warmup_steps << "\n";
  os << "seed = " << seed << "\n";
  os << "sources = " << join(sources) << "\n";
  os << "resolution = " << height << "x" << width << "\n";
  os << "base_channels = " << base_channels << "\n";
  os << "umb_width = " << umb_width << "\n";
  os << "pixel_budget = " << pixel_budget << "\n";
  os << "keb_strategy = " << keb::strategy_name(keb.strategy) << "\n";
  os << "keb_alpha = " << fmt(keb.alpha) << "\n";
  os << "keb_renormalize = " << (keb.renormalize ? "true" : "false") << "\n";
  std::vector<std::string> classes;
  for (auto c : keb.keep_classes) classes.emplace_back(io::class_name(c));
  os << "keb_keep_classes = " << join(classes) << "\n";
  return os.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "lr") {
      c.lr = to_double(key, value);
    } else if (key == "betas") {
      const auto parts = split_list(value);
      if (parts.size() != 2) throw ConfigError("betas expects two values");
      c.beta1 = to_double(key, parts[0]);
      c.beta2 = to_double(key, parts[1]);
    } else if (key == "weight_decay") {
      c.weight_decay = to_double(key, value);
    } else if (key == "epochs") {
      c.epochs = to_uint(key, value);
    } else if (key == "batch_size") {
      c.batch_size = to_uint(key, value);
    } else if (key == "warmup_steps") {
      c.warmup_steps = to_uint(key, value);
    } else if (key == "seed") {
      c.seed = to_uint(key, value);
    } else if (key == "sources") {
      c.sources = split_list(value);
    } else if (key == "resolution") {
      const auto x = value.find('x');
      if (x == std::string::npos) throw ConfigError("resolution expects HxW");
      c.height = to_uint(key, trim(value.substr(0, x)));
      c.width = to_uint(key, trim(value.substr(x + 1)));
    } else if (key == "base_channels") {
      c.base_channels = to_uint(key, value);
    } else if (key == "umb_width") {
      c.umb_width = to_uint(key, value);
    } else if (key == "pixel_budget") {
      c.pixel_budget = to_uint(key, value);
    } else if (key == "keb_strategy") {
      c.keb.strategy = keb::parse_strategy(value);
    } else if (key == "keb_alpha") {
      c.keb.alpha = to_double(key, value);
    } else if (key == "keb_renormalize") {
      c.keb.renormalize = to_bool(key, value);
    } else if (key == "keb_keep_classes") {
      c.keb.keep_classes.clear();
      try {
        for (const auto& name : split_list(value)) c.keb.keep_classes.insert(io::parse_class(name));
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace dap::train
