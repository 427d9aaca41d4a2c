#include "atv/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace atv::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) {
    throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean '" + text + "' for key '" + key + "' (use true/false)");
}

template <class T>
std::string format_number(T v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

template <class T, std::size_t N>
std::array<T, N> parse_list(const std::string& key, const std::string& text) {
  std::array<T, N> out{};
  std::stringstream ss(text);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == N) break;
    out[n++] = parse_number<T>(key, trim(item));
  }
  if (n != N || ss.rdbuf()->in_avail() > 0) {
    throw ConfigError("key '" + key + "' needs exactly " + std::to_string(N) +
                      " comma-separated values, got '" + text + "'");
  }
  return out;
}

template <class T, std::size_t N>
std::string format_list(const std::array<T, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + format_number(a[i]);
  return out;
}

struct Field {
  std::string key, help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class Access>
Field field(std::string key, std::string help, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  Field f;
  f.key = key;
  f.help = std::move(help);
  f.get = [access](const RunConfig& c) {
    const T& v = access(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, bool>) {
      return std::string(v ? "true" : "false");
    } else if constexpr (std::is_arithmetic_v<T>) {
      return format_number(v);
    } else {
      return format_list(v);
    }
  };
  f.set = [access, key](RunConfig& c, const std::string& text) {
    T& v = access(c);
    if constexpr (std::is_same_v<T, bool>) {
      v = parse_bool(key, text);
    } else if constexpr (std::is_arithmetic_v<T>) {
      v = parse_number<T>(key, text);
    } else {
      v = parse_list<typename T::value_type, std::tuple_size_v<T>>(key, text);
    }
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field("seed", "root seed; every component derives its stream from it",
            [](RunConfig& c) -> auto& { return c.network.seed; }),
      field("depth_counts", "hypotheses per scale, finest first",
            [](RunConfig& c) -> auto& { return c.network.depth_counts; }),
      field("lambda", "adaptive range scale", [](RunConfig& c) -> auto& { return c.network.lambda; }),
      field("groups", "correlation groups G", [](RunConfig& c) -> auto& { return c.network.groups; }),
      field("channels", "feature channels C per scale",
            [](RunConfig& c) -> auto& { return c.network.channels; }),
      field("base_channels", "first encoder width",
            [](RunConfig& c) -> auto& { return c.network.base_channels; }),
      field("window", "attention window k (odd)", [](RunConfig& c) -> auto& { return c.network.window; }),
      field("regularizer_channels", "3D hourglass base width",
            [](RunConfig& c) -> auto& { return c.network.regularizer_channels; }),
      field("beta1", "feature-wise loss weight", [](RunConfig& c) -> auto& { return c.network.loss.beta1; }),
      field("beta2", "depth loss weight", [](RunConfig& c) -> auto& { return c.network.loss.beta2; }),
      field("epsilon", "neighbour-balance weight inside the feature loss",
            [](RunConfig& c) -> auto& { return c.network.loss.epsilon; }),
      field("scale_weights", "depth loss weight per scale, finest first",
            [](RunConfig& c) -> auto& { return c.network.loss.scale_weights; }),
      field("loss_block", "neighbour-balance block size (odd)",
            [](RunConfig& c) -> auto& { return c.network.loss.block; }),
      field("learning_rate", "optimizer step size",
            [](RunConfig& c) -> auto& { return c.network.learning_rate; }),
      field("source_views", "source views per training sample",
            [](RunConfig& c) -> auto& { return c.network.source_views; }),
      field("batch_size", "samples per optimizer step", [](RunConfig& c) -> auto& { return c.batch_size; }),
      field("steps", "optimizer steps; 0 means epochs * training views",
            [](RunConfig& c) -> auto& { return c.steps; }),
      field("epochs", "passes over the training views when steps = 0",
            [](RunConfig& c) -> auto& { return c.epochs; }),
      field("checkpoint_every", "steps between checkpoints",
            [](RunConfig& c) -> auto& { return c.checkpoint_every; }),
      field("log_every", "steps between loss log lines", [](RunConfig& c) -> auto& { return c.log_every; }),
      field("crop_height", "training crop height (0: full image)",
            [](RunConfig& c) -> auto& { return c.crop_height; }),
      field("crop_width", "training crop width (0: full image)",
            [](RunConfig& c) -> auto& { return c.crop_width; }),
      field("test_source_views", "source views per reference view at inference",
            [](RunConfig& c) -> auto& { return c.test_source_views; }),
      field("prob_min", "photometric filter confidence threshold",
            [](RunConfig& c) -> auto& { return c.fusion.prob_min; }),
      field("reproj_max", "geometric filter reprojection error (pixels)",
            [](RunConfig& c) -> auto& { return c.fusion.reproj_max; }),
      field("rel_depth_max", "geometric filter relative depth error",
            [](RunConfig& c) -> auto& { return c.fusion.rel_depth_max; }),
      field("min_views", "consistent views required, own view included",
            [](RunConfig& c) -> auto& { return c.fusion.min_views; }),
      field("suppress_duplicates", "skip source pixels consumed by earlier views",
            [](RunConfig& c) -> auto& { return c.fusion.suppress_duplicates; }),
      field("max_dist", "outlier cap for accuracy and completeness",
            [](RunConfig& c) -> auto& { return c.max_dist; }),
      field("tau", "F-score distance threshold (required by eval, 0 = unset)",
            [](RunConfig& c) -> auto& { return c.tau; }),
  };
  return all;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(*this, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  try {
    network.validate();
    fusion.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (steps < 0 || epochs < 0) throw ConfigError("steps and epochs must be >= 0");
  if (checkpoint_every < 1 || log_every < 1) throw ConfigError("checkpoint_every and log_every must be >= 1");
  if (crop_height < 0 || crop_width < 0 || crop_height % 4 || crop_width % 4) {
    throw ConfigError("crop sizes must be non-negative multiples of 4");
  }
  if (test_source_views < 1) throw ConfigError("test_source_views must be >= 1");
  if (!(max_dist > 0.0)) throw ConfigError("max_dist must be positive");
  if (tau < 0.0) throw ConfigError("tau must be positive when set");
}

std::vector<std::pair<std::string, std::string>> describe_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.help);
  return out;
}

void apply_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + s + "'");
  return {trim(s.substr(0, eq)), trim(s.substr(eq + 1))};
}

}  // namespace atv::config
