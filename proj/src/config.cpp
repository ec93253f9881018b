#include "tumordet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace tumordet {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError("config key '" + key + "': not a number: '" + text + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError("config key '" + key + "': not an integer: '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

// Binds each key to a reader and a writer over one RunConfig field.
struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string&)> read;
  std::function<std::string(const RunConfig&)> write;
};

template <typename T>
Field scalar(T RunConfig::*member) {
  Field f;
  f.read = [member](RunConfig& c, const std::string& key, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>) {
      c.*member = parse_bool(key, v);
    } else if constexpr (std::is_floating_point_v<T>) {
      c.*member = parse_double(key, v);
    } else {
      const long long x = parse_int(key, v);
      if constexpr (std::is_unsigned_v<T>) {
        if (x < 0) throw ConfigError("config key '" + key + "': must be non-negative");
      }
      c.*member = static_cast<T>(x);
    }
  };
  f.write = [member](const RunConfig& c) -> std::string {
    if constexpr (std::is_same_v<T, bool>) {
      return c.*member ? "true" : "false";
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_double(c.*member);
    } else {
      return std::to_string(c.*member);
    }
  };
  return f;
}

template <typename Container>
Field list(Container RunConfig::*member) {
  using T = typename Container::value_type;
  Field f;
  f.read = [member](RunConfig& c, const std::string& key, const std::string& v) {
    const auto items = split_list(v);
    Container& dst = c.*member;
    if constexpr (requires { dst.resize(0); }) {
      dst.resize(items.size());
    } else if (items.size() != dst.size()) {
      throw ConfigError("config key '" + key + "': expected " + std::to_string(dst.size()) + " values");
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      if constexpr (std::is_floating_point_v<T>) {
        dst[i] = parse_double(key, items[i]);
      } else {
        dst[i] = static_cast<T>(parse_int(key, items[i]));
      }
    }
  };
  f.write = [member](const RunConfig& c) {
    std::string out;
    for (const auto& x : c.*member) {
      if (!out.empty()) out += ',';
      if constexpr (std::is_floating_point_v<T>) {
        out += format_double(x);
      } else {
        out += std::to_string(x);
      }
    }
    return out;
  };
  return f;
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"image_side", scalar(&RunConfig::image_side)},
      {"backbone_widths", list(&RunConfig::backbone_widths)},
      {"blocks_per_stage", scalar(&RunConfig::blocks_per_stage)},
      {"pyramid_channels", scalar(&RunConfig::pyramid_channels)},
      {"augmented_relu", scalar(&RunConfig::augmented_relu)},
      {"anchor_sides", list(&RunConfig::anchor_sides)},
      {"anchor_ratios", list(&RunConfig::anchor_ratios)},
      {"rpn_batch", scalar(&RunConfig::rpn_batch)},
      {"rpn_positive_fraction", scalar(&RunConfig::rpn_positive_fraction)},
      {"rpn_positive_iou", scalar(&RunConfig::rpn_positive_iou)},
      {"rpn_negative_iou", scalar(&RunConfig::rpn_negative_iou)},
      {"pre_nms_k", scalar(&RunConfig::pre_nms_k)},
      {"nms_iou", scalar(&RunConfig::nms_iou)},
      {"post_nms_k", scalar(&RunConfig::post_nms_k)},
      {"test_post_nms_k", scalar(&RunConfig::test_post_nms_k)},
      {"roi_samples", scalar(&RunConfig::roi_samples)},
      {"roi_positive_fraction", scalar(&RunConfig::roi_positive_fraction)},
      {"roi_positive_iou", scalar(&RunConfig::roi_positive_iou)},
      {"level_k0", scalar(&RunConfig::level_k0)},
      {"level_canonical", scalar(&RunConfig::level_canonical)},
      {"level_min", scalar(&RunConfig::level_min)},
      {"level_max", scalar(&RunConfig::level_max)},
      {"enlarge_w", scalar(&RunConfig::enlarge_w)},
      {"enlarge_h", scalar(&RunConfig::enlarge_h)},
      {"pool_size", scalar(&RunConfig::pool_size)},
      {"fused_channels", scalar(&RunConfig::fused_channels)},
      {"dc_channels", scalar(&RunConfig::dc_channels)},
      {"dc_on_b", scalar(&RunConfig::dc_on_b)},
      {"head_hidden", scalar(&RunConfig::head_hidden)},
      {"head_delta_weights", list(&RunConfig::head_delta_weights)},
      {"use_augmented_pyramid", scalar(&RunConfig::use_augmented_pyramid)},
      {"use_feature_fusion", scalar(&RunConfig::use_feature_fusion)},
      {"use_dc_module", scalar(&RunConfig::use_dc_module)},
      {"iterations", scalar(&RunConfig::iterations)},
      {"lr_rates", list(&RunConfig::lr_rates)},
      {"lr_phases", list(&RunConfig::lr_phases)},
      {"momentum", scalar(&RunConfig::momentum)},
      {"weight_decay", scalar(&RunConfig::weight_decay)},
      {"grad_clip", scalar(&RunConfig::grad_clip)},
      {"seed", scalar(&RunConfig::seed)},
      {"flip_augmentation", scalar(&RunConfig::flip_augmentation)},
      {"log_every", scalar(&RunConfig::log_every)},
      {"score_threshold", scalar(&RunConfig::score_threshold)},
      {"det_nms_iou", scalar(&RunConfig::det_nms_iou)},
      {"det_max_per_image", scalar(&RunConfig::det_max_per_image)},
      {"det_min_score", scalar(&RunConfig::det_min_score)},
      {"match_iou", scalar(&RunConfig::match_iou)},
  };
  return table;
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.write(*this) + "\n";
  return out;
}

std::string RunConfig::hash() const { return fnv1a_hex(to_text()); }

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.read(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash_at = line.find('#'); hash_at != std::string::npos) line.erase(hash_at);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c;
  c.apply_text(ss.str(), path.string());
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
  if (image_side <= 0 || image_side % 32 != 0) fail("image_side must be a positive multiple of 32");
  for (int w : backbone_widths)
    if (w <= 0) fail("backbone_widths must be positive");
  if (blocks_per_stage < 2) fail("blocks_per_stage must be at least 2");
  if (pyramid_channels <= 0 || fused_channels <= 0 || dc_channels <= 0 || head_hidden <= 0)
    fail("channel counts must be positive");
  if (anchor_sides.empty() || anchor_ratios.empty()) fail("anchor sides and ratios must be non-empty");
  if (level_min < 3 || level_max > 4 || level_min > level_max)
    fail("level_min/level_max must satisfy 3 <= min <= max <= 4 so k-1 and k+1 exist");
  if (pool_size <= 0) fail("pool_size must be positive");
  if (iterations < 0) fail("iterations must be non-negative");
  if (lr_phases[0] <= 0 || lr_phases[1] < 0 || lr_phases[2] < 0) fail("lr_phases must be non-negative with a positive first phase");
  if (roi_samples <= 0 || rpn_batch <= 0) fail("sample counts must be positive");
  if (enlarge_w <= 0 || enlarge_h <= 0) fail("enlargement factors must be positive");
}

}  // namespace tumordet
