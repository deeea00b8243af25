#include "afldm/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "afldm/error.hpp"
#include "afldm/metrics.hpp"

namespace afldm {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* what) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty()) {
    throw ConfigError("config key '" + key + "': '" + value + "' is not " + what);
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

int parse_int(const std::string& key, const std::string& value) { return parse_number<int>(key, value, "an integer"); }

double parse_double(const std::string& key, const std::string& value) {
  return parse_number<double>(key, value, "a number");
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  return parse_number<std::uint64_t>(key, value, "an unsigned integer");
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': '" + value + "' is not a boolean");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::string item;
  std::istringstream is(value);
  while (std::getline(is, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string format_int_list(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

namespace {

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field int_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_int(k, v); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

template <typename M>
Field u64_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_u64(k, v); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

template <typename M>
Field double_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_double(k, v); },
          [member](const RunConfig& c) { return metrics::format_value(c.*member); }};
}

template <typename M>
Field bool_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); },
          [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

template <typename M>
Field list_field(M member) {
  return {[member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = parse_int_list(k, v); },
          [member](const RunConfig& c) { return format_int_list(c.*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"image_size", int_field(&RunConfig::image_size)},
      {"image_count", int_field(&RunConfig::image_count)},
      {"video_count", int_field(&RunConfig::video_count)},
      {"video_frames", int_field(&RunConfig::video_frames)},
      {"data_seed", u64_field(&RunConfig::data_seed)},
      {"downsample_factor", int_field(&RunConfig::downsample_factor)},
      {"latent_channels", int_field(&RunConfig::latent_channels)},
      {"vae_widths", list_field(&RunConfig::vae_widths)},
      {"unet_widths", list_field(&RunConfig::unet_widths)},
      {"attention", bool_field(&RunConfig::attention)},
      {"nonlinearity",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.nonlinearity = parse_nonlinearity(v); },
        [](const RunConfig& c) { return to_string(c.nonlinearity); }}},
      {"vae_ideal_sampling", bool_field(&RunConfig::vae_ideal_sampling)},
      {"vae_filtered_nonlinearity", bool_field(&RunConfig::vae_filtered_nonlinearity)},
      {"unet_ideal_sampling", bool_field(&RunConfig::unet_ideal_sampling)},
      {"unet_filtered_nonlinearity", bool_field(&RunConfig::unet_filtered_nonlinearity)},
      {"vae_steps", int_field(&RunConfig::vae_steps)},
      {"vae_batch", int_field(&RunConfig::vae_batch)},
      {"vae_lr", double_field(&RunConfig::vae_lr)},
      {"vae_equivariance_loss", bool_field(&RunConfig::vae_equivariance_loss)},
      {"lambda_kl", double_field(&RunConfig::lambda_kl)},
      {"lambda_eq", double_field(&RunConfig::lambda_eq)},
      {"ldm_steps", int_field(&RunConfig::ldm_steps)},
      {"ldm_batch", int_field(&RunConfig::ldm_batch)},
      {"ldm_lr", double_field(&RunConfig::ldm_lr)},
      {"ldm_eq_loss",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.ldm_eq_loss = parse_eq_loss_mode(v); },
        [](const RunConfig& c) { return to_string(c.ldm_eq_loss); }}},
      {"lambda_unet", double_field(&RunConfig::lambda_unet)},
      {"warmup", int_field(&RunConfig::warmup)},
      {"clip_norm", double_field(&RunConfig::clip_norm)},
      {"pipeline",
       {[](RunConfig& c, const std::string&, const std::string& v) { c.pipeline = v; },
        [](const RunConfig& c) { return c.pipeline; }}},
      {"eval_count", int_field(&RunConfig::eval_count)},
      {"ddim_steps", int_field(&RunConfig::ddim_steps)},
      {"cross_frame_attention", bool_field(&RunConfig::cross_frame_attention)},
      {"sweep_step", double_field(&RunConfig::sweep_step)},
      {"sweep_count", int_field(&RunConfig::sweep_count)},
      {"curve_steps", int_field(&RunConfig::curve_steps)},
      {"curve_delta", double_field(&RunConfig::curve_delta)},
      {"freq_m", int_field(&RunConfig::freq_m)},
      {"edit_strength", double_field(&RunConfig::edit_strength)},
      {"interp_frames", int_field(&RunConfig::interp_frames)},
      {"seed", u64_field(&RunConfig::seed)},
  };
  return table;
}

}  // namespace

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& values) {
  RunConfig c;
  const auto& table = fields();
  for (const auto& [k, v] : values) {
    auto it = table.find(k);
    if (it == table.end()) throw ConfigError("unknown config key '" + k + "'");
    it->second.set(c, k, v);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return from_map(read_key_values(path)); }

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(*this);
  return out;
}

ModelConfig RunConfig::vae_config() const {
  ModelConfig m;
  m.kind = ModelKind::kVae;
  m.image_size = image_size;
  m.downsample_factor = downsample_factor;
  m.latent_channels = latent_channels;
  m.widths = vae_widths;
  m.attention = attention;
  m.nonlinearity = nonlinearity;
  m.ideal_sampling = vae_ideal_sampling;
  m.filtered_nonlinearity = vae_filtered_nonlinearity;
  m.seed = seed;
  m.validate();
  return m;
}

ModelConfig RunConfig::unet_config() const {
  ModelConfig m;
  m.kind = ModelKind::kUNet;
  m.image_size = image_size;
  m.downsample_factor = downsample_factor;
  m.latent_channels = latent_channels;
  m.widths = unet_widths;
  m.attention = attention;
  m.nonlinearity = nonlinearity;
  m.ideal_sampling = unet_ideal_sampling;
  m.filtered_nonlinearity = unet_filtered_nonlinearity;
  m.seed = seed + 1;
  m.validate();
  return m;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(image_count >= 1 && video_count >= 1, "image_count and video_count must be positive");
  require(video_frames >= 2, "video_frames must be >= 2");
  require(vae_steps >= 0 && ldm_steps >= 0, "step counts must be >= 0");
  require(vae_batch >= 1 && ldm_batch >= 1, "batch sizes must be positive");
  require(vae_lr > 0.0 && ldm_lr > 0.0, "learning rates must be positive");
  require(lambda_kl >= 0.0 && lambda_eq >= 0.0 && lambda_unet >= 0.0, "loss weights must be nonnegative");
  require(pipeline == "vae" || pipeline == "identity", "pipeline must be 'vae' or 'identity'");
  require(eval_count >= 1, "eval_count must be positive");
  require(ddim_steps >= 1 && ddim_steps < 1000, "ddim_steps must be in [1, 999]");
  require(sweep_count >= 0 && sweep_step > 0.0, "sweep_count >= 0 and sweep_step > 0 required");
  require(curve_steps >= 1 && curve_steps < 1000, "curve_steps must be in [1, 999]");
  require(freq_m >= 1 && downsample_factor % freq_m == 0, "freq_m must divide downsample_factor");
  require(edit_strength >= 0.0 && edit_strength <= 1.0, "edit_strength must be in [0, 1]");
  require(interp_frames >= 1, "interp_frames must be positive");
  vae_config();
  unet_config();
}

}  // namespace afldm
