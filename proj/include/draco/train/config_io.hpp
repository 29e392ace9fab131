#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "draco/core/error.hpp"
#include "draco/model/draco_model.hpp"

namespace draco::train {

enum class Stage { warmup, hybrid };

inline std::string to_string(Stage s) { return s == Stage::warmup ? "warmup" : "hybrid"; }

inline Stage parse_stage(std::string_view s) {
  if (s == "warmup") return Stage::warmup;
  if (s == "hybrid") return Stage::hybrid;
  throw ConfigError("stage must be warmup or hybrid, got '" + std::string(s) + "'");
}

struct TrainConfig {
  Stage stage = Stage::hybrid;
  std::size_t epochs = 4;
  std::size_t batch_size = 8;
  double base_lr = 1e-3;
  std::size_t warmup_steps = 50;
  double weight_decay = 0.05;
  double beta1 = 0.9, beta2 = 0.95, adam_eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 0;  // 0 disables snapshots
  std::size_t steps_per_epoch = 64;
  // Augmentation.
  std::size_t crop_source = 256;
  double crop_frac_min = 1.0 / 16, crop_frac_max = 1.0 / 4;
  bool flips = true;
  bool dose_equalize = true;

  std::size_t total_steps() const { return epochs * steps_per_epoch; }
};

inline void validate(const TrainConfig& c) {
  if (c.epochs == 0 || c.batch_size == 0 || c.steps_per_epoch == 0) throw ConfigError("counts must be positive");
  if (!(c.base_lr > 0)) throw ConfigError("base_lr must be > 0");
  if (!(c.weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (!(c.clip_norm >= 0)) throw ConfigError("clip_norm must be >= 0");
  if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1 && c.adam_eps > 0)) {
    throw ConfigError("adam betas must lie in [0, 1) and eps must be > 0");
  }
}

/// Flat key=value settings shared by the config file, the CLI and checkpoints.
class Settings {
 public:
  using Setter = std::function<void(std::string_view)>;
  using Getter = std::function<std::string()>;

  Settings(model::ModelConfig& m, TrainConfig& t) {
    size("model.patch_size", m.patch_size);
    size("model.embed_dim", m.embed_dim);
    size("model.depth", m.depth);
    size("model.n_heads", m.n_heads);
    size("model.decoder_dim", m.decoder_dim);
    size("model.decoder_depth", m.decoder_depth);
    size("model.decoder_heads", m.decoder_heads);
    size("model.mlp_ratio", m.mlp_ratio);
    add("model.neck_channels", [&m](std::string_view v) { m.neck_channels = parse_list(v, "model.neck_channels"); },
        [&m] {
          std::string s;
          for (std::size_t i = 0; i < m.neck_channels.size(); ++i) s += (i ? "," : "") + std::to_string(m.neck_channels[i]);
          return s;
        });
    real("model.gamma", m.gamma);
    real("model.lambda", m.lambda);
    real("model.n2n_weight", m.n2n_weight);
    size("model.out_size", m.out_size);
    add("train.stage", [&t](std::string_view v) { t.stage = parse_stage(v); }, [&t] { return to_string(t.stage); });
    size("train.epochs", t.epochs);
    size("train.steps_per_epoch", t.steps_per_epoch);
    size("train.batch_size", t.batch_size);
    real("train.base_lr", t.base_lr);
    size("train.warmup_steps", t.warmup_steps);
    real("train.weight_decay", t.weight_decay);
    real("train.beta1", t.beta1);
    real("train.beta2", t.beta2);
    real("train.adam_eps", t.adam_eps);
    real("train.clip_norm", t.clip_norm);
    u64("train.seed", t.seed);
    size("train.snapshot_every", t.snapshot_every);
    size("train.crop_source", t.crop_source);
    real("train.crop_frac_min", t.crop_frac_min);
    real("train.crop_frac_max", t.crop_frac_max);
    flag("train.flips", t.flips);
    flag("train.dose_equalize", t.dose_equalize);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  void set(const std::string& key, std::string_view value) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.first(value);
  }

  /// Lines of "key = value"; '#' starts a comment.
  void apply_text(std::string_view text) {
    std::size_t line_no = 0;
    while (!text.empty()) {
      ++line_no;
      const auto nl = text.find('\n');
      std::string_view line = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      if (auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      set(std::string(trim(line.substr(0, eq))), trim(line.substr(eq + 1)));
    }
  }

  std::string text() const {
    std::string out;
    for (const auto& key : order_) out += key + " = " + entries_.at(key).second() + "\n";
    return out;
  }

  std::string text(std::string_view prefix) const {
    std::string out;
    for (const auto& key : order_) {
      if (key.rfind(prefix, 0) == 0) out += key + " = " + entries_.at(key).second() + "\n";
    }
    return out;
  }

  const std::vector<std::string>& keys() const { return order_; }
  std::string get(const std::string& key) const { return entries_.at(key).second(); }

  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

 private:
  void add(const std::string& key, Setter set, Getter get) {
    order_.push_back(key);
    entries_.emplace(key, std::make_pair(std::move(set), std::move(get)));
  }

  template <class U>
  static U parse_number(std::string_view v, const std::string& key) {
    U out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) {
      throw ConfigError("config key '" + key + "': cannot parse '" + std::string(v) + "'");
    }
    return out;
  }

  static std::vector<std::size_t> parse_list(std::string_view v, const std::string& key) {
    std::vector<std::size_t> out;
    while (true) {
      const auto c = v.find(',');
      out.push_back(parse_number<std::size_t>(trim(v.substr(0, c)), key));
      if (c == std::string_view::npos) break;
      v = v.substr(c + 1);
    }
    return out;
  }

  static std::string format_real(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  }

  void size(const std::string& key, std::size_t& ref) {
    add(key, [&ref, key](std::string_view v) { ref = parse_number<std::size_t>(v, key); },
        [&ref] { return std::to_string(ref); });
  }
  void u64(const std::string& key, std::uint64_t& ref) {
    add(key, [&ref, key](std::string_view v) { ref = parse_number<std::uint64_t>(v, key); },
        [&ref] { return std::to_string(ref); });
  }
  void real(const std::string& key, double& ref) {
    add(key, [&ref, key](std::string_view v) { ref = parse_number<double>(v, key); }, [&ref] { return format_real(ref); });
  }
  void flag(const std::string& key, bool& ref) {
    add(key,
        [&ref, key](std::string_view v) {
          if (v == "true" || v == "1") ref = true;
          else if (v == "false" || v == "0") ref = false;
          else throw ConfigError("config key '" + key + "': expected true or false");
        },
        [&ref] { return std::string(ref ? "true" : "false"); });
  }

  std::map<std::string, std::pair<Setter, Getter>> entries_;
  std::vector<std::string> order_;
};

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s) {
  return fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline std::string model_config_text(const model::ModelConfig& m) {
  model::ModelConfig mm = m;
  TrainConfig t;
  return Settings(mm, t).text("model.");
}

inline std::uint64_t model_config_hash(const model::ModelConfig& m) { return fnv1a(model_config_text(m)); }

}  // namespace draco::train
