#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "transgcn/error.hpp"
#include "transgcn/objective.hpp"
#include "transgcn/transform.hpp"

namespace transgcn {

enum class Sampling { vanilla, self_adversarial };

inline std::string_view sampling_name(Sampling s) { return s == Sampling::vanilla ? "vanilla" : "selfadv"; }

inline std::optional<Sampling> parse_sampling(std::string_view s) {
  if (s == "vanilla") return Sampling::vanilla;
  if (s == "selfadv") return Sampling::self_adversarial;
  return std::nullopt;
}

/// Hyperparameters of one training run. gamma and sampling default per
/// assumption (translation: margin 1 with vanilla sampling; rotation:
/// margin 12 with self-adversarial sampling) until set explicitly.
struct TrainConfig {
  Assumption assumption = Assumption::translation;
  std::size_t layers = 1;
  std::size_t dim = 100;
  std::optional<double> gamma;
  double alpha = 1.0;
  std::size_t negatives = 10;
  double lr = 0.001;
  std::size_t epochs = 100;
  std::size_t batch = 128;
  std::size_t eval_every = 10;
  std::uint64_t seed = 42;
  Norm norm = Norm::l1;
  std::optional<Sampling> sampling;
  std::size_t pretrain_epochs = 0;
  double clip_norm = 10.0;  // 0 disables clipping
  bool filter_negatives = false;
  Activation activation = Activation::relu;

  double resolved_gamma() const { return gamma.value_or(assumption == Assumption::rotation ? 12.0 : 1.0); }

  Sampling resolved_sampling() const {
    return sampling.value_or(assumption == Assumption::rotation ? Sampling::self_adversarial : Sampling::vanilla);
  }

  /// Fills the per-assumption defaults in place.
  TrainConfig resolved() const {
    TrainConfig c = *this;
    c.gamma = resolved_gamma();
    c.sampling = resolved_sampling();
    return c;
  }

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (dim < 2) throw ConfigError("dim must be >= 2");
    if (assumption == Assumption::rotation && dim % 2 != 0) throw ConfigError("dim must be even for rotation");
    if (negatives < 1) throw ConfigError("negatives must be >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (eval_every < 1) throw ConfigError("eval-every must be >= 1");
    if (resolved_gamma() < 0.0) throw ConfigError("gamma must be >= 0");
    if (clip_norm < 0.0) throw ConfigError("clip must be >= 0");
  }

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k{"assumption", "layers",   "dim",    "gamma",      "alpha",
                                            "negatives",  "lr",       "epochs", "batch",      "eval-every",
                                            "seed",       "norm",     "sampling", "pretrain-epochs", "clip",
                                            "filter-negatives", "activation"};
    return k;
  }

  /// Sets one key from its text form. Unknown keys and bad values raise ConfigError.
  void set(std::string_view key, std::string_view value) {
    const std::string k(key), v(value);
    auto bad = [&] { return ConfigError("bad value '" + v + "' for key '" + k + "'"); };
    if (k == "assumption") {
      auto a = parse_assumption(v);
      if (!a) throw bad();
      assumption = *a;
    } else if (k == "layers") {
      layers = parse_uint(v, k);
    } else if (k == "dim") {
      dim = parse_uint(v, k);
    } else if (k == "gamma") {
      gamma = parse_double(v, k);
    } else if (k == "alpha") {
      alpha = parse_double(v, k);
    } else if (k == "negatives") {
      negatives = parse_uint(v, k);
    } else if (k == "lr") {
      lr = parse_double(v, k);
    } else if (k == "epochs") {
      epochs = parse_uint(v, k);
    } else if (k == "batch") {
      batch = parse_uint(v, k);
    } else if (k == "eval-every") {
      eval_every = parse_uint(v, k);
    } else if (k == "seed") {
      seed = parse_uint(v, k);
    } else if (k == "norm") {
      auto n = parse_norm(v);
      if (!n) throw bad();
      norm = *n;
    } else if (k == "sampling") {
      auto s = parse_sampling(v);
      if (!s) throw bad();
      sampling = *s;
    } else if (k == "pretrain-epochs") {
      pretrain_epochs = parse_uint(v, k);
    } else if (k == "clip") {
      clip_norm = parse_double(v, k);
    } else if (k == "filter-negatives") {
      if (v == "true" || v == "1") {
        filter_negatives = true;
      } else if (v == "false" || v == "0") {
        filter_negatives = false;
      } else {
        throw bad();
      }
    } else if (k == "activation") {
      auto a = parse_activation(v);
      if (!a) throw bad();
      activation = *a;
    } else {
      throw ConfigError("unknown key '" + k + "'");
    }
  }

  /// Canonical `key = value` lines in fixed key order, defaults resolved.
  std::string to_text() const {
    const TrainConfig c = resolved();
    std::ostringstream out;
    out << "assumption = " << assumption_name(c.assumption) << '\n'
        << "layers = " << c.layers << '\n'
        << "dim = " << c.dim << '\n'
        << "gamma = " << format_double(*c.gamma) << '\n'
        << "alpha = " << format_double(c.alpha) << '\n'
        << "negatives = " << c.negatives << '\n'
        << "lr = " << format_double(c.lr) << '\n'
        << "epochs = " << c.epochs << '\n'
        << "batch = " << c.batch << '\n'
        << "eval-every = " << c.eval_every << '\n'
        << "seed = " << c.seed << '\n'
        << "norm = " << norm_name(c.norm) << '\n'
        << "sampling = " << sampling_name(*c.sampling) << '\n'
        << "pretrain-epochs = " << c.pretrain_epochs << '\n'
        << "clip = " << format_double(c.clip_norm) << '\n'
        << "filter-negatives = " << (c.filter_negatives ? "true" : "false") << '\n'
        << "activation = " << activation_name(c.activation) << '\n';
    return out.str();
  }

  static TrainConfig from_text(std::string_view text) {
    TrainConfig c;
    for (const auto& [k, v] : parse_key_values(text)) c.set(k, v);
    return c;
  }

  /// Shortest text that round-trips the double exactly.
  static std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
  }

  /// Parses `key = value` lines; `#` starts a comment. Later keys win.
  static std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
      }
      out.emplace_back(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
    return out;
  }

  static std::vector<std::pair<std::string, std::string>> read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_key_values(buf.str());
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static std::uint64_t parse_uint(const std::string& v, const std::string& k) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value '" + v + "' for key '" + k + "'");
    return out;
  }

  static double parse_double(const std::string& v, const std::string& k) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value '" + v + "' for key '" + k + "'");
    return out;
  }
};

}  // namespace transgcn
