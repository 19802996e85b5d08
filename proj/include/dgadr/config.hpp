#pragma once

// Flat `key = value` experiment configuration. Blank lines and `#` comments are
// ignored; unknown keys are rejected. Synthetic-data keys and training keys share
// one file so a single config drives `gen` and `loto`.
//
//   data:  num_domains, num_classes, feature_dim, samples_per_domain, class_skew,
//          domain_shift_scale, intra_domain_subclusters, noise_std, data_seed,
//          class_separation, subcluster_spread
//   model: hidden_dims (comma list), activation (tanh|relu), feature_layer
//   loss:  margin, hard_count, alpha, gamma, weights (uniform|weighted_ce)
//   train: batch_size, epochs, lr, jitter, jitter2, seeds (comma list),
//          init_params, eval_every, kl_shrinkage

#include "dgadr/data.hpp"
#include "dgadr/trainer.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace dgadr {

struct ExperimentConfig {
  SynthConfig synth;
  TrainConfig train;
};

namespace detail {

template <class T>
T parse_number(const std::string &key, const std::string &value) {
  T out{};
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw Error("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string &key, const std::string &value) {
  std::vector<T> out;
  for (auto part : split_commas(value)) {
    const std::string item(trim(part));
    if (item.empty()) continue;
    out.push_back(parse_number<T>(key, item));
  }
  return out;
}

template <class T>
std::string join(const std::vector<T> &v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct KeyHandler {
  std::function<void(ExperimentConfig &, const std::string &)> set;
  std::function<std::string(const ExperimentConfig &)> get;
};

inline const std::vector<std::pair<std::string, KeyHandler>> &config_keys() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, KeyHandler>> keys = [] {
    std::vector<std::pair<std::string, KeyHandler>> k;
    auto synth_int = [&](const char *name, int SynthConfig::*m) {
      k.push_back({name, {[name, m](C &c, const std::string &v) { c.synth.*m = parse_number<int>(name, v); },
                          [m](const C &c) { return std::to_string(c.synth.*m); }}});
    };
    auto synth_real = [&](const char *name, double SynthConfig::*m) {
      k.push_back({name, {[name, m](C &c, const std::string &v) { c.synth.*m = parse_number<double>(name, v); },
                          [m](const C &c) { return format_exact(c.synth.*m); }}});
    };
    auto train_int = [&](const char *name, int TrainConfig::*m) {
      k.push_back({name, {[name, m](C &c, const std::string &v) { c.train.*m = parse_number<int>(name, v); },
                          [m](const C &c) { return std::to_string(c.train.*m); }}});
    };
    auto train_real = [&](const char *name, double TrainConfig::*m) {
      k.push_back({name, {[name, m](C &c, const std::string &v) { c.train.*m = parse_number<double>(name, v); },
                          [m](const C &c) { return format_exact(c.train.*m); }}});
    };
    auto loss_real = [&](const char *name, double LossConfig::*m) {
      k.push_back({name, {[name, m](C &c, const std::string &v) { c.train.loss.*m = parse_number<double>(name, v); },
                          [m](const C &c) { return format_exact(c.train.loss.*m); }}});
    };
    synth_int("num_domains", &SynthConfig::num_domains);
    synth_int("num_classes", &SynthConfig::num_classes);
    synth_int("feature_dim", &SynthConfig::feature_dim);
    synth_int("samples_per_domain", &SynthConfig::samples_per_domain);
    synth_real("class_skew", &SynthConfig::class_skew);
    synth_real("domain_shift_scale", &SynthConfig::domain_shift_scale);
    synth_int("intra_domain_subclusters", &SynthConfig::intra_domain_subclusters);
    synth_real("noise_std", &SynthConfig::noise_std);
    k.push_back({"data_seed",
                 {[](C &c, const std::string &v) { c.synth.seed = parse_number<std::uint64_t>("data_seed", v); },
                  [](const C &c) { return std::to_string(c.synth.seed); }}});
    synth_real("class_separation", &SynthConfig::class_separation);
    synth_real("subcluster_spread", &SynthConfig::subcluster_spread);

    k.push_back({"hidden_dims",
                 {[](C &c, const std::string &v) { c.train.hidden_dims = parse_list<int>("hidden_dims", v); },
                  [](const C &c) { return join(c.train.hidden_dims); }}});
    k.push_back({"activation",
                 {[](C &c, const std::string &v) { c.train.activation = parse_activation(v); },
                  [](const C &c) { return to_string(c.train.activation); }}});
    train_int("feature_layer", &TrainConfig::feature_layer);
    loss_real("margin", &LossConfig::margin);
    k.push_back({"hard_count",
                 {[](C &c, const std::string &v) { c.train.loss.hard_count = parse_number<int>("hard_count", v); },
                  [](const C &c) { return std::to_string(c.train.loss.hard_count); }}});
    loss_real("alpha", &LossConfig::alpha);
    loss_real("gamma", &LossConfig::gamma);
    k.push_back({"weights",
                 {[](C &c, const std::string &v) {
                    if (v == "uniform")
                      c.train.weights = WeightsMode::Uniform;
                    else if (v == "weighted_ce")
                      c.train.weights = WeightsMode::WeightedCE;
                    else
                      throw Error("config key 'weights': expected uniform or weighted_ce, got '" + v + "'");
                  },
                  [](const C &c) { return to_string(c.train.weights); }}});
    train_int("batch_size", &TrainConfig::batch_size);
    train_int("epochs", &TrainConfig::epochs);
    train_real("lr", &TrainConfig::lr);
    train_real("jitter", &TrainConfig::jitter);
    train_real("jitter2", &TrainConfig::jitter2);
    k.push_back({"seeds",
                 {[](C &c, const std::string &v) { c.train.seeds = parse_list<std::uint64_t>("seeds", v); },
                  [](const C &c) { return join(c.train.seeds); }}});
    k.push_back({"init_params", {[](C &c, const std::string &v) { c.train.init_params = v; },
                                 [](const C &c) { return c.train.init_params; }}});
    train_int("eval_every", &TrainConfig::eval_every);
    train_real("kl_shrinkage", &TrainConfig::kl_shrinkage);
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Applies one `key = value` assignment.
inline void set_config_value(ExperimentConfig &cfg, const std::string &key, const std::string &value) {
  for (const auto &[name, handler] : detail::config_keys())
    if (name == key) {
      handler.set(cfg, value);
      return;
    }
  throw Error("unknown config key '" + key + "'");
}

inline ExperimentConfig read_config(std::istream &in, const std::string &name = "<stream>",
                                    ExperimentConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string_view body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw Error(name + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key(detail::trim(body.substr(0, eq)));
    const std::string value(detail::trim(body.substr(eq + 1)));
    try {
      set_config_value(cfg, key, value);
    } catch (const Error &e) {
      throw Error(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  return read_config(in, path);
}

/// Every key with its effective value, in schema order. Reading it back reproduces `cfg`.
inline void write_config(std::ostream &out, const ExperimentConfig &cfg) {
  for (const auto &[name, handler] : detail::config_keys()) out << name << " = " << handler.get(cfg) << '\n';
}

}  // namespace dgadr
