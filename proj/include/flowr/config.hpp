#ifndef FLOWR_CONFIG_HPP
#define FLOWR_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "flowr/core.hpp"
#include "flowr/episodes.hpp"
#include "flowr/model.hpp"

namespace flowr {

struct ExperimentConfig {
  Setting setting = Setting::small_context;
  std::uint32_t dim = 64;  // embedding dimension produced by pre-training
  double a = 0.5;
  double noise_variance = 0.5;
  double beta = 0.1;
  double lambda_w = 0.1;

  double pretrain_step_size = 1e-3;
  std::size_t pretrain_epochs = 10;
  std::size_t pretrain_batch_size = 64;

  double meta_step_size = 1e-3;
  std::size_t meta_episodes = 1000;
  std::size_t meta_batch_size = 1;
  bool sequential_meta_loss = false;
  std::uint64_t lc_train_kk_count = 1;

  EpisodeConfig train_episode{40, 1, 10, 10, 10};
  EpisodeConfig eval_episode{10, 1, 10, 5, 10};
  std::size_t eval_episodes = 1000;
  double tpr = 0.15;
  std::uint64_t lc_eval_kk_count = 0;
  std::size_t fine_tune_steps = 0;
  double fine_tune_step_size = 1e-2;

  NovelCountRule count_rule = NovelCountRule::append_then_increment;
  std::uint64_t seed = 0;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Small-context defaults: 40 support + 10 unknown-unknown classes with 1-10 shots for
/// training; 10 unknown-known + 5 unknown-unknown classes, 10 queries each, for testing.
inline ExperimentConfig sc_paper_preset() { return ExperimentConfig{}; }

/// Large-context defaults: query-only tasks adding 5 unknown-unknown classes, TPR 0.6.
inline ExperimentConfig lc_paper_preset() {
  ExperimentConfig c;
  c.setting = Setting::large_context;
  c.train_episode = EpisodeConfig{0, 1, 1, 5, 10};
  c.eval_episode = EpisodeConfig{0, 1, 1, 5, 10};
  c.tpr = 0.6;
  return c;
}

inline ExperimentConfig preset(const std::string& name) {
  if (name == "sc-paper") return sc_paper_preset();
  if (name == "lc-paper") return lc_paper_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected sc-paper or lc-paper)");
}

inline std::string to_string(Setting s) { return s == Setting::small_context ? "sc" : "lc"; }

inline Setting parse_setting(const std::string& s) {
  if (s == "sc") return Setting::small_context;
  if (s == "lc") return Setting::large_context;
  throw std::invalid_argument("unknown setting '" + s + "' (expected sc or lc)");
}

inline std::string to_string(NovelCountRule r) {
  return r == NovelCountRule::append_then_increment ? "append-then-increment" : "append-only";
}

inline NovelCountRule parse_count_rule(const std::string& s) {
  if (s == "append-then-increment") return NovelCountRule::append_then_increment;
  if (s == "append-only") return NovelCountRule::append_only;
  throw std::invalid_argument("unknown count rule '" + s + "'");
}

inline nlohmann::json to_json(const EpisodeConfig& e) {
  return {{"n_support_classes", e.n_support_classes},
          {"shots_min", e.shots_min},
          {"shots_max", e.shots_max},
          {"n_novel_classes", e.n_novel_classes},
          {"queries_per_class", e.queries_per_class}};
}

inline void from_json(const nlohmann::json& j, EpisodeConfig& e) {
  e.n_support_classes = j.value("n_support_classes", e.n_support_classes);
  e.shots_min = j.value("shots_min", e.shots_min);
  e.shots_max = j.value("shots_max", e.shots_max);
  e.n_novel_classes = j.value("n_novel_classes", e.n_novel_classes);
  e.queries_per_class = j.value("queries_per_class", e.queries_per_class);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"setting", to_string(c.setting)},
          {"dim", c.dim},
          {"a", c.a},
          {"noise_variance", c.noise_variance},
          {"beta", c.beta},
          {"lambda_w", c.lambda_w},
          {"pretrain_step_size", c.pretrain_step_size},
          {"pretrain_epochs", c.pretrain_epochs},
          {"pretrain_batch_size", c.pretrain_batch_size},
          {"meta_step_size", c.meta_step_size},
          {"meta_episodes", c.meta_episodes},
          {"meta_batch_size", c.meta_batch_size},
          {"sequential_meta_loss", c.sequential_meta_loss},
          {"lc_train_kk_count", c.lc_train_kk_count},
          {"train_episode", to_json(c.train_episode)},
          {"eval_episode", to_json(c.eval_episode)},
          {"eval_episodes", c.eval_episodes},
          {"tpr", c.tpr},
          {"lc_eval_kk_count", c.lc_eval_kk_count},
          {"fine_tune_steps", c.fine_tune_steps},
          {"fine_tune_step_size", c.fine_tune_step_size},
          {"count_rule", to_string(c.count_rule)},
          {"seed", c.seed}};
}

/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base) {
  static const nlohmann::json known = to_json(ExperimentConfig{});
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw std::invalid_argument("unknown config key '" + it.key() + "'");
  }
  ExperimentConfig c = base;
  if (j.contains("setting")) c.setting = parse_setting(j.at("setting").get<std::string>());
  c.dim = j.value("dim", c.dim);
  c.a = j.value("a", c.a);
  c.noise_variance = j.value("noise_variance", c.noise_variance);
  c.beta = j.value("beta", c.beta);
  c.lambda_w = j.value("lambda_w", c.lambda_w);
  c.pretrain_step_size = j.value("pretrain_step_size", c.pretrain_step_size);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.pretrain_batch_size = j.value("pretrain_batch_size", c.pretrain_batch_size);
  c.meta_step_size = j.value("meta_step_size", c.meta_step_size);
  c.meta_episodes = j.value("meta_episodes", c.meta_episodes);
  c.meta_batch_size = j.value("meta_batch_size", c.meta_batch_size);
  c.sequential_meta_loss = j.value("sequential_meta_loss", c.sequential_meta_loss);
  c.lc_train_kk_count = j.value("lc_train_kk_count", c.lc_train_kk_count);
  if (j.contains("train_episode")) from_json(j.at("train_episode"), c.train_episode);
  if (j.contains("eval_episode")) from_json(j.at("eval_episode"), c.eval_episode);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.tpr = j.value("tpr", c.tpr);
  c.lc_eval_kk_count = j.value("lc_eval_kk_count", c.lc_eval_kk_count);
  c.fine_tune_steps = j.value("fine_tune_steps", c.fine_tune_steps);
  c.fine_tune_step_size = j.value("fine_tune_step_size", c.fine_tune_step_size);
  if (j.contains("count_rule")) c.count_rule = parse_count_rule(j.at("count_rule").get<std::string>());
  c.seed = j.value("seed", c.seed);
  return c;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  return config_from_json(nlohmann::json::parse(in), std::move(base));
}

inline void validate(const ExperimentConfig& c) {
  if (!(c.a >= 0.0 && c.a < 1.0)) throw std::invalid_argument("config: a must lie in [0, 1)");
  if (!(c.noise_variance > 0.0)) throw std::invalid_argument("config: noise_variance must be positive");
  if (!(c.tpr > 0.0 && c.tpr <= 1.0)) throw std::invalid_argument("config: tpr must lie in (0, 1]");
  if (c.dim == 0) throw std::invalid_argument("config: dim must be positive");
  c.train_episode.validate(c.setting == Setting::large_context);
  c.eval_episode.validate(c.setting == Setting::large_context);
}

/// FNV-1a over the fields that define the model (setting, dim, a, noise, count rule);
/// stored in checkpoints to flag evaluation under a different model definition.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  const nlohmann::json key = {{"setting", to_string(c.setting)},
                              {"dim", c.dim},
                              {"a", c.a},
                              {"noise_variance", c.noise_variance},
                              {"count_rule", to_string(c.count_rule)}};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : key.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace flowr

#endif  // FLOWR_CONFIG_HPP
