// flowr: command-line front end for data generation, training, evaluation and reporting.
// Failures print one line "error: <kind>: <message>" on stderr and exit nonzero.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "flowr/flowr.hpp"

namespace {

using namespace flowr;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

// Options shared by the training and evaluation commands; flags override the config file,
// which overrides the preset.
struct ConfigFlags {
  std::string preset;
  std::string config_path;
  std::optional<std::string> setting;
  std::optional<std::uint64_t> seed;
  std::optional<double> a, noise_variance;
  std::optional<std::string> count_rule;

  void add(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "sc-paper or lc-paper (default follows --setting)");
    cmd->add_option("--config", config_path, "JSON config overlay");
    cmd->add_option("--setting", setting, "sc or lc")->check(CLI::IsMember({"sc", "lc"}));
    cmd->add_option("--seed", seed, "base seed");
    cmd->add_option("--a", a, "CRP discount");
    cmd->add_option("--noise-variance", noise_variance, "observation noise variance");
    cmd->add_option("--count-rule", count_rule, "append-then-increment or append-only");
  }

  ExperimentConfig resolve() const {
    std::string name = preset;
    if (name.empty()) name = setting && *setting == "lc" ? "lc-paper" : "sc-paper";
    ExperimentConfig c = flowr::preset(name);
    if (!config_path.empty()) c = load_config(config_path, c);
    if (setting) c.setting = parse_setting(*setting);
    if (seed) c.seed = *seed;
    if (a) c.a = *a;
    if (noise_variance) c.noise_variance = *noise_variance;
    if (count_rule) c.count_rule = parse_count_rule(*count_rule);
    return c;
  }
};

void warn_hash(const Checkpoint& ckpt, const ExperimentConfig& cfg) {
  if (auto w = config_hash_warning(ckpt, cfg)) std::cerr << "warning: " << *w << '\n';
}

int cmd_gen_synthetic(const SyntheticWorldConfig& w, const std::string& out) {
  const EmbeddingDataset ds = generate_synthetic_world(w);
  write_dataset(out, ds);
  std::cout << "wrote=" << out << " classes=" << ds.num_classes() << " records=" << ds.records.size()
            << " dim=" << ds.dim << '\n';
  return 0;
}

struct PretrainFlags {
  std::string data, out;
  std::optional<std::size_t> known_classes, epochs, batch_size, dim;
  std::optional<double> step_size, beta;
  bool identity_init = false;
};

int cmd_pretrain(const ConfigFlags& cf, const PretrainFlags& f) {
  ExperimentConfig cfg = cf.resolve();
  if (f.dim) cfg.dim = static_cast<std::uint32_t>(*f.dim);
  if (f.epochs) cfg.pretrain_epochs = *f.epochs;
  if (f.batch_size) cfg.pretrain_batch_size = *f.batch_size;
  if (f.step_size) cfg.pretrain_step_size = *f.step_size;
  if (f.beta) cfg.beta = *f.beta;
  validate(cfg);

  EmbeddingDataset ds = read_dataset(f.data);
  if (f.known_classes) {
    std::vector<Label> keep(*f.known_classes);
    std::iota(keep.begin(), keep.end(), Label{1});
    ds = select_classes(ds, keep);
  }
  PretrainConfig pc;
  pc.embed_dim = cfg.dim;
  pc.beta = cfg.beta;
  pc.step_size = cfg.pretrain_step_size;
  pc.epochs = cfg.pretrain_epochs;
  pc.batch_size = cfg.pretrain_batch_size;
  pc.seed = cfg.seed;
  pc.encoder_init = f.identity_init ? EncoderInit::identity : EncoderInit::random;
  const PretrainResult r = pretrain(ds.records, pc);
  for (std::size_t e = 0; e < r.loss_trace.size(); ++e) {
    std::cout << "epoch=" << e + 1 << " loss=" << format_real(r.loss_trace[e]) << '\n';
  }

  std::mt19937_64 rng(splitmix64(cfg.seed));
  Checkpoint ckpt;
  ckpt.setting = cfg.setting;
  ckpt.count_rule = cfg.count_rule;
  ckpt.config_hash = config_hash(cfg);
  ckpt.noise = NoiseModel{cfg.noise_variance};
  ckpt.embeddings = r.embeddings;
  ckpt.params = init_meta_params(r.encoder, cfg.a, rng,
                                 cfg.setting == Setting::large_context ? &r.embeddings : nullptr);
  save_checkpoint(f.out, ckpt);
  std::cout << "wrote=" << f.out << '\n';
  return 0;
}

struct MetaFlags {
  std::string data, checkpoint, out;
  std::optional<std::size_t> episodes, batch_size;
  std::optional<double> step_size, lambda_w;
  bool sequential = false;
  std::size_t log_every = 50;
};

int cmd_metatrain(const ConfigFlags& cf, const MetaFlags& f) {
  ExperimentConfig cfg = cf.resolve();
  if (f.episodes) cfg.meta_episodes = *f.episodes;
  if (f.batch_size) cfg.meta_batch_size = *f.batch_size;
  if (f.step_size) cfg.meta_step_size = *f.step_size;
  if (f.lambda_w) cfg.lambda_w = *f.lambda_w;
  if (f.sequential) cfg.sequential_meta_loss = true;
  const EmbeddingDataset ds = read_dataset(f.data);
  const bool lc = cfg.setting == Setting::large_context;

  Checkpoint ckpt;
  if (!f.checkpoint.empty()) {
    ckpt = load_checkpoint(f.checkpoint);
    warn_hash(ckpt, cfg);
    if (lc && ckpt.params.kk_stats.empty()) {
      ckpt.params.kk_stats = detail::known_known_stats(ckpt);
    }
    if (!lc) ckpt.params.kk_stats.clear();
  } else {
    if (lc) throw UsageError("large-context meta-training needs --checkpoint with known-known embeddings");
    cfg.dim = ds.dim;
    std::mt19937_64 rng(splitmix64(cfg.seed));
    ckpt.params = init_meta_params(make_identity_affine_encoder(ds.dim, ds.dim), cfg.a, rng);
  }
  validate(cfg);
  ckpt.setting = cfg.setting;
  ckpt.count_rule = cfg.count_rule;
  ckpt.noise = NoiseModel{cfg.noise_variance};
  ckpt.config_hash = config_hash(cfg);

  MetaTrainConfig mc;
  mc.setting = cfg.setting;
  mc.episode = cfg.train_episode;
  mc.episodes = cfg.meta_episodes;
  mc.batch_size = cfg.meta_batch_size;
  mc.step_size = cfg.meta_step_size;
  mc.seed = cfg.seed;
  mc.loss.lambda_w = cfg.lambda_w;
  mc.loss.noise = ckpt.noise;
  mc.loss.count_rule = cfg.count_rule;
  mc.loss.sequential = cfg.sequential_meta_loss;
  mc.loss.lc_kk_count = cfg.lc_train_kk_count;
  const std::size_t every = std::max<std::size_t>(1, f.log_every);
  const MetaTrainResult r = meta_train(ds, ckpt.params, mc, [&](const MetaTrainRecord& rec) {
    if (rec.step % every == 0) {
      std::cout << "step=" << rec.step << " loss=" << format_real(rec.loss) << " nll=" << format_real(rec.nll)
                << " adapt=" << format_real(rec.adapt) << '\n';
    }
  });
  ckpt.params = r.params;
  save_checkpoint(f.out, ckpt);
  std::cout << "wrote=" << f.out << '\n';
  return 0;
}

struct EvalFlags {
  std::string data, checkpoint, out_dir = "flowr_eval";
  std::string method = "flowr";
  std::optional<double> tpr;
  std::optional<std::size_t> episodes, fine_tune_steps;
  unsigned workers = 1;
};

int cmd_eval(const ConfigFlags& cf, const EvalFlags& f) {
  ExperimentConfig cfg = cf.resolve();
  if (f.tpr) cfg.tpr = *f.tpr;
  if (f.episodes) cfg.eval_episodes = *f.episodes;
  if (f.fine_tune_steps) cfg.fine_tune_steps = *f.fine_tune_steps;
  const Checkpoint ckpt = load_checkpoint(f.checkpoint);
  cfg.dim = ckpt.params.encoder.d_out;
  validate(cfg);
  warn_hash(ckpt, cfg);
  const Method method = parse_method(f.method);
  const EmbeddingDataset test = read_dataset(f.data);
  const EvalResult r = evaluate(test, ckpt, cfg, method, f.workers);
  const auto dir = resolve_output_dir(f.out_dir);
  write_eval_artifacts(dir, r, f.method, cfg.setting, cfg.tpr);
  std::cout << metric_table(r, f.method, cfg.setting, cfg.tpr);
  return 0;
}

int cmd_report(const std::string& records_path, double tpr, const std::string& method, const std::string& setting) {
  std::ifstream in(records_path);
  if (!in) throw std::runtime_error("cannot open " + records_path);
  EvalResult r = summarize(parse_records_csv(in, records_path), tpr);
  std::cout << metric_table(r, method, parse_setting(setting), tpr);
  return 0;
}

int cmd_grad_check(std::uint64_t seed, std::size_t configs, double tolerance) {
  bool ok = true;
  for (const GradSuiteEntry& e : run_gradient_suite(seed, configs, tolerance)) {
    std::cout << "check=" << e.name << " configs=" << e.configs << " max_rel_error=" << format_real(e.max_rel_error)
              << " status=" << (e.passed ? "pass" : "fail") << '\n';
    ok = ok && e.passed;
  }
  if (!ok) throw DivergenceError("gradient check exceeded tolerance " + format_real(tolerance));
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return "config";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FLOWR few-shot open-world recognition on embedding vectors"};
  app.require_subcommand(1);

  SyntheticWorldConfig world;
  std::optional<std::uint64_t> sample_seed;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic embedding dataset");
  gen->add_option("--out", gen_out, "output FSE1 file")->required();
  gen->add_option("--classes", world.n_classes, "number of classes")->check(CLI::PositiveNumber);
  gen->add_option("--dim", world.dim, "embedding dimension")->check(CLI::PositiveNumber);
  gen->add_option("--prior-variance", world.prior_variance, "variance of class means");
  gen->add_option("--noise-variance", world.noise_variance, "within-class variance");
  gen->add_option("--points", world.points_per_class, "points per class")->check(CLI::PositiveNumber);
  gen->add_option("--seed", world.seed, "seed for class means");
  gen->add_option("--sample-seed", sample_seed, "seed for within-class noise (default: --seed)");

  ConfigFlags pre_cf, meta_cf, eval_cf;
  PretrainFlags pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "fit encoder and class embeddings on known-known data");
  pre_cf.add(pre_cmd);
  pre_cmd->add_option("--data", pre.data, "training FSE1 file")->required();
  pre_cmd->add_option("--out", pre.out, "output checkpoint")->required();
  pre_cmd->add_option("--known-classes", pre.known_classes, "use only classes 1..K");
  pre_cmd->add_option("--dim", pre.dim, "embedding dimension");
  pre_cmd->add_option("--epochs", pre.epochs);
  pre_cmd->add_option("--batch-size", pre.batch_size);
  pre_cmd->add_option("--step-size", pre.step_size);
  pre_cmd->add_option("--beta", pre.beta, "variance regularizer weight");
  pre_cmd->add_flag("--identity-init", pre.identity_init, "start from an identity-like encoder");

  MetaFlags meta;
  auto* meta_cmd = app.add_subcommand("metatrain", "episodic meta-training of prior, CRP and encoder");
  meta_cf.add(meta_cmd);
  meta_cmd->add_option("--data", meta.data, "training FSE1 file")->required();
  meta_cmd->add_option("--checkpoint", meta.checkpoint, "starting checkpoint (required for lc)");
  meta_cmd->add_option("--out", meta.out, "output checkpoint")->required();
  meta_cmd->add_option("--episodes", meta.episodes);
  meta_cmd->add_option("--batch-size", meta.batch_size);
  meta_cmd->add_option("--step-size", meta.step_size);
  meta_cmd->add_option("--lambda-w", meta.lambda_w, "adaptation loss weight");
  meta_cmd->add_flag("--sequential", meta.sequential, "score queries against the online-updated state");
  meta_cmd->add_option("--log-every", meta.log_every, "progress record interval");

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate on sampled test episodes");
  eval_cf.add(eval_cmd);
  eval_cmd->add_option("--data", ev.data, "test FSE1 file")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("--tpr", ev.tpr, "operating true-positive rate");
  eval_cmd->add_option("--episodes", ev.episodes);
  eval_cmd->add_option("--workers", ev.workers)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--method", ev.method)->check(CLI::IsMember({"flowr", "ncm", "protonet"}));
  eval_cmd->add_option("--fine-tune-steps", ev.fine_tune_steps, "output-layer fine-tuning steps (sc)");
  eval_cmd->add_option("--out-dir", ev.out_dir, "artifact directory (FLOWR_OUTPUT_DIR overrides)");

  std::string rep_records, rep_method = "flowr", rep_setting = "sc";
  double rep_tpr = 0.15;
  auto* rep_cmd = app.add_subcommand("report", "metric table from a stored records.csv");
  rep_cmd->add_option("--records", rep_records)->required();
  rep_cmd->add_option("--tpr", rep_tpr);
  rep_cmd->add_option("--method", rep_method);
  rep_cmd->add_option("--setting", rep_setting)->check(CLI::IsMember({"sc", "lc"}));

  std::uint64_t gc_seed = 0;
  std::size_t gc_configs = 10;
  double gc_tol = 1e-4;
  auto* gc_cmd = app.add_subcommand("grad-check", "finite-difference certification of all loss gradients");
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_option("--configs", gc_configs)->check(CLI::PositiveNumber);
  gc_cmd->add_option("--tolerance", gc_tol);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*gen) {
      world.sample_seed = sample_seed;
      return cmd_gen_synthetic(world, gen_out);
    }
    if (*pre_cmd) return cmd_pretrain(pre_cf, pre);
    if (*meta_cmd) return cmd_metatrain(meta_cf, meta);
    if (*eval_cmd) return cmd_eval(eval_cf, ev);
    if (*rep_cmd) return cmd_report(rep_records, rep_tpr, rep_method, rep_setting);
    if (*gc_cmd) return cmd_grad_check(gc_seed, gc_configs, gc_tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << error_kind(e) << ": " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}
