#ifndef FLOWR_EXPERIMENT_HPP
#define FLOWR_EXPERIMENT_HPP

// Episode-level evaluation of FLOWR and the baselines, plus the text artifacts
// written by the command-line tool (records.csv, roc.csv, metrics.txt).

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flowr/baselines.hpp"
#include "flowr/checkpoint.hpp"
#include "flowr/config.hpp"
#include "flowr/dataset.hpp"
#include "flowr/episodes.hpp"
#include "flowr/metrics.hpp"
#include "flowr/model.hpp"

namespace flowr {

enum class Method { flowr, ncm, protonet };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::flowr: return "flowr";
    case Method::ncm: return "ncm";
    case Method::protonet: return "protonet";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "flowr") return Method::flowr;
  if (s == "ncm") return Method::ncm;
  if (s == "protonet") return Method::protonet;
  throw std::invalid_argument("unknown method '" + s + "' (expected flowr, ncm or protonet)");
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of episode `index`, a pure function of (base, index) so results do not depend on scheduling.
inline std::uint64_t episode_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ (index * 0xD1B54A32D192ED03ULL + 1));
}

struct EvalResult {
  EpisodeRecords records;
  std::vector<RocPoint> roc;
  ThresholdResult threshold;
  AccuracySuite metrics;
};

namespace detail {

inline std::vector<NaturalClassStats> known_known_stats(const Checkpoint& ckpt) {
  if (!ckpt.params.kk_stats.empty()) return ckpt.params.kk_stats;
  std::vector<NaturalClassStats> out;
  for (std::size_t n = 0; n < ckpt.embeddings.num_classes(); ++n) {
    out.push_back(factor_to_natural(IsotropicGaussian{ckpt.embeddings.means[n], ckpt.embeddings.variances[n]}));
  }
  return out;
}

inline std::vector<ScoredQuery> to_scored(std::uint32_t episode, const ProtocolStream& stream,
                                          const std::vector<double>& novelty, const std::vector<Label>& argmax) {
  std::vector<ScoredQuery> out(stream.queries.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].episode = episode;
    out[i].novelty_score = novelty[i];
    out[i].known_argmax = argmax[i];
    out[i].true_label = stream.queries[i].label;
    out[i].true_novel = stream.first_encounter[i];
    out[i].support_class = stream.known_before[i];
    out[i].incremental = !stream.known_before[i];
  }
  return out;
}

inline std::vector<ScoredQuery> run_baseline(Method method, PrototypeState protos, const Encoder& enc,
                                             std::uint32_t episode, const ProtocolStream& stream) {
  std::vector<double> novelty;
  std::vector<Label> argmax;
  for (const LabeledPoint& q : stream.queries) {
    const Vector z = encode(enc, q.features);
    if (method == Method::ncm) {
      const NcmPrediction p = ncm_predict(protos, z);
      novelty.push_back(p.novelty_score);
      argmax.push_back(p.nearest);
    } else {
      const ProtoNetPrediction p = protonet_predict(protos, z);
      novelty.push_back(p.novelty_score);
      Label best = 0;
      for (std::size_t n = 0; n < p.probs.size(); ++n) {
        if (best == 0 || p.probs[n] > p.probs[best - 1]) best = static_cast<Label>(n + 1);
      }
      argmax.push_back(best);
    }
    protos = prototype_update(std::move(protos), z, q.label);
  }
  return to_scored(episode, stream, novelty, argmax);
}

}  // namespace detail

/// Samples and scores one evaluation episode. Deterministic given (cfg.seed, index).
inline std::vector<ScoredQuery> evaluate_episode(const EmbeddingDataset& test, const Checkpoint& ckpt,
                                                 const ExperimentConfig& cfg, Method method, std::uint32_t index) {
  std::mt19937_64 rng(episode_seed(cfg.seed, index));
  const bool lc = cfg.setting == Setting::large_context;
  const std::vector<NaturalClassStats> kk = lc ? detail::known_known_stats(ckpt) : std::vector<NaturalClassStats>{};
  const Episode ep = lc ? sample_lc_task(test, kk.size(), cfg.eval_episode, rng)
                        : sample_sc_task(test, cfg.eval_episode, rng);
  const ProtocolStream stream = make_protocol_stream(ep);
  const NoiseModel noise = ckpt.noise;

  if (method == Method::flowr) {
    ModelState state =
        lc ? init_large_context(kk, ckpt.params.prior, ckpt.params.crp, noise, ckpt.params.encoder,
                                cfg.lc_eval_kk_count, cfg.count_rule)
           : init_small_context(ckpt.params.prior, ckpt.params.crp, noise, ckpt.params.encoder, ep.support,
                                cfg.count_rule);
    if (!lc && cfg.fine_tune_steps > 0 && !ep.support.empty()) {
      FineTuneOptions ft;
      ft.steps = cfg.fine_tune_steps;
      ft.step_size = cfg.fine_tune_step_size;
      state = fine_tune_output_layer(state, ep.support, ft).state;
    }
    const std::vector<PredictionRecord> preds = run_episode(state, stream.queries);
    std::vector<double> novelty;
    std::vector<Label> argmax;
    for (const PredictionRecord& p : preds) {
      novelty.push_back(p.novelty_score);
      argmax.push_back(p.known_argmax);
    }
    return detail::to_scored(index, stream, novelty, argmax);
  }

  const Encoder& enc = ckpt.params.encoder;
  PrototypeState protos;
  if (lc) {
    for (const NaturalClassStats& s : kk) {
      protos.sums.push_back(natural_to_moment(s).mean);
      protos.counts.push_back(1.0);
    }
  } else {
    for (const LabeledPoint& p : ep.support) protos = prototype_update(std::move(protos), encode(enc, p.features), p.label);
  }
  return detail::run_baseline(method, std::move(protos), enc, index, stream);
}

/// Runs cfg.eval_episodes episodes on `workers` threads. Output is independent of `workers`.
inline EpisodeRecords run_evaluation(const EmbeddingDataset& test, const Checkpoint& ckpt,
                                     const ExperimentConfig& cfg, Method method, unsigned workers) {
  const std::size_t n = cfg.eval_episodes;
  std::vector<std::vector<ScoredQuery>> per_episode(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        per_episode[i] = evaluate_episode(test, ckpt, cfg, method, static_cast<std::uint32_t>(i));
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
      }
    }
  };
  workers = std::max(1u, workers);
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  EpisodeRecords out;
  for (auto& ep : per_episode) out.insert(out.end(), ep.begin(), ep.end());
  return out;
}

/// Pooled threshold at the target TPR over all episodes, then the full metric suite.
inline EvalResult summarize(EpisodeRecords records, double target_tpr) {
  EvalResult r;
  r.records = std::move(records);
  const ScoreSet scores = novelty_scores(r.records);
  if (scores.positives.empty()) throw InvalidStateError("evaluation produced no novel queries");
  r.threshold = threshold_at_tpr(scores, target_tpr);
  r.metrics = accuracy_suite(r.records, r.threshold.threshold);
  if (!scores.negatives.empty()) r.roc = roc_curve(scores);
  return r;
}

inline EvalResult evaluate(const EmbeddingDataset& test, const Checkpoint& ckpt, const ExperimentConfig& cfg,
                           Method method, unsigned workers = 1) {
  return summarize(run_evaluation(test, ckpt, cfg, method, workers), cfg.tpr);
}

// ---------------------------------------------------------------------------
// Text artifacts.

inline std::string format_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string format_metric(const std::optional<double>& x) {
  if (!x) return "absent";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *x);
  return buf;
}

inline std::string metric_table(const EvalResult& r, const std::string& method, Setting setting, double target_tpr) {
  std::ostringstream os;
  const AccuracySuite& m = r.metrics;
  os << "method=" << method << '\n'
     << "setting=" << to_string(setting) << '\n'
     << "queries=" << m.n_queries << '\n'
     << "support_queries=" << m.n_support << '\n'
     << "incremental_queries=" << m.n_incremental << '\n'
     << "novel_queries=" << m.n_novel << '\n'
     << "target_tpr=" << format_metric(target_tpr) << '\n'
     << "achieved_tpr=" << format_metric(r.threshold.achieved_tpr) << '\n'
     << "threshold=" << format_real(r.threshold.threshold) << '\n'
     << "accuracy=" << format_metric(m.accuracy) << '\n'
     << "support_accuracy=" << format_metric(m.support_accuracy) << '\n'
     << "incremental_accuracy=" << format_metric(m.incremental_accuracy) << '\n'
     << "incremental_accuracy_with_first=" << format_metric(m.incremental_accuracy_with_first) << '\n'
     << "novel_detection_accuracy=" << format_metric(m.novel_detection_accuracy) << '\n'
     << "h_measure=" << format_metric(m.h_measure) << '\n'
     << "auroc=" << format_metric(m.auroc) << '\n';
  return os.str();
}

inline constexpr const char* kRecordsHeader =
    "episode,novelty_score,known_argmax,true_label,true_novel,support_class,incremental";

inline std::string records_csv(const EpisodeRecords& records) {
  std::ostringstream os;
  os << kRecordsHeader << '\n';
  for (const ScoredQuery& r : records) {
    os << r.episode << ',' << format_real(r.novelty_score) << ',' << r.known_argmax << ',' << r.true_label << ','
       << int(r.true_novel) << ',' << int(r.support_class) << ',' << int(r.incremental) << '\n';
  }
  return os.str();
}

inline EpisodeRecords parse_records_csv(std::istream& in, const std::string& source = "records") {
  std::string line;
  if (!std::getline(in, line) || line != kRecordsHeader) {
    throw std::runtime_error(source + ": line 1: expected header '" + std::string(kRecordsHeader) + "'");
  }
  EpisodeRecords out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) {
      throw std::runtime_error(source + ": line " + std::to_string(line_no) + ": expected 7 fields");
    }
    try {
      ScoredQuery r;
      r.episode = static_cast<std::uint32_t>(std::stoul(cells[0]));
      r.novelty_score = std::stod(cells[1]);
      r.known_argmax = static_cast<Label>(std::stoul(cells[2]));
      r.true_label = static_cast<Label>(std::stoul(cells[3]));
      r.true_novel = cells[4] == "1";
      r.support_class = cells[5] == "1";
      r.incremental = cells[6] == "1";
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw std::runtime_error(source + ": line " + std::to_string(line_no) + ": malformed field");
    }
  }
  return out;
}

inline std::string roc_csv(const std::vector<RocPoint>& roc) {
  std::ostringstream os;
  os << "fpr,tpr,threshold\n";
  for (const RocPoint& p : roc) os << format_real(p.fpr) << ',' << format_real(p.tpr) << ',' << format_real(p.threshold) << '\n';
  return os.str();
}

/// FLOWR_OUTPUT_DIR, when set, overrides the requested output directory.
inline std::filesystem::path resolve_output_dir(const std::string& requested) {
  if (const char* env = std::getenv("FLOWR_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return requested;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_eval_artifacts(const std::filesystem::path& dir, const EvalResult& r, const std::string& method,
                                 Setting setting, double target_tpr) {
  std::filesystem::create_directories(dir);
  write_text(dir / "records.csv", records_csv(r.records));
  write_text(dir / "roc.csv", roc_csv(r.roc));
  write_text(dir / "metrics.txt", metric_table(r, method, setting, target_tpr));
}

}  // namespace flowr

#endif  // FLOWR_EXPERIMENT_HPP
