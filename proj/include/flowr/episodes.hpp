#ifndef FLOWR_EPISODES_HPP
#define FLOWR_EPISODES_HPP

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowr/core.hpp"
#include "flowr/dataset.hpp"

namespace flowr {

struct EpisodeConfig {
  std::size_t n_support_classes = 40;
  std::size_t shots_min = 1;
  std::size_t shots_max = 10;
  std::size_t n_novel_classes = 10;
  std::size_t queries_per_class = 10;

  void validate(bool large_context) const {
    if (shots_min < 1 || shots_min > shots_max) throw std::invalid_argument("EpisodeConfig: need 1 <= shots_min <= shots_max");
    if (n_novel_classes < 1 || queries_per_class < 1) {
      throw std::invalid_argument("EpisodeConfig: novel classes and queries per class must be >= 1");
    }
    if (!large_context && n_support_classes < 1) {
      throw std::invalid_argument("EpisodeConfig: small-context episodes need >= 1 support class");
    }
  }

  friend bool operator==(const EpisodeConfig&, const EpisodeConfig&) = default;
};

class InsufficientDataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One sampled task. Support labels are dense 1..N in arrival order. Query labels are
/// 1..N for known classes and N+1 for every unknown-unknown point (the shared novel bucket).
struct Episode {
  LabeledSet support;
  LabeledSet query;
  std::vector<Label> query_source;   // dataset label of each query point
  LabeledSet adapt_pool;             // unknown-unknown queries relabelled 1..M per source class
  std::vector<std::size_t> adapt_anchors;  // adapt_anchors[m] indexes the conditioning point of class m+1
  std::size_t num_known = 0;         // N
  std::vector<std::size_t> support_indices;  // dataset record indices
  std::vector<std::size_t> query_indices;
};

namespace detail {

inline void require_points(const std::vector<std::size_t>& members, std::size_t need, Label label) {
  if (members.size() < need) {
    throw InsufficientDataError("class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                                " points, episode needs " + std::to_string(need));
  }
}

/// Fills query labels / adaptation pool for the novel classes, then shuffles the query order.
template <class Rng>
void finish_episode(const EmbeddingDataset& ds, Episode& ep, const std::vector<Label>& novel_sources,
                    const std::vector<std::vector<std::size_t>>& by_class, std::size_t queries_per_class,
                    Rng& rng) {
  const Label bucket = static_cast<Label>(ep.num_known + 1);
  for (Label src : novel_sources) {
    std::vector<std::size_t> members = by_class[src - 1];
    require_points(members, queries_per_class, src);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < queries_per_class; ++i) {
      ep.query.push_back({bucket, ds.records[members[i]].features});
      ep.query_source.push_back(src);
      ep.query_indices.push_back(members[i]);
    }
  }

  std::vector<std::size_t> order(ep.query.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Episode shuffled = ep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    shuffled.query[i] = ep.query[order[i]];
    shuffled.query_source[i] = ep.query_source[order[i]];
    shuffled.query_indices[i] = ep.query_indices[order[i]];
  }
  ep = std::move(shuffled);

  // Adaptation pool: unknown-unknown points with their source classes restored (1..M by first appearance).
  std::map<Label, Label> relabel;
  std::vector<std::vector<std::size_t>> members_of;
  for (std::size_t i = 0; i < ep.query.size(); ++i) {
    if (ep.query[i].label != bucket) continue;
    auto [it, inserted] = relabel.emplace(ep.query_source[i], static_cast<Label>(relabel.size() + 1));
    if (inserted) members_of.emplace_back();
    members_of[it->second - 1].push_back(ep.adapt_pool.size());
    ep.adapt_pool.push_back({it->second, ep.query[i].features});
  }
  for (const auto& m : members_of) {
    std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
    ep.adapt_anchors.push_back(m[pick(rng)]);
  }
}

}  // namespace detail

/// Small-context task: disjoint support and unknown-unknown class sets.
template <class Rng>
Episode sample_sc_task(const EmbeddingDataset& ds, const EpisodeConfig& cfg, Rng& rng) {
  cfg.validate(false);
  const Label n_classes = ds.num_classes();
  if (n_classes < cfg.n_support_classes + cfg.n_novel_classes) {
    throw InsufficientDataError("dataset has " + std::to_string(n_classes) + " classes, episode needs " +
                                std::to_string(cfg.n_support_classes + cfg.n_novel_classes));
  }
  const auto by_class = index_by_class(ds);
  std::vector<Label> classes(n_classes);
  std::iota(classes.begin(), classes.end(), Label{1});
  std::shuffle(classes.begin(), classes.end(), rng);
  const std::vector<Label> support_src(classes.begin(), classes.begin() + cfg.n_support_classes);
  const std::vector<Label> novel_src(classes.begin() + cfg.n_support_classes,
                                     classes.begin() + cfg.n_support_classes + cfg.n_novel_classes);

  Episode ep;
  ep.num_known = cfg.n_support_classes;
  std::uniform_int_distribution<std::size_t> shots(cfg.shots_min, cfg.shots_max);
  struct Drawn {
    Label src;
    std::size_t index;
  };
  std::vector<Drawn> support, known_queries;
  for (Label src : support_src) {
    std::vector<std::size_t> members = by_class[src - 1];
    const std::size_t k = shots(rng);
    detail::require_points(members, k + cfg.queries_per_class, src);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < k; ++i) support.push_back({src, members[i]});
    for (std::size_t i = k; i < k + cfg.queries_per_class; ++i) known_queries.push_back({src, members[i]});
  }
  std::shuffle(support.begin(), support.end(), rng);

  // Dense labels by first appearance in the support stream.
  std::map<Label, Label> dense;
  for (const Drawn& d : support) {
    const auto it = dense.emplace(d.src, static_cast<Label>(dense.size() + 1)).first;
    ep.support.push_back({it->second, ds.records[d.index].features});
    ep.support_indices.push_back(d.index);
  }
  for (const Drawn& d : known_queries) {
    ep.query.push_back({dense.at(d.src), ds.records[d.index].features});
    ep.query_source.push_back(d.src);
    ep.query_indices.push_back(d.index);
  }
  detail::finish_episode(ds, ep, novel_src, by_class, cfg.queries_per_class, rng);
  return ep;
}

/// Large-context task: classes 1..n_kk of the dataset are known-known; unknown-unknown
/// classes are drawn from the remaining labels. No support set.
template <class Rng>
Episode sample_lc_task(const EmbeddingDataset& ds, std::size_t n_kk, const EpisodeConfig& cfg, Rng& rng) {
  cfg.validate(true);
  const Label n_classes = ds.num_classes();
  if (n_kk == 0 || n_classes < n_kk + cfg.n_novel_classes) {
    throw InsufficientDataError("dataset has " + std::to_string(n_classes) + " classes; large-context episode needs " +
                                std::to_string(n_kk) + " known-known plus " + std::to_string(cfg.n_novel_classes) +
                                " unknown-unknown");
  }
  const auto by_class = index_by_class(ds);
  Episode ep;
  ep.num_known = n_kk;
  for (Label src = 1; src <= n_kk; ++src) {
    std::vector<std::size_t> members = by_class[src - 1];
    detail::require_points(members, cfg.queries_per_class, src);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < cfg.queries_per_class; ++i) {
      ep.query.push_back({src, ds.records[members[i]].features});
      ep.query_source.push_back(src);
      ep.query_indices.push_back(members[i]);
    }
  }
  std::vector<Label> pool(n_classes - n_kk);
  std::iota(pool.begin(), pool.end(), static_cast<Label>(n_kk + 1));
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(cfg.n_novel_classes);
  detail::finish_episode(ds, ep, pool, by_class, cfg.queries_per_class, rng);
  return ep;
}

/// Query stream under the dense test-time protocol: each unknown-unknown source class
/// takes the next free label on first encounter.
struct ProtocolStream {
  LabeledSet queries;
  std::vector<bool> first_encounter;  // unknown-unknown at prediction time
  std::vector<bool> known_before;     // class known before the query phase
};

inline ProtocolStream make_protocol_stream(const Episode& ep) {
  ProtocolStream s;
  const Label bucket = static_cast<Label>(ep.num_known + 1);
  std::map<Label, Label> assigned;
  Label next = bucket;
  for (std::size_t i = 0; i < ep.query.size(); ++i) {
    const LabeledPoint& q = ep.query[i];
    if (q.label != bucket) {
      s.queries.push_back(q);
      s.first_encounter.push_back(false);
      s.known_before.push_back(true);
      continue;
    }
    auto [it, inserted] = assigned.emplace(ep.query_source[i], next);
    if (inserted) ++next;
    s.queries.push_back({it->second, q.features});
    s.first_encounter.push_back(inserted);
    s.known_before.push_back(false);
  }
  return s;
}

}  // namespace flowr

#endif  // FLOWR_EPISODES_HPP
