#ifndef FLOWR_DATASET_HPP
#define FLOWR_DATASET_HPP

// Embedding datasets and the FSE1 binary format.
//
// Layout, all little-endian:
//   offset 0   magic "FSE1"
//   offset 4   u32 version (= 1)
//   offset 8   u32 dim
//   offset 12  u64 count
//   offset 20  count x { u32 label, dim x f32 }
// Labels are dense 1..N. Nothing may follow the last record.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowr/core.hpp"

namespace flowr {

struct EmbeddingDataset {
  std::uint32_t dim = 0;
  LabeledSet records;

  Label num_classes() const {
    Label n = 0;
    for (const auto& r : records) n = std::max(n, r.label);
    return n;
  }

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(std::uint64_t offset, const std::string& what)
      : std::runtime_error("offset " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

inline constexpr std::array<char, 4> kDatasetMagic = {'F', 'S', 'E', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 20;

inline std::size_t dataset_record_bytes(std::uint32_t dim) { return 4 + 4 * static_cast<std::size_t>(dim); }

/// Checks dimensions, finiteness, label 0 and label density.
inline void validate(const EmbeddingDataset& ds) {
  std::vector<bool> seen;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const LabeledPoint& r = ds.records[i];
    if (r.label == 0) throw std::invalid_argument("record " + std::to_string(i) + ": label 0 is reserved");
    if (r.features.size() != ds.dim) {
      throw DimensionError("record " + std::to_string(i) + ": expected " + std::to_string(ds.dim) +
                           " features, found " + std::to_string(r.features.size()));
    }
    if (!all_finite(r.features)) {
      throw std::invalid_argument("record " + std::to_string(i) + ": non-finite feature");
    }
    if (seen.size() < r.label) seen.resize(r.label, false);
    seen[r.label - 1] = true;
  }
  for (std::size_t n = 0; n < seen.size(); ++n) {
    if (!seen[n]) throw std::invalid_argument("labels are not dense: class " + std::to_string(n + 1) + " is empty");
  }
}

namespace detail {

template <class U>
void put_le(std::vector<char>& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

template <class U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace detail

inline std::vector<char> encode_dataset(const EmbeddingDataset& ds) {
  validate(ds);
  std::vector<char> out;
  out.reserve(kDatasetHeaderBytes + ds.records.size() * dataset_record_bytes(ds.dim));
  out.insert(out.end(), kDatasetMagic.begin(), kDatasetMagic.end());
  detail::put_le<std::uint32_t>(out, kDatasetVersion);
  detail::put_le<std::uint32_t>(out, ds.dim);
  detail::put_le<std::uint64_t>(out, ds.records.size());
  for (const LabeledPoint& r : ds.records) {
    detail::put_le<std::uint32_t>(out, r.label);
    for (double x : r.features) {
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
  }
  return out;
}

inline EmbeddingDataset decode_dataset(std::span<const char> bytes) {
  if (bytes.size() < kDatasetHeaderBytes) {
    throw FormatError(bytes.size(), "truncated header (" + std::to_string(bytes.size()) + " of " +
                                        std::to_string(kDatasetHeaderBytes) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kDatasetMagic.data(), 4) != 0) throw FormatError(0, "bad magic, expected FSE1");
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kDatasetVersion) throw FormatError(4, "unsupported version " + std::to_string(version));
  EmbeddingDataset ds;
  ds.dim = detail::get_le<std::uint32_t>(bytes.data() + 8);
  const auto count = detail::get_le<std::uint64_t>(bytes.data() + 12);
  const std::size_t rec = dataset_record_bytes(ds.dim);
  const std::uint64_t body = bytes.size() - kDatasetHeaderBytes;
  if (count > body / rec) {
    const std::uint64_t complete = body / rec;
    throw FormatError(kDatasetHeaderBytes + complete * rec,
                      "truncated record " + std::to_string(complete) + " of " + std::to_string(count));
  }
  if (body != count * rec) {
    throw FormatError(kDatasetHeaderBytes + count * rec, "trailing bytes after last record");
  }
  ds.records.reserve(count);
  const char* p = bytes.data() + kDatasetHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i, p += rec) {
    LabeledPoint r;
    r.label = detail::get_le<std::uint32_t>(p);
    if (r.label == 0) throw FormatError(kDatasetHeaderBytes + i * rec, "record " + std::to_string(i) + " has label 0");
    r.features.resize(ds.dim);
    for (std::uint32_t j = 0; j < ds.dim; ++j) {
      r.features[j] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4 + 4 * j));
    }
    ds.records.push_back(std::move(r));
  }
  validate(ds);
  return ds;
}

inline void write_dataset(const std::string& path, const EmbeddingDataset& ds) {
  detail::write_file(path, encode_dataset(ds));
}

inline EmbeddingDataset read_dataset(const std::string& path) {
  const std::vector<char> bytes = detail::read_file(path);
  return decode_dataset(bytes);
}

struct SyntheticWorldConfig {
  std::uint32_t n_classes = 15;
  std::uint32_t dim = 8;
  double prior_variance = 25.0;
  double noise_variance = 0.5;
  std::uint32_t points_per_class = 40;
  std::uint64_t seed = 0;
  /// Seeds the per-point noise separately from the class means; defaults to `seed`.
  std::optional<std::uint64_t> sample_seed;
};

/// Class means ~ N(0, prior_variance I); points ~ N(mean, noise_variance I). Features are
/// rounded to float precision so the dataset survives an FSE1 round trip unchanged.
/// Mean n depends only on (seed, n), so worlds of different sizes share their leading classes.
inline EmbeddingDataset generate_synthetic_world(const SyntheticWorldConfig& cfg) {
  if (cfg.n_classes == 0 || cfg.dim == 0 || cfg.points_per_class == 0) {
    throw std::invalid_argument("generate_synthetic_world: counts must be >= 1");
  }
  if (cfg.prior_variance < 0.0 || cfg.noise_variance < 0.0) {
    throw std::invalid_argument("generate_synthetic_world: variances must be non-negative");
  }
  std::mt19937_64 world(cfg.seed);
  std::mt19937_64 sampler(cfg.sample_seed.value_or(cfg.seed) ^ 0x5bd1e9955bd1e995ULL);
  std::normal_distribution<double> unit(0.0, 1.0);
  const double prior_sd = std::sqrt(cfg.prior_variance);
  const double noise_sd = std::sqrt(cfg.noise_variance);
  EmbeddingDataset ds;
  ds.dim = cfg.dim;
  ds.records.reserve(static_cast<std::size_t>(cfg.n_classes) * cfg.points_per_class);
  for (std::uint32_t c = 0; c < cfg.n_classes; ++c) {
    Vector mean(cfg.dim);
    for (double& m : mean) m = prior_sd * unit(world);
    for (std::uint32_t i = 0; i < cfg.points_per_class; ++i) {
      LabeledPoint p{c + 1, Vector(cfg.dim)};
      for (std::uint32_t j = 0; j < cfg.dim; ++j) {
        p.features[j] = static_cast<float>(mean[j] + noise_sd * unit(sampler));
      }
      ds.records.push_back(std::move(p));
    }
  }
  return ds;
}

/// Keeps the listed classes, relabelled densely in the listed order.
inline EmbeddingDataset select_classes(const EmbeddingDataset& ds, std::span<const Label> keep) {
  std::vector<Label> remap(ds.num_classes() + 1, 0);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] == 0 || keep[i] > ds.num_classes()) {
      throw std::invalid_argument("select_classes: class " + std::to_string(keep[i]) + " not in dataset");
    }
    if (remap[keep[i]] != 0) throw std::invalid_argument("select_classes: class listed twice");
    remap[keep[i]] = static_cast<Label>(i + 1);
  }
  EmbeddingDataset out;
  out.dim = ds.dim;
  for (Label new_label = 1; new_label <= keep.size(); ++new_label) {
    for (const LabeledPoint& r : ds.records) {
      if (remap[r.label] == new_label) out.records.push_back({new_label, r.features});
    }
  }
  return out;
}

/// Record indices grouped by class; entry n holds label n+1.
inline std::vector<std::vector<std::size_t>> index_by_class(const EmbeddingDataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.records.size(); ++i) by_class[ds.records[i].label - 1].push_back(i);
  return by_class;
}

}  // namespace flowr

#endif  // FLOWR_DATASET_HPP
