#ifndef FLOWR_CHECKPOINT_HPP
#define FLOWR_CHECKPOINT_HPP

// Versioned binary checkpoints. See docs/checkpoint_format.md for the layout.
// Reals are stored as raw IEEE-754 binary64, so a save/load round trip is bit-exact.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowr/config.hpp"
#include "flowr/dataset.hpp"
#include "flowr/meta_train.hpp"
#include "flowr/pretrain.hpp"

namespace flowr {

struct Checkpoint {
  Setting setting = Setting::small_context;
  NovelCountRule count_rule = NovelCountRule::append_then_increment;
  std::uint64_t config_hash = 0;
  NoiseModel noise;
  MetaParams params;
  ClassEmbeddings embeddings;  // pre-trained known-known embeddings, may be empty
};

inline bool operator==(const Checkpoint& a, const Checkpoint& b) {
  return a.setting == b.setting && a.count_rule == b.count_rule && a.config_hash == b.config_hash &&
         a.noise.noise_variance == b.noise.noise_variance && a.params == b.params && a.embeddings == b.embeddings;
}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 4> kCheckpointMagic = {'F', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class SectionWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { put_le(buf_, v); }
  void u64(std::uint64_t v) { put_le(buf_, v); }
  void f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> xs) {
    for (double x : xs) f64(x);
  }

  void flush(std::vector<char>& out, const char (&tag)[5]) {
    out.insert(out.end(), tag, tag + 4);
    put_le<std::uint64_t>(out, buf_.size());
    out.insert(out.end(), buf_.begin(), buf_.end());
    buf_.clear();
  }

 private:
  std::vector<char> buf_;
};

class SectionReader {
 public:
  SectionReader(std::span<const char> payload, std::string tag) : p_(payload), tag_(std::move(tag)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }
  std::uint32_t u32() { return get_le<std::uint32_t>(take(4)); }
  std::uint64_t u64() { return get_le<std::uint64_t>(take(8)); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>(take(8))); }
  Vector f64s(std::size_t n) {
    Vector v(n);
    for (double& x : v) x = f64();
    return v;
  }
  void finish() const {
    if (pos_ != p_.size()) throw CheckpointError("section " + tag_ + ": " + std::to_string(p_.size() - pos_) + " unread bytes");
  }

 private:
  const char* take(std::size_t n) {
    if (pos_ + n > p_.size()) throw CheckpointError("section " + tag_ + " is shorter than its contents require");
    const char* at = p_.data() + pos_;
    pos_ += n;
    return at;
  }
  std::span<const char> p_;
  std::string tag_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& c) {
  std::vector<char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::SectionWriter w;

  w.u8(static_cast<std::uint8_t>(c.setting));
  w.u8(static_cast<std::uint8_t>(c.count_rule));
  w.u64(c.config_hash);
  w.f64(c.noise.noise_variance);
  w.flush(out, "HEAD");

  const Encoder& e = c.params.encoder;
  w.u8(static_cast<std::uint8_t>(e.kind));
  w.u32(static_cast<std::uint32_t>(e.d_in));
  w.u32(static_cast<std::uint32_t>(e.d_out));
  w.f64s(e.weight);
  w.f64s(e.bias);
  w.flush(out, "ENCD");

  w.u32(static_cast<std::uint32_t>(c.params.prior.dim()));
  w.f64s(c.params.prior.stats.q);
  w.f64(c.params.prior.stats.lambda);
  w.flush(out, "PRIO");

  w.f64(c.params.crp.a);
  w.f64(c.params.crp.rho);
  w.flush(out, "CRPP");

  const auto& kk = c.params.kk_stats;
  w.u32(static_cast<std::uint32_t>(kk.size()));
  w.u32(static_cast<std::uint32_t>(kk.empty() ? 0 : kk.front().dim()));
  for (const auto& s : kk) {
    w.f64s(s.q);
    w.f64(s.lambda);
  }
  w.flush(out, "KKST");

  const ClassEmbeddings& emb = c.embeddings;
  w.u32(static_cast<std::uint32_t>(emb.num_classes()));
  w.u32(static_cast<std::uint32_t>(emb.dim()));
  for (const auto& m : emb.means) w.f64s(m);
  w.f64s(emb.variances);
  w.flush(out, "EMBD");

  w.flush(out, "END_");
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const char> bytes) {
  if (bytes.size() < 8) throw CheckpointError("truncated checkpoint: header incomplete");
  if (std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) throw CheckpointError("bad checkpoint magic");
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  std::size_t pos = 8;
  auto section = [&](const char* tag) {
    if (pos + 12 > bytes.size()) throw CheckpointError(std::string("truncated checkpoint: missing section ") + tag);
    if (std::memcmp(bytes.data() + pos, tag, 4) != 0) {
      throw CheckpointError(std::string("expected section ") + tag + ", found '" +
                            std::string(bytes.data() + pos, 4) + "'");
    }
    const auto len = detail::get_le<std::uint64_t>(bytes.data() + pos + 4);
    pos += 12;
    if (len > bytes.size() - pos) throw CheckpointError(std::string("truncated checkpoint: section ") + tag + " cut short");
    detail::SectionReader r(bytes.subspan(pos, len), tag);
    pos += len;
    return r;
  };

  Checkpoint c;
  {
    auto r = section("HEAD");
    const auto setting = r.u8();
    const auto rule = r.u8();
    if (setting > 1 || rule > 1) throw CheckpointError("section HEAD: invalid enum value");
    c.setting = static_cast<Setting>(setting);
    c.count_rule = static_cast<NovelCountRule>(rule);
    c.config_hash = r.u64();
    c.noise.noise_variance = r.f64();
    r.finish();
  }
  {
    auto r = section("ENCD");
    const auto kind = r.u8();
    if (kind > 1) throw CheckpointError("section ENCD: invalid encoder kind");
    Encoder& e = c.params.encoder;
    e.kind = static_cast<EncoderKind>(kind);
    e.d_in = r.u32();
    e.d_out = r.u32();
    if (e.kind == EncoderKind::affine) {
      e.weight = r.f64s(e.d_in * e.d_out);
      e.bias = r.f64s(e.d_out);
    }
    r.finish();
  }
  {
    auto r = section("PRIO");
    const auto d = r.u32();
    c.params.prior.stats.q = r.f64s(d);
    c.params.prior.stats.lambda = r.f64();
    r.finish();
  }
  {
    auto r = section("CRPP");
    c.params.crp.a = r.f64();
    c.params.crp.rho = r.f64();
    r.finish();
  }
  {
    auto r = section("KKST");
    const auto n = r.u32();
    const auto d = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      NaturalClassStats s;
      s.q = r.f64s(d);
      s.lambda = r.f64();
      c.params.kk_stats.push_back(std::move(s));
    }
    r.finish();
  }
  {
    auto r = section("EMBD");
    const auto n = r.u32();
    const auto d = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) c.embeddings.means.push_back(r.f64s(d));
    c.embeddings.variances = r.f64s(n);
    r.finish();
  }
  section("END_").finish();
  if (pos != bytes.size()) throw CheckpointError("trailing bytes after END_ section");
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  detail::write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<char> bytes = detail::read_file(path);
  return decode_checkpoint(bytes);
}

/// Warning text when the checkpoint was produced under a different model definition.
inline std::optional<std::string> config_hash_warning(const Checkpoint& c, const ExperimentConfig& cfg) {
  const std::uint64_t expected = config_hash(cfg);
  if (c.config_hash == expected) return std::nullopt;
  return "checkpoint config hash " + std::to_string(c.config_hash) + " differs from current config hash " +
         std::to_string(expected);
}

}  // namespace flowr

#endif  // FLOWR_CHECKPOINT_HPP
