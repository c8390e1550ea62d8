#ifndef FLOWR_ENCODER_HPP
#define FLOWR_ENCODER_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "flowr/core.hpp"

namespace flowr {

enum class EncoderKind : std::uint8_t { identity = 0, affine = 1 };

/// Feature map over precomputed features: identity, or z = W x + bias with W row-major (d_out x d_in).
template <class T>
struct BasicEncoder {
  EncoderKind kind = EncoderKind::identity;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::vector<T> weight;
  std::vector<T> bias;

  std::size_t num_params() const { return kind == EncoderKind::affine ? weight.size() + bias.size() : 0; }
};

using Encoder = BasicEncoder<double>;

inline bool operator==(const Encoder& a, const Encoder& b) {
  return a.kind == b.kind && a.d_in == b.d_in && a.d_out == b.d_out && a.weight == b.weight &&
         a.bias == b.bias;
}

inline Encoder make_identity_encoder(std::size_t dim) {
  return Encoder{EncoderKind::identity, dim, dim, {}, {}};
}

/// Affine encoder whose weight is the identity (padded or truncated) and whose bias is zero.
inline Encoder make_identity_affine_encoder(std::size_t d_in, std::size_t d_out) {
  Encoder e{EncoderKind::affine, d_in, d_out, Vector(d_in * d_out, 0.0), Vector(d_out, 0.0)};
  for (std::size_t i = 0; i < std::min(d_in, d_out); ++i) e.weight[i * d_in + i] = 1.0;
  return e;
}

inline Encoder make_affine_encoder(std::size_t d_in, std::size_t d_out, Vector weight, Vector bias) {
  if (weight.size() != d_in * d_out || bias.size() != d_out) {
    throw DimensionError("make_affine_encoder: weight must be d_out x d_in and bias length d_out");
  }
  if (!all_finite(weight) || !all_finite(bias)) {
    throw std::invalid_argument("make_affine_encoder: non-finite parameters");
  }
  return Encoder{EncoderKind::affine, d_in, d_out, std::move(weight), std::move(bias)};
}

/// Gaussian weights with variance 1 / d_in, zero bias.
template <class Rng>
Encoder make_random_affine_encoder(std::size_t d_in, std::size_t d_out, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
  Vector w(d_in * d_out);
  for (double& x : w) x = dist(rng);
  return make_affine_encoder(d_in, d_out, std::move(w), Vector(d_out, 0.0));
}

template <class T>
std::vector<T> encode(const BasicEncoder<T>& enc, std::span<const double> x) {
  require_same_dim(enc.d_in, x.size(), "encode");
  if (enc.kind == EncoderKind::identity) return std::vector<T>(x.begin(), x.end());
  std::vector<T> z(enc.bias);
  for (std::size_t r = 0; r < enc.d_out; ++r) {
    const T* row = enc.weight.data() + r * enc.d_in;
    for (std::size_t c = 0; c < enc.d_in; ++c) {
      if (x[c] != 0.0) z[r] = z[r] + row[c] * x[c];
    }
  }
  return z;
}

/// Appends the trainable parameters (weight then bias) to `out`.
inline void pack(const Encoder& enc, Vector& out) {
  if (enc.kind != EncoderKind::affine) return;
  out.insert(out.end(), enc.weight.begin(), enc.weight.end());
  out.insert(out.end(), enc.bias.begin(), enc.bias.end());
}

/// Reads parameters laid out by `pack`, advancing `offset`. `shape` supplies kind and dims.
template <class T>
BasicEncoder<T> unpack_encoder(const Encoder& shape, std::span<const T> flat, std::size_t& offset) {
  BasicEncoder<T> e{shape.kind, shape.d_in, shape.d_out, {}, {}};
  if (shape.kind != EncoderKind::affine) return e;
  const std::size_t nw = shape.d_in * shape.d_out;
  e.weight.assign(flat.begin() + offset, flat.begin() + offset + nw);
  offset += nw;
  e.bias.assign(flat.begin() + offset, flat.begin() + offset + shape.d_out);
  offset += shape.d_out;
  return e;
}

/// Promotes a double encoder to scalar type T (constants, no tape).
template <class T>
BasicEncoder<T> lift(const Encoder& e) {
  return BasicEncoder<T>{e.kind, e.d_in, e.d_out, std::vector<T>(e.weight.begin(), e.weight.end()),
                         std::vector<T>(e.bias.begin(), e.bias.end())};
}

}  // namespace flowr

#endif  // FLOWR_ENCODER_HPP
