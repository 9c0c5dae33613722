#pragma once

// 16-bit dynamic bucket quantization.
//
// One pass finds min and max; max is rounded up to `alpha` decimals and min
// down to `beta` decimals so the rounded range always covers the data. The
// range is split into 65536 buckets:
//
//   bucket_size = (round_up(max, alpha) - round_down(min, beta)) / 65536
//   index_i     = clamp(round((w_i - w_min) / bucket_size), 0, 65535)
//
// and reconstruction is w_min + index * bucket_size. The raw index of a
// weight at the rounded max is 65536, hence the clamp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fw/bytes.hpp"
#include "fw/error.hpp"

namespace fw {

inline constexpr std::string_view kQuantMagic = "FWQ1";
inline constexpr std::uint32_t kQuantVersion = 1;
inline constexpr double kBucketCount = 65536.0;
inline constexpr std::size_t kQuantHeaderSize = 4 + 4 + 4 + 4 + 8;

struct QuantizedBlob {
  float w_min = 0.0f;
  float bucket_size = 0.0f;
  std::vector<std::uint16_t> indices;
};

inline double round_up_decimals(double v, int decimals) {
  const double s = std::pow(10.0, decimals);
  double r = std::ceil(v * s) / s;
  if (r < v) r = (std::ceil(v * s) + 1.0) / s;
  return r;
}

inline double round_down_decimals(double v, int decimals) {
  const double s = std::pow(10.0, decimals);
  double r = std::floor(v * s) / s;
  if (r > v) r = (std::floor(v * s) - 1.0) / s;
  return r;
}

// Largest float not above v.
inline float float_at_most(double v) {
  float f = static_cast<float>(v);
  if (static_cast<double>(f) > v) f = std::nextafter(f, -INFINITY);
  return f;
}

inline QuantizedBlob quantize(std::span<const float> weights, int alpha = 4, int beta = 4) {
  if (weights.empty()) throw ContractError("quantize: no weights");
  if (alpha < 0 || alpha > 9 || beta < 0 || beta > 9) throw ContractError("quantize: alpha and beta must be in [0, 9]");
  float lo = weights[0];
  float hi = weights[0];
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const float w = weights[i];
    if (!std::isfinite(w)) throw NumericError("weight " + std::to_string(i), "non-finite value");
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  QuantizedBlob blob;
  blob.indices.assign(weights.size(), 0);
  if (lo == hi) {
    blob.w_min = float_at_most(round_down_decimals(lo, beta));
    blob.bucket_size = 0.0f;
    return blob;
  }
  const double w_min = float_at_most(round_down_decimals(lo, beta));
  const double w_max = round_up_decimals(hi, alpha);
  blob.w_min = static_cast<float>(w_min);
  blob.bucket_size = static_cast<float>((w_max - w_min) / kBucketCount);
  const double step = blob.bucket_size;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double raw = std::round((static_cast<double>(weights[i]) - w_min) / step);
    blob.indices[i] = static_cast<std::uint16_t>(std::clamp(raw, 0.0, 65535.0));
  }
  return blob;
}

inline double reconstruct(const QuantizedBlob& blob, std::uint16_t index) {
  return static_cast<double>(blob.w_min) + static_cast<double>(index) * static_cast<double>(blob.bucket_size);
}

inline std::vector<float> dequantize(const QuantizedBlob& blob) {
  std::vector<float> out(blob.indices.size());
  const double base = blob.w_min;
  const double step = blob.bucket_size;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(base + blob.indices[i] * step);
  return out;
}

// "FWQ1", u32 version, f32 w_min, f32 bucket_size, u64 count, count x u16.
inline Bytes encode_quantized(const QuantizedBlob& blob) {
  Bytes out;
  out.reserve(kQuantHeaderSize + 2 * blob.indices.size());
  ByteWriter w(out);
  w.put_tag(kQuantMagic);
  w.put<std::uint32_t>(kQuantVersion);
  w.put<float>(blob.w_min);
  w.put<float>(blob.bucket_size);
  w.put<std::uint64_t>(blob.indices.size());
  const auto* p = reinterpret_cast<const std::uint8_t*>(blob.indices.data());
  out.insert(out.end(), p, p + 2 * blob.indices.size());
  return out;
}

inline QuantizedBlob decode_quantized(ByteView bytes) {
  ByteReader r(bytes, "quantized blob");
  r.expect_tag(kQuantMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kQuantVersion) throw FormatError("quantized blob: unsupported version " + std::to_string(version));
  QuantizedBlob blob;
  blob.w_min = r.get<float>();
  blob.bucket_size = r.get<float>();
  const auto count = r.get<std::uint64_t>();
  if (!std::isfinite(blob.w_min) || !std::isfinite(blob.bucket_size) || blob.bucket_size < 0) {
    throw FormatError("quantized blob: bad header values");
  }
  if (count > r.remaining() / 2 || r.remaining() != 2 * count) {
    throw FormatError("quantized blob: header says " + std::to_string(count) + " weights, payload has " +
                      std::to_string(r.remaining()) + " bytes");
  }
  blob.indices.resize(count);
  std::memcpy(blob.indices.data(), r.rest().data(), 2 * count);
  return blob;
}

}  // namespace fw
