#pragma once

// Byte-level model patches. Differing runs between two byte strings become
// ops that store their offset relative to the end of the previous op plus a
// raw payload; offsets and lengths are LEB128 varints so the common small
// gaps cost one or two bytes.
//
// File: "FWP1", u32 version, u64 source digest, u64 target digest,
// u64 target length, then (skip varint, length varint, payload) until EOF.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "fw/bytes.hpp"
#include "fw/error.hpp"

namespace fw {

inline constexpr std::string_view kPatchMagic = "FWP1";
inline constexpr std::uint32_t kPatchVersion = 1;
inline constexpr std::size_t kPatchHeaderSize = 4 + 4 + 8 + 8 + 8;
// Runs separated by fewer identical bytes than this are merged into one op.
inline constexpr std::size_t kGapMerge = 4;
inline constexpr std::size_t kMaxVarintBytes = 10;

inline void encode_varint(std::uint64_t n, Bytes& out) {
  while (n >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(n | 0x80));
    n >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(n));
}

inline Bytes encode_varint(std::uint64_t n) {
  Bytes out;
  encode_varint(n, out);
  return out;
}

struct VarintResult {
  std::uint64_t value = 0;
  std::size_t consumed = 0;
};

inline VarintResult decode_varint(ByteView bytes) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i >= kMaxVarintBytes) break;
    const std::uint8_t b = bytes[i];
    const std::uint64_t part = b & 0x7F;
    if (i == 9 && part > 1) throw FormatError("varint overflows 64 bits");
    v |= part << (7 * i);
    if ((b & 0x80) == 0) return {v, i + 1};
  }
  if (bytes.size() >= kMaxVarintBytes) throw FormatError("varint longer than 10 bytes");
  throw FormatError("truncated varint");
}

struct PatchOp {
  std::uint64_t skip = 0;  // bytes after the previous op's end
  Bytes payload;

  friend bool operator==(const PatchOp&, const PatchOp&) = default;
};

struct Patch {
  std::uint64_t source_digest = 0;
  std::uint64_t target_digest = 0;
  std::uint64_t target_length = 0;
  std::vector<PatchOp> ops;

  friend bool operator==(const Patch&, const Patch&) = default;
};

inline Patch create_patch(ByteView old_bytes, ByteView new_bytes) {
  Patch p;
  p.source_digest = fnv1a64(old_bytes);
  p.target_digest = fnv1a64(new_bytes);
  p.target_length = new_bytes.size();
  const std::size_t common = std::min(old_bytes.size(), new_bytes.size());
  const std::size_t n = new_bytes.size();
  // Bytes past the old length always differ.
  auto differs = [&](std::size_t i) { return i >= common || old_bytes[i] != new_bytes[i]; };

  std::size_t prev_end = 0;
  std::size_t i = 0;
  while (i < n) {
    if (!differs(i)) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    std::size_t end = i + 1;
    while (true) {
      while (end < n && differs(end)) ++end;
      // Look for the next differing byte within the merge gap.
      std::size_t j = end;
      while (j < n && j - end < kGapMerge && !differs(j)) ++j;
      if (j < n && j - end < kGapMerge) {
        end = j + 1;
        continue;
      }
      break;
    }
    PatchOp op;
    op.skip = start - prev_end;
    op.payload.assign(new_bytes.begin() + static_cast<std::ptrdiff_t>(start),
                      new_bytes.begin() + static_cast<std::ptrdiff_t>(end));
    p.ops.push_back(std::move(op));
    prev_end = end;
    i = end;
  }
  return p;
}

inline Bytes apply_patch(ByteView old_bytes, const Patch& p) {
  if (fnv1a64(old_bytes) != p.source_digest) {
    throw StaleBaseError("patch does not apply: base digest mismatch (wrong or already-updated base file)");
  }
  Bytes out(p.target_length, 0);
  std::copy_n(old_bytes.begin(), std::min<std::uint64_t>(old_bytes.size(), p.target_length), out.begin());
  std::uint64_t pos = 0;
  for (const PatchOp& op : p.ops) {
    if (op.skip > p.target_length - pos || op.payload.size() > p.target_length - pos - op.skip) {
      throw FormatError("patch op overruns target length " + std::to_string(p.target_length));
    }
    pos += op.skip;
    std::copy(op.payload.begin(), op.payload.end(), out.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += op.payload.size();
  }
  if (fnv1a64(out) != p.target_digest) throw CorruptionError("patched output failed target digest check");
  return out;
}

inline Bytes encode_patch(const Patch& p) {
  Bytes out;
  ByteWriter w(out);
  w.put_tag(kPatchMagic);
  w.put<std::uint32_t>(kPatchVersion);
  w.put<std::uint64_t>(p.source_digest);
  w.put<std::uint64_t>(p.target_digest);
  w.put<std::uint64_t>(p.target_length);
  for (const PatchOp& op : p.ops) {
    encode_varint(op.skip, out);
    encode_varint(op.payload.size(), out);
    w.put_bytes(op.payload);
  }
  return out;
}

inline Patch decode_patch(ByteView bytes) {
  ByteReader r(bytes, "patch");
  r.expect_tag(kPatchMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kPatchVersion) throw FormatError("patch: unsupported version " + std::to_string(version));
  Patch p;
  p.source_digest = r.get<std::uint64_t>();
  p.target_digest = r.get<std::uint64_t>();
  p.target_length = r.get<std::uint64_t>();
  while (!r.done()) {
    const auto skip = decode_varint(r.rest());
    r.take(skip.consumed);
    const auto len = decode_varint(r.rest());
    r.take(len.consumed);
    if (len.value > r.remaining()) throw FormatError("patch: op payload truncated");
    ByteView payload = r.take(static_cast<std::size_t>(len.value));
    p.ops.push_back(PatchOp{skip.value, Bytes(payload.begin(), payload.end())});
  }
  return p;
}

inline std::size_t encoded_patch_size(const Patch& p) {
  std::size_t n = kPatchHeaderSize;
  for (const PatchOp& op : p.ops) n += encode_varint(op.skip).size() + encode_varint(op.payload.size()).size() + op.payload.size();
  return n;
}

}  // namespace fw
