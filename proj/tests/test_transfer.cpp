#include <gtest/gtest.h>

#include <cmath>

#include "fw/transfer.hpp"
#include "support/synthetic.hpp"

using namespace fw;

namespace {

Bytes random_bytes(fwtest::Rng& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

// Reference decoder: 7 bits per byte, low group first.
std::uint64_t reference_varint(const Bytes& b) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < b.size(); ++i) v |= static_cast<std::uint64_t>(b[i] & 0x7F) << (7 * i);
  return v;
}

}  // namespace

TEST(Quantize, UnitRangeFixture) {
  const std::vector<float> w{0.0f, 1.0f, 0.5f};
  const auto q = quantize(w, 4, 4);
  EXPECT_EQ(q.w_min, 0.0f);
  EXPECT_FLOAT_EQ(q.bucket_size, 1.0f / 65536.0f);
  EXPECT_EQ(q.indices[0], 0);
  EXPECT_EQ(q.indices[1], 65535);  // raw 65536, clamped
  EXPECT_EQ(q.indices[2], 32768);
  EXPECT_EQ(reconstruct(q, 0), q.w_min);
}

TEST(Quantize, ConstantInput) {
  const std::vector<float> w(10, 0.123456f);
  const auto q = quantize(w, 4, 4);
  EXPECT_EQ(q.bucket_size, 0.0f);
  EXPECT_FLOAT_EQ(q.w_min, 0.1234f);
  EXPECT_LE(q.w_min, 0.1234);
  for (auto i : q.indices) EXPECT_EQ(i, 0);
  for (float v : dequantize(q)) EXPECT_EQ(v, q.w_min);
}

TEST(Quantize, DirectionalRounding) {
  EXPECT_DOUBLE_EQ(round_up_decimals(0.12341, 4), 0.1235);
  EXPECT_DOUBLE_EQ(round_down_decimals(-0.12341, 4), -0.1235);
  EXPECT_DOUBLE_EQ(round_up_decimals(-0.12349, 4), -0.1234);
  fwtest::Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double v = fwtest::uniform(rng, -50, 50);
    EXPECT_GE(round_up_decimals(v, 3), v);
    EXPECT_LE(round_down_decimals(v, 2), v);
  }
}

TEST(Quantize, ErrorBoundAndMonotone) {
  fwtest::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const double scale = std::pow(10.0, fwtest::uniform(rng, -3, 2));
    std::vector<float> w(5000);
    for (auto& x : w) x = static_cast<float>(fwtest::uniform(rng, -scale, scale * 0.7));
    const auto q = quantize(w, 4, 4);
    const double bs = q.bucket_size;
    double lo = w[0], hi = w[0];
    for (float x : w) {
      lo = std::min<double>(lo, x);
      hi = std::max<double>(hi, x);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double err = std::abs(reconstruct(q, q.indices[i]) - w[i]);
      if (q.indices[i] == 65535) {
        // The clamp can only move the top bucket down by at most one bucket.
        ASSERT_LE(err, bs * (1 + 1e-9)) << "clamped";
      } else {
        ASSERT_LE(err, bs / 2 * (1 + 1e-9));
      }
    }
    std::vector<std::size_t> order(w.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return w[a] < w[b]; });
    for (std::size_t i = 1; i < order.size(); ++i) ASSERT_LE(q.indices[order[i - 1]], q.indices[order[i]]);
  }
}

TEST(Quantize, ClampedExtremeBound) {
  // A max just below the rounded edge lands in the last bucket with the
  // ordinary half-bucket error; a max exactly at the edge pays one bucket.
  const std::vector<float> edge{0.0f, 1.0f};
  const auto q = quantize(edge, 4, 4);
  EXPECT_NEAR(std::abs(reconstruct(q, q.indices[1]) - 1.0), q.bucket_size, 1e-12);
}

TEST(Quantize, BlobRoundTrip) {
  fwtest::Rng rng(5);
  std::vector<float> w(1000);
  for (auto& x : w) x = static_cast<float>(fwtest::uniform(rng, -2, 2));
  const auto q = quantize(w);
  const Bytes b = encode_quantized(q);
  EXPECT_EQ(b.size(), kQuantHeaderSize + 2 * w.size());
  const auto back = decode_quantized(b);
  EXPECT_EQ(back.w_min, q.w_min);
  EXPECT_EQ(back.bucket_size, q.bucket_size);
  EXPECT_EQ(back.indices, q.indices);
  Bytes cut = b;
  cut.pop_back();
  EXPECT_THROW(decode_quantized(cut), FormatError);
  Bytes magic = b;
  magic[1] = 'Z';
  EXPECT_THROW(decode_quantized(magic), FormatError);
}

TEST(Quantize, Rejects) {
  EXPECT_THROW(quantize(std::vector<float>{}), ContractError);
  EXPECT_THROW(quantize(std::vector<float>{1.0f, NAN}), NumericError);
}

TEST(Varint, Examples) {
  EXPECT_EQ(encode_varint(0), (Bytes{0x00}));
  EXPECT_EQ(encode_varint(127), (Bytes{0x7F}));
  EXPECT_EQ(encode_varint(128), (Bytes{0x80, 0x01}));
  EXPECT_EQ(encode_varint(300), (Bytes{0xAC, 0x02}));
}

TEST(Varint, RoundTripAndMonotoneLength) {
  fwtest::Rng rng(6);
  std::vector<std::uint64_t> vals;
  for (int i = 0; i < 100000; ++i) vals.push_back(rng() >> (rng() % 64));
  vals.push_back(~0ull);
  std::sort(vals.begin(), vals.end());
  std::size_t prev = 0;
  for (auto v : vals) {
    const Bytes e = encode_varint(v);
    ASSERT_EQ(reference_varint(e), v);
    const auto d = decode_varint(e);
    ASSERT_EQ(d.value, v);
    ASSERT_EQ(d.consumed, e.size());
    ASSERT_GE(e.size(), prev);
    prev = e.size();
  }
}

TEST(Varint, Malformed) {
  EXPECT_THROW(decode_varint(Bytes{}), FormatError);
  EXPECT_THROW(decode_varint(Bytes{0x80, 0x80}), FormatError);
  EXPECT_THROW(decode_varint(Bytes(11, 0x80)), FormatError);
  EXPECT_THROW(decode_varint(Bytes{0x80, 0x80, 0x80, 0x80, 0x80, 0x80, 0x80, 0x80, 0x80, 0x02}), FormatError);
}

TEST(Patch, Identity) {
  const Bytes a{1, 2, 3, 4};
  const auto p = create_patch(a, a);
  EXPECT_TRUE(p.ops.empty());
  EXPECT_EQ(encode_patch(p).size(), kPatchHeaderSize);
  EXPECT_EQ(apply_patch(a, p), a);
}

TEST(Patch, SingleByteEdit) {
  const Bytes a{1, 2, 3, 4};
  const Bytes b{1, 2, 9, 4};
  const auto p = create_patch(a, b);
  ASSERT_EQ(p.ops.size(), 1u);
  EXPECT_EQ(p.ops[0].skip, 2u);
  EXPECT_EQ(p.ops[0].payload, (Bytes{9}));
  EXPECT_EQ(apply_patch(a, p), b);
  EXPECT_EQ(decode_patch(encode_patch(p)), p);
}

TEST(Patch, NearbyEditsMerge) {
  Bytes a(32, 0);
  Bytes b = a;
  b[4] = 1;
  b[7] = 1;   // gap of 2: merged
  b[20] = 1;  // gap of 12: separate
  const auto p = create_patch(a, b);
  ASSERT_EQ(p.ops.size(), 2u);
  EXPECT_EQ(p.ops[0].payload.size(), 4u);
  EXPECT_EQ(p.ops[1].skip, 12u);
}

TEST(Patch, SparseEditsOnLargeBuffer) {
  fwtest::Rng rng(7);
  const Bytes a = random_bytes(rng, 1 << 20);
  Bytes b = a;
  for (int i = 0; i < 100; ++i) {
    const std::size_t at = rng() % (b.size() - 4);
    for (int j = 0; j < 4; ++j) b[at + j] = static_cast<std::uint8_t>(b[at + j] + 1);
  }
  const auto p = create_patch(a, b);
  EXPECT_EQ(apply_patch(a, decode_patch(encode_patch(p))), b);
  EXPECT_LT(encode_patch(p).size(), b.size() / 20);
  EXPECT_EQ(encoded_patch_size(p), encode_patch(p).size());
}

TEST(Patch, FuzzRoundTrip) {
  fwtest::Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    const Bytes a = random_bytes(rng, rng() % 4096);
    Bytes b;
    switch (rng() % 4) {
      case 0: b = random_bytes(rng, rng() % 4096); break;
      case 1:
        b = a;
        for (std::size_t e = rng() % 20; e > 0 && !b.empty(); --e) b[rng() % b.size()] ^= 0x5A;
        break;
      case 2:
        b = a;
        b.resize(rng() % 4096, 7);
        break;
      default: b = Bytes(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(a.empty() ? 0 : rng() % a.size()));
    }
    const Bytes enc = encode_patch(create_patch(a, b));
    ASSERT_EQ(apply_patch(a, decode_patch(enc)), b);
  }
}

TEST(Patch, StaleBaseAndCorruption) {
  const Bytes a{1, 2, 3, 4, 5};
  const Bytes b{1, 2, 3, 9, 5};
  const auto p = create_patch(a, b);
  EXPECT_THROW(apply_patch(b, p), StaleBaseError);
  auto bad = p;
  bad.ops[0].payload[0] = 8;
  EXPECT_THROW(apply_patch(a, bad), CorruptionError);
  bad = p;
  bad.ops[0].skip = 100;
  EXPECT_THROW(apply_patch(a, bad), FormatError);
  Bytes enc = encode_patch(p);
  enc.pop_back();
  EXPECT_THROW(decode_patch(enc), FormatError);
}

TEST(Pipeline, SameStoreGivesEmptyPatch) {
  fwtest::Rng rng(9);
  ModelConfig c;
  c.n_fields = 3;
  c.hash_bits = 10;
  c.hidden_sizes = {4};
  auto s = fwtest::random_store(c, rng);
  const Bytes blob = quantized_inference_blob(s);
  EXPECT_EQ(blob, quantized_inference_blob(s));
  const auto p = quantized_update_pipeline(blob, s);
  EXPECT_TRUE(p.ops.empty());
  EXPECT_EQ(apply_patch(blob, p), blob);
}

TEST(Pipeline, QuantizedBlobHalvesInferenceWeights) {
  fwtest::Rng rng(10);
  ModelConfig c;
  c.n_fields = 4;
  c.hash_bits = 12;
  auto s = fwtest::random_store(c, rng);
  const Bytes q = quantized_inference_blob(s);
  const Bytes raw = flat_weight_view(s, false);
  EXPECT_LE(static_cast<double>(q.size()) / static_cast<double>(raw.size()), 0.51);
  const auto back = store_from_blob(decode_quantized(q), c);
  const auto blob = decode_quantized(q);
  for (std::size_t i = 0; i < s.layout().params; ++i) {
    ASSERT_NEAR(back.weights()[i], s.weights()[i], blob.bucket_size);
  }
  ModelConfig other = c;
  other.n_fields = 5;
  EXPECT_THROW(store_from_blob(blob, other), FormatError);
}
