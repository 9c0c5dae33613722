#include <gtest/gtest.h>

#include <sstream>

#include "fw/inference.hpp"
#include "support/synthetic.hpp"

using namespace fw;

namespace {

struct Request {
  std::vector<FieldFeatures> context;
  std::vector<std::vector<FieldFeatures>> candidates;
};

// Fields [0, n_context) belong to the context, the rest to candidates.
Request random_request(fwtest::Rng& rng, const ModelConfig& c, std::uint32_t n_context, int n_candidates) {
  Request r;
  auto ex = fwtest::random_example(rng, n_context, c.hash_bits, 0.8);
  r.context = ex.fields;
  for (int i = 0; i < n_candidates; ++i) {
    auto cand = fwtest::random_example(rng, c.n_fields - n_context, c.hash_bits, 0.8);
    for (auto& b : cand.fields) b.field_id += n_context;
    r.candidates.push_back(cand.fields);
  }
  return r;
}

double direct(const std::vector<FieldFeatures>& context, const std::vector<FieldFeatures>& cand,
              const WeightStore& store, OpCounter* ops = nullptr) {
  ParsedExample ex;
  ex.fields = context;
  ex.fields.insert(ex.fields.end(), cand.begin(), cand.end());
  ForwardState st;
  forward(ex, store, st, default_kernels(), ops);
  return predict_proba(st.logit);
}

ModelConfig config(std::uint32_t fields, std::vector<std::uint32_t> hidden) {
  ModelConfig c;
  c.n_fields = fields;
  c.k = 4;
  c.hash_bits = 10;
  c.hidden_sizes = std::move(hidden);
  return c;
}

}  // namespace

TEST(ContextCache, MatchesPlainForward) {
  fwtest::Rng rng(1);
  for (int t = 0; t < 30; ++t) {
    auto c = config(static_cast<std::uint32_t>(fwtest::randint(rng, 2, 8)),
                    t % 3 == 0 ? std::vector<std::uint32_t>{} : std::vector<std::uint32_t>{6, 3});
    auto s = fwtest::random_store(c, rng);
    const auto n_ctx = static_cast<std::uint32_t>(fwtest::randint(rng, 0, static_cast<int>(c.n_fields)));
    const auto req = random_request(rng, c, n_ctx, 10);
    const auto cache = build_context_cache(req.context, s);
    const auto probs = predict_batch(cache, req.candidates, s);
    ASSERT_EQ(probs.size(), req.candidates.size());
    for (std::size_t i = 0; i < probs.size(); ++i) EXPECT_NEAR(probs[i], direct(req.context, req.candidates[i], s), 1e-6);
  }
}

TEST(ContextCache, EmptyContext) {
  fwtest::Rng rng(2);
  auto c = config(4, {4});
  auto s = fwtest::random_store(c, rng);
  const auto req = random_request(rng, c, 0, 5);
  const auto cache = build_context_cache({}, s);
  EXPECT_EQ(cache.lr_partial, 0.0f);
  for (float v : cache.context_pair_outputs) EXPECT_EQ(v, 0.0f);
  const auto probs = predict_batch(cache, req.candidates, s);
  for (std::size_t i = 0; i < probs.size(); ++i) EXPECT_NEAR(probs[i], direct({}, req.candidates[i], s), 1e-6);
}

TEST(ContextCache, PairOutputsMatchContextOnlyForward) {
  ModelConfig c = config(3, {});
  c.k = 1;
  fwtest::Rng rng(3);
  auto s = fwtest::random_store(c, rng);
  std::vector<FieldFeatures> ctx{{0, {{5, 1.0f}}}, {1, {{9, 0.5f}, {2, 2.0f}}}};
  const auto cache = build_context_cache(ctx, s);
  ParsedExample ex;
  ex.fields = ctx;
  ForwardState st;
  forward(ex, s, st);
  const auto p = s.layout().pair_index(0, 1);
  EXPECT_FLOAT_EQ(cache.context_pair_outputs[p], st.pair_outputs[p]);
}

TEST(ContextCache, DigestIgnoresOrder) {
  std::vector<FieldFeatures> a{{0, {{5, 1.0f}, {7, 2.0f}}}, {1, {{9, 0.5f}}}};
  std::vector<FieldFeatures> b{{1, {{9, 0.5f}}}, {0, {{7, 2.0f}, {5, 1.0f}}}};
  EXPECT_EQ(context_digest(a), context_digest(a));
  EXPECT_EQ(context_digest(a), context_digest(b));
  b[0].features[0].value = 0.25f;
  EXPECT_NE(context_digest(a), context_digest(b));
}

TEST(ContextCache, SingleAndEmptyCandidate) {
  fwtest::Rng rng(4);
  auto c = config(6, {5});
  auto s = fwtest::random_store(c, rng);
  const auto req = random_request(rng, c, 3, 1);
  const auto cache = build_context_cache(req.context, s);
  EXPECT_NEAR(predict_batch(cache, req.candidates, s)[0], direct(req.context, req.candidates[0], s), 1e-6);
  std::vector<std::vector<FieldFeatures>> empty(1);
  EXPECT_NEAR(predict_batch(cache, empty, s)[0], direct(req.context, {}, s), 1e-6);
}

TEST(ContextCache, FewerMultiplyAdds) {
  fwtest::Rng rng(5);
  auto c = config(24, {8});
  auto s = fwtest::random_store(c, rng);
  auto req = random_request(rng, c, 20, 100);
  OpCounter build_ops, batch_ops, plain_ops;
  const auto cache = build_context_cache(req.context, s, default_kernels(), &build_ops);
  predict_batch(cache, req.candidates, s, default_kernels(), &batch_ops);
  for (const auto& cand : req.candidates) direct(req.context, cand, s, &plain_ops);
  EXPECT_LT(build_ops.ffm_madds + batch_ops.ffm_madds, plain_ops.ffm_madds);
}

TEST(ContextCache, BuildCostIndependentOfCandidates) {
  fwtest::Rng rng(6);
  auto c = config(10, {});
  auto s = fwtest::random_store(c, rng);
  const auto req = random_request(rng, c, 6, 1);
  OpCounter a, b;
  build_context_cache(req.context, s, default_kernels(), &a);
  build_context_cache(req.context, s, default_kernels(), &b);
  EXPECT_EQ(a.ffm_madds, b.ffm_madds);
  std::size_t feats = 0;
  std::size_t present = 0;
  for (const auto& f : req.context) {
    feats += f.features.size();
    present += !f.features.empty();
  }
  // one axpy per (feature, other field) plus one dot per present context pair
  EXPECT_EQ(a.ffm_madds, c.k * (feats * (c.n_fields - 1) + present * (present - 1) / 2));
}

TEST(ContextCache, StaleWeightsRejected) {
  fwtest::Rng rng(7);
  auto c = config(4, {});
  auto s = fwtest::random_store(c, rng);
  const auto req = random_request(rng, c, 2, 2);
  const auto cache = build_context_cache(req.context, s);
  s.bump_version();
  EXPECT_THROW(predict_batch(cache, req.candidates, s), StaleCacheError);
  auto other = s;
  EXPECT_THROW(predict_batch(cache, req.candidates, other), StaleCacheError);
}

TEST(ContextCache, CandidateMayNotReuseContextField) {
  fwtest::Rng rng(8);
  auto c = config(4, {});
  auto s = fwtest::random_store(c, rng);
  std::vector<FieldFeatures> ctx{{0, {{1, 1.0f}}}};
  const auto cache = build_context_cache(ctx, s);
  std::vector<std::vector<FieldFeatures>> cands{{{0, {{2, 1.0f}}}}};
  EXPECT_THROW(predict_batch(cache, cands, s), ContractError);
}

TEST(Registry, ReusesAcrossRequests) {
  fwtest::Rng rng(9);
  auto c = config(4, {});
  auto s = fwtest::random_store(c, rng);
  ContextCacheRegistry reg;
  std::vector<FieldFeatures> ctx{{0, {{1, 1.0f}}}, {1, {{3, 1.0f}}}};
  auto a = reg.get(ctx, s);
  auto b = reg.get(ctx, s);
  EXPECT_EQ(a.get(), b.get());
  EXPECT_EQ(reg.hits(), 1u);
  EXPECT_EQ(reg.misses(), 1u);
  s.bump_version();
  auto d = reg.get(ctx, s);
  EXPECT_NE(a.get(), d.get());
  EXPECT_EQ(reg.misses(), 2u);
}

TEST(Requests, ParseText) {
  const auto schema = fwtest::make_schema(4, 10);
  std::istringstream in("|f0 a |f1 b\n|f2 x\n|f2 y |f3 z\n\n-\n|f0 q\n");
  const auto reqs = parse_requests(in, schema);
  ASSERT_EQ(reqs.size(), 2u);
  EXPECT_EQ(reqs[0].context.size(), 2u);
  EXPECT_EQ(reqs[0].candidates.size(), 2u);
  EXPECT_TRUE(reqs[1].context.empty());
  EXPECT_EQ(reqs[1].candidates.size(), 1u);
  std::istringstream bad("|f0 a\n|zz b\n");
  EXPECT_THROW(parse_requests(bad, schema), ParseError);
}
