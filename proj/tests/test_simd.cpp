#include <gtest/gtest.h>

#include <cstdlib>

#include "fw/model.hpp"
#include "fw/simd.hpp"
#include "support/synthetic.hpp"

using namespace fw;

namespace {

std::vector<Backend> available() {
  std::vector<Backend> out;
  for (Backend b : {Backend::kScalar, Backend::kAvx2, Backend::kAvx512}) {
    if (backend_supported(b)) out.push_back(b);
  }
  return out;
}

}  // namespace

TEST(Simd, KernelsAgreeOnAllLengths) {
  fwtest::Rng rng(1);
  for (Backend b : available()) {
    const Kernels k = kernels_for(b);
    EXPECT_EQ(k.backend, b);
    for (std::size_t n = 0; n <= 70; ++n) {
      std::vector<float> x(n), y(n);
      double ref = 0;
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = static_cast<float>(fwtest::uniform(rng, -1, 1));
        y[i] = static_cast<float>(fwtest::uniform(rng, -1, 1));
        ref += static_cast<double>(x[i]) * y[i];
      }
      EXPECT_NEAR(k.dot(x.data(), y.data(), n), ref, 1e-5) << backend_name(b) << " n=" << n;
      std::vector<float> z = y;
      k.axpy(0.5f, x.data(), z.data(), n);
      for (std::size_t i = 0; i < n; ++i) ASSERT_FLOAT_EQ(z[i], y[i] + 0.5f * x[i]);
    }
  }
}

TEST(Simd, ProbabilitiesAgreeAcrossBackends) {
  fwtest::Rng rng(2);
  ModelConfig c;
  c.n_fields = 6;
  c.k = 16;
  c.hash_bits = 10;
  c.hidden_sizes = {16, 8};
  auto s = fwtest::random_store(c, rng, 0.2);
  const Kernels scalar = kernels_for(Backend::kScalar);
  ForwardState a, b;
  for (int i = 0; i < 2000; ++i) {
    auto ex = fwtest::random_example(rng, c.n_fields, c.hash_bits);
    forward(ex, s, a, scalar);
    for (Backend be : available()) {
      forward(ex, s, b, kernels_for(be));
      ASSERT_NEAR(predict_proba(a.logit), predict_proba(b.logit), 1e-5);
    }
  }
}

TEST(Simd, ForceScalar) {
  EXPECT_EQ(select_vector_backend(true), Backend::kScalar);
  ::setenv("FW_FORCE_SCALAR", "1", 1);
  EXPECT_EQ(select_vector_backend(false), Backend::kScalar);
  ::unsetenv("FW_FORCE_SCALAR");
  EXPECT_EQ(backend_name(Backend::kScalar), "scalar");
}

TEST(Simd, AutoPicksWidest) {
  const auto all = available();
  EXPECT_EQ(select_vector_backend(false), all.back());
}
