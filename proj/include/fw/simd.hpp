#pragma once

// Runtime-dispatched inner loops: latent dot products and axpy rows used by
// the FFM block and dense layers. Every backend keeps a scalar twin; the
// vector paths reassociate sums, so results agree only to tolerance.

#include <cstddef>
#include <cstdlib>
#include <ostream>
#include <string>
#include <string_view>

#if defined(__x86_64__) || defined(__i386__)
#define FW_X86 1
#include <immintrin.h>
#endif

#if defined(__GNUC__) && !defined(__clang__)
#define FW_NO_AUTOVEC __attribute__((optimize("no-tree-vectorize")))
#else
#define FW_NO_AUTOVEC
#endif

namespace fw {

enum class Backend { kScalar, kAvx2, kAvx512 };

inline std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar: return "scalar";
    case Backend::kAvx2: return "avx2";
    case Backend::kAvx512: return "avx512";
  }
  return "?";
}

using DotFn = float (*)(const float*, const float*, std::size_t);
using AxpyFn = void (*)(float, const float*, float*, std::size_t);

struct Kernels {
  Backend backend = Backend::kScalar;
  DotFn dot = nullptr;
  AxpyFn axpy = nullptr;  // y += a * x
};

namespace kernels {

FW_NO_AUTOVEC inline float dot_scalar(const float* a, const float* b, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

FW_NO_AUTOVEC inline void axpy_scalar(float a, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

#ifdef FW_X86

__attribute__((target("avx2,fma"))) inline float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, lo);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

__attribute__((target("avx2,fma"))) inline float dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  }
  float s = hsum256(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

__attribute__((target("avx2,fma"))) inline void axpy_avx2(float a, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

__attribute__((target("avx512f"))) inline float dot_avx512(const float* a, const float* b, std::size_t n) {
  __m512 acc = _mm512_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc = _mm512_fmadd_ps(_mm512_loadu_ps(a + i), _mm512_loadu_ps(b + i), acc);
  }
  if (i < n) {
    const __mmask16 m = static_cast<__mmask16>((1u << (n - i)) - 1u);
    acc = _mm512_fmadd_ps(_mm512_maskz_loadu_ps(m, a + i), _mm512_maskz_loadu_ps(m, b + i), acc);
  }
  return _mm512_reduce_add_ps(acc);
}

__attribute__((target("avx512f"))) inline void axpy_avx512(float a, const float* x, float* y, std::size_t n) {
  const __m512 va = _mm512_set1_ps(a);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    _mm512_storeu_ps(y + i, _mm512_fmadd_ps(va, _mm512_loadu_ps(x + i), _mm512_loadu_ps(y + i)));
  }
  if (i < n) {
    const __mmask16 m = static_cast<__mmask16>((1u << (n - i)) - 1u);
    const __m512 r = _mm512_fmadd_ps(va, _mm512_maskz_loadu_ps(m, x + i), _mm512_maskz_loadu_ps(m, y + i));
    _mm512_mask_storeu_ps(y + i, m, r);
  }
}

#endif  // FW_X86

}  // namespace kernels

inline bool backend_supported(Backend b) {
  switch (b) {
    case Backend::kScalar: return true;
#ifdef FW_X86
    case Backend::kAvx2: return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    case Backend::kAvx512: return __builtin_cpu_supports("avx512f");
#else
    default: return false;
#endif
  }
  return false;
}

inline Kernels kernels_for(Backend b) {
  switch (b) {
#ifdef FW_X86
    case Backend::kAvx512: return {b, kernels::dot_avx512, kernels::axpy_avx512};
    case Backend::kAvx2: return {b, kernels::dot_avx2, kernels::axpy_avx2};
#endif
    default: return {Backend::kScalar, kernels::dot_scalar, kernels::axpy_scalar};
  }
}

// Picks the widest supported backend. FW_FORCE_SCALAR=1 in the environment or
// force_scalar pins the scalar path.
inline Backend select_vector_backend(bool force_scalar = false, std::ostream* log = nullptr) {
  const char* env = std::getenv("FW_FORCE_SCALAR");
  if (env != nullptr && std::string_view(env) == "1") force_scalar = true;
  Backend chosen = Backend::kScalar;
  if (!force_scalar) {
    for (Backend b : {Backend::kAvx512, Backend::kAvx2}) {
      if (backend_supported(b)) {
        chosen = b;
        break;
      }
    }
  }
  if (log != nullptr) *log << "vector backend: " << backend_name(chosen) << (force_scalar ? " (forced)" : "") << '\n';
  return chosen;
}

inline const Kernels& default_kernels() {
  static const Kernels k = kernels_for(select_vector_backend());
  return k;
}

}  // namespace fw
