#pragma once

// Candidate scoring with context caching. A request splits into a context
// shared by every candidate and the per-candidate fields. The lr partial
// sum, the context's FFM latent sums toward every field and the
// context x context pair outputs are computed once; each candidate then
// only pays for its own features. The network is never cached because its
// input mixes context and candidate values.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fw/bytes.hpp"
#include "fw/error.hpp"
#include "fw/features.hpp"
#include "fw/model.hpp"

namespace fw {

struct ScoringRequest {
  std::vector<FieldFeatures> context;
  std::vector<std::vector<FieldFeatures>> candidates;
};

struct ContextCache {
  std::uint64_t digest = 0;
  std::uint64_t weights_version = 0;
  const void* store = nullptr;
  std::vector<FieldFeatures> context;
  std::vector<std::uint8_t> context_fields;  // field ids named by the context
  std::vector<std::uint8_t> present;         // context fields with features
  float lr_partial = 0.0f;                   // context lr terms, bias excluded
  std::vector<float> latent_sums;            // [field][target][k], context rows only
  std::vector<float> context_pair_outputs;   // pairs with both fields in the context
};

// 64-bit FNV-1a over sorted (field_id, feature_index, value bits) triples.
inline std::uint64_t context_digest(std::span<const FieldFeatures> context) {
  struct Triple {
    std::uint32_t field, index, bits;
    auto operator<=>(const Triple&) const = default;
  };
  std::vector<Triple> t;
  for (const auto& b : context) {
    for (const auto& f : b.features) t.push_back({b.field_id, f.index, std::bit_cast<std::uint32_t>(f.value)});
  }
  std::sort(t.begin(), t.end());
  Bytes buf;
  ByteWriter w(buf);
  for (const auto& x : t) {
    w.put(x.field);
    w.put(x.index);
    w.put(x.bits);
  }
  return fnv1a64(buf);
}

inline ContextCache build_context_cache(std::span<const FieldFeatures> context, const WeightStore& store,
                                        const Kernels& kern = default_kernels(), OpCounter* ops = nullptr) {
  const Layout& l = store.layout();
  detail::validate_fields(context, l, store.config().hash_bits);
  const float* w = store.weights();
  const std::uint32_t F = l.n_fields;
  const std::uint32_t k = l.k;

  ContextCache c;
  c.digest = context_digest(context);
  c.weights_version = store.version();
  c.store = &store;
  c.context.assign(context.begin(), context.end());
  c.context_fields.assign(F, 0);
  c.present.assign(F, 0);
  for (const auto& b : context) {
    c.context_fields[b.field_id] = 1;
    if (!b.features.empty()) c.present[b.field_id] = 1;
  }
  c.lr_partial = detail::lr_sum<float>(context, w, [](const float& x) { return x; });
  c.context_pair_outputs.assign(l.pairs, 0.0f);
  if (store.config().ffm_enabled) {
    // Candidate fields are unknown here, so every target field gets a sum.
    const std::vector<std::uint8_t> all_targets(F, 1);
    c.latent_sums.assign(static_cast<std::size_t>(F) * F * k, 0.0f);
    std::vector<float> scratch;
    for (const auto& b : context) {
      detail::accumulate_latents<Exclusive>(b, w, l, all_targets.data(), c.latent_sums.data(), kern, scratch, ops);
    }
    for (std::uint32_t f1 = 0; f1 < F; ++f1) {
      if (!c.present[f1]) continue;
      for (std::uint32_t f2 = f1 + 1; f2 < F; ++f2) {
        if (!c.present[f2]) continue;
        const float* a = c.latent_sums.data() + (static_cast<std::size_t>(f1) * F + f2) * k;
        const float* b = c.latent_sums.data() + (static_cast<std::size_t>(f2) * F + f1) * k;
        c.context_pair_outputs[l.pair_index(f1, f2)] = kern.dot(a, b, k);
        if (ops) ops->ffm_madds += k;
      }
    }
  }
  return c;
}

// Probabilities for each candidate, completing the forward pass from the
// cached context partials.
inline std::vector<double> predict_batch(const ContextCache& cache,
                                         std::span<const std::vector<FieldFeatures>> candidates,
                                         const WeightStore& store, const Kernels& kern = default_kernels(),
                                         OpCounter* ops = nullptr) {
  if (cache.store != &store || cache.weights_version != store.version()) {
    throw StaleCacheError("context cache was built against another weights version; rebuild it");
  }
  const Layout& l = store.layout();
  const float* w = store.weights();
  const std::uint32_t F = l.n_fields;
  const std::uint32_t k = l.k;
  const bool ffm = store.config().ffm_enabled;

  std::vector<double> out;
  out.reserve(candidates.size());
  ForwardState st;
  st.store = &store;
  std::vector<float> cand_sums(ffm ? static_cast<std::size_t>(F) * F * k : 0);
  std::vector<std::uint8_t> cand_fields(F);
  std::vector<float> scratch;

  for (const auto& cand : candidates) {
    detail::validate_fields(cand, l, store.config().hash_bits);
    std::fill(cand_fields.begin(), cand_fields.end(), 0);
    st.present = cache.present;
    for (const auto& b : cand) {
      if (cache.context_fields[b.field_id]) {
        throw ContractError("candidate field " + std::to_string(b.field_id) + " is also a context field");
      }
      cand_fields[b.field_id] = 1;
      if (!b.features.empty()) st.present[b.field_id] = 1;
    }
    st.lr_features = cache.lr_partial;
    for (const auto& b : cand) {
      for (const auto& f : b.features) st.lr_features += w[f.index] * f.value;
    }
    st.lr_out = w[l.bias] + st.lr_features;
    detail::check_finite(st.lr_out, "lr");
    st.pair_outputs.assign(l.pairs, 0.0f);
    if (ffm) {
      for (std::uint32_t f = 0; f < F; ++f) {
        if (cand_fields[f]) std::fill_n(cand_sums.begin() + static_cast<std::ptrdiff_t>(f) * F * k, F * k, 0.0f);
      }
      for (const auto& b : cand) {
        detail::accumulate_latents<Exclusive>(b, w, l, st.present.data(), cand_sums.data(), kern, scratch, ops);
      }
      auto row = [&](std::uint32_t f, std::uint32_t t) {
        const std::vector<float>& src = cand_fields[f] ? cand_sums : cache.latent_sums;
        return src.data() + (static_cast<std::size_t>(f) * F + t) * k;
      };
      for (std::uint32_t f1 = 0; f1 < F; ++f1) {
        if (!st.present[f1]) continue;
        for (std::uint32_t f2 = f1 + 1; f2 < F; ++f2) {
          if (!st.present[f2]) continue;
          const std::size_t p = l.pair_index(f1, f2);
          if (!cand_fields[f1] && !cand_fields[f2]) {
            st.pair_outputs[p] = cache.context_pair_outputs[p];
          } else {
            st.pair_outputs[p] = kern.dot(row(f1, f2), row(f2, f1), k);
            if (ops) ops->ffm_madds += k;
          }
        }
      }
    }
    detail::finish_forward<Exclusive>(l, w, st, kern);
    out.push_back(predict_proba(static_cast<double>(st.logit)));
  }
  return out;
}

// Whole-context cache shared across requests, keyed by context digest.
class ContextCacheRegistry {
 public:
  std::shared_ptr<const ContextCache> get(std::span<const FieldFeatures> context, const WeightStore& store,
                                          const Kernels& kern = default_kernels()) {
    const std::uint64_t d = context_digest(context);
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(d);
      if (it != entries_.end() && it->second->store == &store && it->second->weights_version == store.version() &&
          std::equal(context.begin(), context.end(), it->second->context.begin(), it->second->context.end())) {
        ++hits_;
        return it->second;
      }
    }
    auto fresh = std::make_shared<const ContextCache>(build_context_cache(context, store, kern));
    std::lock_guard lock(mu_);
    ++misses_;
    entries_[d] = fresh;
    return fresh;
  }

  std::uint64_t hits() const {
    std::lock_guard lock(mu_);
    return hits_;
  }
  std::uint64_t misses() const {
    std::lock_guard lock(mu_);
    return misses_;
  }

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, std::shared_ptr<const ContextCache>> entries_;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
};

// Request text: a context line (example grammar without a label, or "-"
// for an empty context), then one candidate per line; a blank line or end
// of input closes the request.
inline std::vector<ScoringRequest> parse_requests(std::istream& in, const InputSchema& schema) {
  std::vector<ScoringRequest> out;
  std::optional<ScoringRequest> cur;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const bool blank = line.find_first_not_of(" \t") == std::string::npos;
    if (blank) {
      if (cur) out.push_back(std::move(*cur));
      cur.reset();
      continue;
    }
    try {
      if (!cur) {
        cur.emplace();
        const auto first = line.find_first_not_of(" \t");
        if (line.compare(first, std::string::npos, "-") != 0) cur->context = parse_fields(line, schema);
      } else {
        cur->candidates.push_back(parse_fields(line, schema));
      }
    } catch (const ParseError& e) {
      throw ParseError("request line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (in.bad()) throw IoError("read failed on scoring requests");
  if (cur) out.push_back(std::move(*cur));
  return out;
}

inline void write_probabilities(std::ostream& os, std::span<const double> probs) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::fixed << std::setprecision(6);
  for (double p : probs) os << p << '\n';
  os.flags(flags);
  os.precision(prec);
}

}  // namespace fw
