#pragma once

// DeepFFM: a logistic block and a field-aware factorization block whose
// outputs are merged, standardized and fed to a ReLU network. The final
// logit adds the network output to the lr and ffm outputs, so an empty
// hidden_sizes list is exactly a plain FFM.
//
// Weights live in one flat array in a fixed layout (see Layout); optimizer
// accumulators follow in the same order. Identical config and identical
// update sequence give byte-identical stores.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "fw/access.hpp"
#include "fw/bytes.hpp"
#include "fw/error.hpp"
#include "fw/features.hpp"
#include "fw/simd.hpp"

namespace fw {

inline constexpr std::uint64_t kDefaultMemoryCap = 8ull << 30;
inline constexpr double kMergeEpsilon = 1e-6;
inline constexpr double kProbClamp = 1e-7;
inline constexpr int kMaxHiddenLayers = 4;

struct ModelConfig {
  std::uint32_t n_fields = 1;
  std::uint32_t k = 4;
  std::vector<std::uint32_t> hidden_sizes;
  double lr_ffm = 0.02;
  double lr_lr = 0.1;
  double lr_nn = 0.01;
  double power_t = 0.5;
  int hash_bits = 18;
  std::uint64_t init_seed = 1;
  double init_scale_ffm = 0.1;
  // false gives the lr-only model; the network then has nothing to learn from.
  bool ffm_enabled = true;
  // Runtime guard, not part of the serialized config.
  std::uint64_t memory_cap_bytes = kDefaultMemoryCap;

  void validate() const {
    auto bad = [](const std::string& m) { throw ContractError("model config: " + m); };
    if (n_fields < 1) bad("n_fields must be >= 1");
    if (k < 1) bad("k must be >= 1");
    if (hidden_sizes.size() > kMaxHiddenLayers) bad("at most 4 hidden layers");
    for (auto h : hidden_sizes) {
      if (h < 1) bad("hidden layer width must be >= 1");
    }
    if (!(lr_ffm > 0) || !(lr_lr > 0) || !(lr_nn > 0)) bad("learning rates must be > 0");
    if (!(power_t >= 0 && power_t <= 1)) bad("power_t must be in [0, 1]");
    if (hash_bits < 1 || hash_bits > kMaxHashBits) bad("hash_bits must be in [1, 29]");
    if (!(init_scale_ffm > 0)) bad("init_scale_ffm must be > 0");
    if (!ffm_enabled && !hidden_sizes.empty()) bad("hidden layers need the ffm block");
  }

  friend bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.n_fields == b.n_fields && a.k == b.k && a.hidden_sizes == b.hidden_sizes &&
           a.lr_ffm == b.lr_ffm && a.lr_lr == b.lr_lr && a.lr_nn == b.lr_nn && a.power_t == b.power_t &&
           a.hash_bits == b.hash_bits && a.init_seed == b.init_seed &&
           a.init_scale_ffm == b.init_scale_ffm && a.ffm_enabled == b.ffm_enabled;
  }
};

inline Bytes serialize_config(const ModelConfig& c) {
  Bytes out;
  ByteWriter w(out);
  w.put<std::uint32_t>(c.n_fields);
  w.put<std::uint32_t>(c.k);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.hidden_sizes.size()));
  for (auto h : c.hidden_sizes) w.put<std::uint32_t>(h);
  w.put<double>(c.lr_ffm);
  w.put<double>(c.lr_lr);
  w.put<double>(c.lr_nn);
  w.put<double>(c.power_t);
  w.put<double>(c.init_scale_ffm);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.hash_bits));
  w.put<std::uint64_t>(c.init_seed);
  w.put<std::uint8_t>(c.ffm_enabled ? 1 : 0);
  return out;
}

inline ModelConfig deserialize_config(ByteReader& r) {
  ModelConfig c;
  c.n_fields = r.get<std::uint32_t>();
  c.k = r.get<std::uint32_t>();
  const auto n_hidden = r.get<std::uint32_t>();
  if (n_hidden > kMaxHiddenLayers) throw FormatError("model config: too many hidden layers");
  for (std::uint32_t i = 0; i < n_hidden; ++i) c.hidden_sizes.push_back(r.get<std::uint32_t>());
  c.lr_ffm = r.get<double>();
  c.lr_lr = r.get<double>();
  c.lr_nn = r.get<double>();
  c.power_t = r.get<double>();
  c.init_scale_ffm = r.get<double>();
  c.hash_bits = static_cast<int>(r.get<std::uint32_t>());
  c.init_seed = r.get<std::uint64_t>();
  c.ffm_enabled = r.get<std::uint8_t>() != 0;
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
  return c;
}

// Offsets (in elements) of every block inside the flat weight array.
//   lr:  2^hash_bits weights, then the bias
//   ffm: [feature][target field][k]
//   nn:  per layer, an in x out row-major matrix then out biases; the last
//        layer maps to the single network output
struct LayerLayout {
  std::uint32_t in = 0;
  std::uint32_t out = 0;
  std::size_t weights = 0;
  std::size_t bias = 0;
};

struct Layout {
  std::uint32_t n_fields = 0;
  std::uint32_t k = 0;
  std::size_t lr = 0;
  std::size_t bias = 0;
  std::size_t ffm = 0;
  std::size_t ffm_count = 0;
  std::size_t pairs = 0;
  std::size_t merged_dim = 0;
  std::vector<LayerLayout> layers;
  std::size_t params = 0;

  std::size_t pair_index(std::uint32_t f1, std::uint32_t f2) const {
    // strict upper triangle, row-major
    return static_cast<std::size_t>(f1) * (2 * n_fields - f1 - 1) / 2 + (f2 - f1 - 1);
  }
  std::size_t ffm_offset(std::uint32_t feature, std::uint32_t target) const {
    return ffm + (static_cast<std::size_t>(feature) * n_fields + target) * k;
  }
};

inline Layout make_layout(const ModelConfig& c) {
  c.validate();
  Layout l;
  l.n_fields = c.n_fields;
  l.k = c.k;
  const std::size_t features = std::size_t{1} << c.hash_bits;
  l.lr = 0;
  l.bias = features;
  l.ffm = features + 1;
  l.ffm_count = c.ffm_enabled ? features * c.n_fields * c.k : 0;
  l.pairs = c.ffm_enabled ? static_cast<std::size_t>(c.n_fields) * (c.n_fields - 1) / 2 : 0;
  l.merged_dim = 1 + l.pairs;
  std::size_t off = l.ffm + l.ffm_count;
  if (!c.hidden_sizes.empty()) {
    std::uint32_t in = static_cast<std::uint32_t>(l.merged_dim);
    std::vector<std::uint32_t> outs = c.hidden_sizes;
    outs.push_back(1);
    for (std::uint32_t out : outs) {
      LayerLayout ll{in, out, off, off + static_cast<std::size_t>(in) * out};
      off = ll.bias + out;
      l.layers.push_back(ll);
      in = out;
    }
  }
  l.params = off;
  const long double bytes = 2.0L * static_cast<long double>(l.params) * sizeof(float);
  if (bytes > static_cast<long double>(c.memory_cap_bytes)) {
    throw SizingError("model needs " + std::to_string(static_cast<unsigned long long>(bytes)) +
                      " bytes, cap is " + std::to_string(c.memory_cap_bytes));
  }
  return l;
}

enum Block : int { kBlockLr = 0, kBlockFfm = 1, kBlockNn = 2 };

// Weights in [0, params), AdaGrad accumulators in [params, 2*params).
template <class T>
class BasicWeightStore {
 public:
  BasicWeightStore() = default;

  explicit BasicWeightStore(const ModelConfig& config)
      : config_(config), layout_(make_layout(config)), data_(2 * layout_.params, T(0)) {
    std::fill(data_.begin() + static_cast<std::ptrdiff_t>(layout_.params), data_.end(), T(1));
  }

  BasicWeightStore(const BasicWeightStore& o)
      : config_(o.config_), layout_(o.layout_), data_(o.data_), version_(o.version()) {}
  BasicWeightStore& operator=(const BasicWeightStore& o) {
    config_ = o.config_;
    layout_ = o.layout_;
    data_ = o.data_;
    version_.store(o.version());
    return *this;
  }
  BasicWeightStore(BasicWeightStore&& o) noexcept
      : config_(std::move(o.config_)), layout_(std::move(o.layout_)), data_(std::move(o.data_)),
        version_(o.version()) {}
  BasicWeightStore& operator=(BasicWeightStore&& o) noexcept {
    config_ = std::move(o.config_);
    layout_ = std::move(o.layout_);
    data_ = std::move(o.data_);
    version_.store(o.version());
    return *this;
  }

  const ModelConfig& config() const { return config_; }
  const Layout& layout() const { return layout_; }

  T* weights() { return data_.data(); }
  const T* weights() const { return data_.data(); }
  T* accumulators() { return data_.data() + layout_.params; }
  const T* accumulators() const { return data_.data() + layout_.params; }
  std::span<T> all() { return data_; }
  std::span<const T> all() const { return data_; }
  std::span<const T> weight_span() const { return {data_.data(), layout_.params}; }

  // Bumped whenever weights are replaced or a training run finishes; caches
  // derived from the weights compare against it.
  std::uint64_t version() const { return version_.load(std::memory_order_acquire); }
  void bump_version() { version_.fetch_add(1, std::memory_order_acq_rel); }

  template <class U>
  BasicWeightStore<U> cast() const {
    BasicWeightStore<U> out(config_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.all()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  ModelConfig config_;
  Layout layout_;
  std::vector<T> data_;
  std::atomic<std::uint64_t> version_{1};
};

using WeightStore = BasicWeightStore<float>;

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace detail

// lr block zero; ffm latents uniform in (0, init_scale/sqrt(k)]; layer
// matrices uniform in +-sqrt(6/(in+out)); biases zero; accumulators 1.
inline WeightStore init_model(const ModelConfig& config) {
  WeightStore store(config);
  const Layout& l = store.layout();
  std::mt19937_64 rng(config.init_seed);
  float* w = store.weights();
  const double ffm_hi = config.init_scale_ffm / std::sqrt(static_cast<double>(config.k));
  for (std::size_t i = 0; i < l.ffm_count; ++i) {
    w[l.ffm + i] = static_cast<float>((1.0 - detail::unit_uniform(rng)) * ffm_hi);
  }
  for (const LayerLayout& ll : l.layers) {
    const double a = std::sqrt(6.0 / (ll.in + ll.out));
    const std::size_t n = static_cast<std::size_t>(ll.in) * ll.out;
    for (std::size_t i = 0; i < n; ++i) {
      w[ll.weights + i] = static_cast<float>((2.0 * detail::unit_uniform(rng) - 1.0) * a);
    }
  }
  return store;
}

// Counts FFM multiply-adds (one per latent dimension) so cached and
// uncached scoring costs can be compared exactly.
struct OpCounter {
  std::uint64_t ffm_madds = 0;
};

template <class T>
struct BasicForwardState {
  T lr_features{};  // lr sum without the bias; this is what the merge layer sees
  T lr_out{};       // bias + lr_features
  std::vector<T> latent_sums;  // [field][target][k]: sum of w_{j,target} x_j over j in field
  std::vector<std::uint8_t> present;
  std::vector<T> pair_outputs;
  std::vector<T> merged_centered;  // merged vector minus its mean
  std::vector<T> merged_input;     // standardized, fed to the network
  T merged_std{};
  std::vector<std::vector<T>> layer_pre_acts;  // hidden layers then the output layer
  std::vector<std::vector<T>> layer_acts;      // hidden layers only
  T nn_out{};
  T logit{};
  const void* store = nullptr;
  std::vector<T> scratch;
};

using ForwardState = BasicForwardState<float>;

namespace detail {

template <class T>
T dot(const Kernels& k, const T* a, const T* b, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    return k.dot(a, b, n);
  } else {
    T s{};
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  }
}

template <class T>
void axpy(const Kernels& k, T a, const T* x, T* y, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    k.axpy(a, x, y, n);
  } else {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
  }
}

template <class T>
void check_finite(T v, const char* block) {
  if (!std::isfinite(v)) throw NumericError(block, "non-finite value");
}

inline void validate_fields(std::span<const FieldFeatures> fields, const Layout& l, int hash_bits) {
  const std::uint64_t limit = std::uint64_t{1} << hash_bits;
  for (const FieldFeatures& b : fields) {
    if (b.field_id >= l.n_fields) {
      throw ContractError("field id " + std::to_string(b.field_id) + " outside model's " +
                          std::to_string(l.n_fields) + " fields");
    }
    for (const Feature& f : b.features) {
      if (f.index >= limit) throw ContractError("feature index " + std::to_string(f.index) + " outside hash space");
    }
  }
}

// Adds one field block's contribution to the latent sums of its field,
// for every present target field.
template <class Access, class T>
void accumulate_latents(const FieldFeatures& block, const T* w, const Layout& l, const std::uint8_t* present,
                        T* sums, const Kernels& kern, std::vector<T>& scratch, OpCounter* ops) {
  const std::uint32_t F = l.n_fields;
  const std::uint32_t k = l.k;
  const std::uint32_t f = block.field_id;
  for (const Feature& feat : block.features) {
    const T x = static_cast<T>(feat.value);
    const T* row = Access::view(w + l.ffm_offset(feat.index, 0), static_cast<std::size_t>(F) * k, scratch);
    for (std::uint32_t t = 0; t < F; ++t) {
      if (t == f || !present[t]) continue;
      axpy(kern, x, row + static_cast<std::size_t>(t) * k, sums + (static_cast<std::size_t>(f) * F + t) * k, k);
      if (ops) ops->ffm_madds += k;
    }
  }
}

template <class T>
T lr_sum(std::span<const FieldFeatures> fields, const T* w, auto load) {
  T s{};
  for (const FieldFeatures& b : fields) {
    for (const Feature& f : b.features) s += load(w[f.index]) * static_cast<T>(f.value);
  }
  return s;
}

// merged vector -> standardized network input. Returns the std.
template <class T>
T standardize(std::vector<T>& centered, std::vector<T>& out) {
  const std::size_t m = centered.size();
  T mean{};
  for (T v : centered) mean += v;
  mean /= static_cast<T>(m);
  T var{};
  for (T& v : centered) {
    v -= mean;
    var += v * v;
  }
  const T sd = std::sqrt(var / static_cast<T>(m));
  const T scale = sd + static_cast<T>(kMergeEpsilon);
  out.resize(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = centered[i] / scale;
  return sd;
}

template <class Access, class T>
T network_forward(const Layout& l, const T* w, BasicForwardState<T>& st, const Kernels& kern) {
  const std::size_t n_layers = l.layers.size();
  st.layer_pre_acts.resize(n_layers);
  st.layer_acts.resize(n_layers - 1);
  const std::vector<T>* in = &st.merged_input;
  for (std::size_t li = 0; li < n_layers; ++li) {
    const LayerLayout& ll = l.layers[li];
    std::vector<T>& pre = st.layer_pre_acts[li];
    pre.resize(ll.out);
    for (std::uint32_t o = 0; o < ll.out; ++o) pre[o] = Access::load(w[ll.bias + o]);
    for (std::uint32_t i = 0; i < ll.in; ++i) {
      const T x = (*in)[i];
      if (x == T(0)) continue;
      const T* row = Access::view(w + ll.weights + static_cast<std::size_t>(i) * ll.out, ll.out, st.scratch);
      axpy(kern, x, row, pre.data(), ll.out);
    }
    if (li + 1 < n_layers) {
      std::vector<T>& act = st.layer_acts[li];
      act.resize(ll.out);
      for (std::uint32_t o = 0; o < ll.out; ++o) act[o] = pre[o] > T(0) ? pre[o] : T(0);
      in = &act;
    }
  }
  return st.layer_pre_acts.back()[0];
}

// Runs the merge layer, the network and the final sum once lr_out and
// pair_outputs are filled in.
template <class Access, class T>
void finish_forward(const Layout& l, const T* w, BasicForwardState<T>& st, const Kernels& kern) {
  T pair_sum{};
  for (T p : st.pair_outputs) pair_sum += p;
  check_finite(pair_sum, "ffm");
  if (!l.layers.empty()) {
    st.merged_centered.resize(l.merged_dim);
    st.merged_centered[0] = st.lr_features;
    std::copy(st.pair_outputs.begin(), st.pair_outputs.end(), st.merged_centered.begin() + 1);
    st.merged_std = standardize(st.merged_centered, st.merged_input);
    st.nn_out = network_forward<Access>(l, w, st, kern);
    check_finite(st.nn_out, "nn");
  } else {
    st.merged_centered.clear();
    st.merged_input.clear();
    st.layer_pre_acts.clear();
    st.layer_acts.clear();
    st.nn_out = T(0);
  }
  st.logit = st.nn_out + st.lr_out + pair_sum;
  check_finite(st.logit, "logit");
}

}  // namespace detail

template <class Access = Exclusive, class T>
void forward(const ParsedExample& ex, const BasicWeightStore<T>& store, BasicForwardState<T>& st,
             const Kernels& kern = default_kernels(), OpCounter* ops = nullptr) {
  const Layout& l = store.layout();
  const T* w = store.weights();
  detail::validate_fields(ex.fields, l, store.config().hash_bits);
  st.store = &store;

  st.lr_features = detail::lr_sum<T>(ex.fields, w, [](const T& x) { return Access::load(x); });
  st.lr_out = Access::load(w[l.bias]) + st.lr_features;
  detail::check_finite(st.lr_out, "lr");

  const std::uint32_t F = l.n_fields;
  const std::uint32_t k = l.k;
  st.present.assign(F, 0);
  st.pair_outputs.assign(l.pairs, T(0));
  if (store.config().ffm_enabled) {
    for (const FieldFeatures& b : ex.fields) {
      if (!b.features.empty()) st.present[b.field_id] = 1;
    }
    st.latent_sums.assign(static_cast<std::size_t>(F) * F * k, T(0));
    for (const FieldFeatures& b : ex.fields) {
      detail::accumulate_latents<Access>(b, w, l, st.present.data(), st.latent_sums.data(), kern, st.scratch, ops);
    }
    for (std::uint32_t f1 = 0; f1 < F; ++f1) {
      if (!st.present[f1]) continue;
      for (std::uint32_t f2 = f1 + 1; f2 < F; ++f2) {
        if (!st.present[f2]) continue;
        const T* a = st.latent_sums.data() + (static_cast<std::size_t>(f1) * F + f2) * k;
        const T* b = st.latent_sums.data() + (static_cast<std::size_t>(f2) * F + f1) * k;
        st.pair_outputs[l.pair_index(f1, f2)] = detail::dot(kern, a, b, k);
        if (ops) ops->ffm_madds += k;
      }
    }
  } else {
    st.latent_sums.clear();
  }
  detail::finish_forward<Access>(l, w, st, kern);
}

template <class T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

// sigma(logit) clamped to [1e-7, 1 - 1e-7].
inline double predict_proba(double logit) {
  const double p = sigmoid(logit);
  return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
}

inline double log_loss_term(double p, int label) { return label == 1 ? -std::log(p) : -std::log1p(-p); }

// AdaGrad step: acc += g^2; w -= rate * g * acc^-power_t.
template <class T, class Access = Exclusive>
class AdagradSink {
 public:
  explicit AdagradSink(BasicWeightStore<T>& store)
      : w_(store.weights()), acc_(store.accumulators()), power_t_(static_cast<T>(store.config().power_t)) {
    const ModelConfig& c = store.config();
    rate_[kBlockLr] = static_cast<T>(c.lr_lr);
    rate_[kBlockFfm] = static_cast<T>(c.lr_ffm);
    rate_[kBlockNn] = static_cast<T>(c.lr_nn);
  }

  void operator()(Block block, std::size_t offset, T g) const {
    const T a = Access::load(acc_[offset]) + g * g;
    Access::store(acc_[offset], a);
    T scale;
    if (power_t_ == T(0.5)) {
      scale = T(1) / std::sqrt(a);
    } else if (power_t_ == T(0)) {
      scale = T(1);
    } else {
      scale = std::pow(a, -power_t_);
    }
    Access::store(w_[offset], Access::load(w_[offset]) - rate_[block] * g * scale);
  }

 private:
  T* w_;
  T* acc_;
  T rate_[3];
  T power_t_;
};

// Backpropagates log-loss for one example and hands every weight gradient
// to `sink(block, offset, grad)`. Within each layer the upstream gradient is
// computed before the layer's weights are emitted, so a sink may update in
// place. With sparse=true, units whose ReLU is off and inputs that are zero
// are detected first and their weights are never visited; every skipped
// gradient is exactly zero, so the result matches sparse=false bit for bit.
// Returns the clamped log-loss of the prediction.
template <class Access = Exclusive, class T, class Sink>
double backward(const BasicForwardState<T>& st, const ParsedExample& ex, int label, const BasicWeightStore<T>& store,
                bool sparse, Sink&& sink) {
  const Layout& l = store.layout();
  if (st.store != &store || st.pair_outputs.size() != l.pairs ||
      (!l.layers.empty() && st.layer_pre_acts.size() != l.layers.size())) {
    throw ContractError("forward state does not belong to this weight store");
  }
  if (label != 0 && label != 1) throw ContractError("label must be 0 or 1");
  const T* w = store.weights();
  const T g = sigmoid(st.logit) - static_cast<T>(label);
  detail::check_finite(g, "gradient");

  // d logit / d merged-input entries from the network, zero if none.
  std::vector<T> d_merged_in;
  bool merged_live = false;
  if (!l.layers.empty()) {
    std::vector<T> delta{g};  // gradient w.r.t. current layer pre-activations
    std::vector<T> delta_in;
    std::vector<std::uint32_t> live;
    std::vector<T> scratch;
    for (std::size_t li = l.layers.size(); li-- > 0;) {
      const LayerLayout& ll = l.layers[li];
      const std::vector<T>& in = li == 0 ? st.merged_input : st.layer_acts[li - 1];
      live.clear();
      for (std::uint32_t o = 0; o < ll.out; ++o) {
        if (!sparse || delta[o] != T(0)) live.push_back(o);
      }
      delta_in.assign(ll.in, T(0));
      if (!live.empty()) {
        for (std::uint32_t i = 0; i < ll.in; ++i) {
          if (sparse && li > 0 && in[i] == T(0)) continue;  // relu' is zero below
          const T* row = Access::view(w + ll.weights + static_cast<std::size_t>(i) * ll.out, ll.out, scratch);
          T s{};
          for (std::uint32_t o : live) s += row[o] * delta[o];
          delta_in[i] = s;
        }
        for (std::uint32_t i = 0; i < ll.in; ++i) {
          const T x = in[i];
          if (sparse && x == T(0)) continue;
          const std::size_t row = ll.weights + static_cast<std::size_t>(i) * ll.out;
          for (std::uint32_t o : live) sink(kBlockNn, row + o, x * delta[o]);
        }
        for (std::uint32_t o : live) sink(kBlockNn, ll.bias + o, delta[o]);
      }
      T check{};
      for (T d : delta_in) check += d;
      detail::check_finite(check, "nn gradient");
      if (li == 0) {
        d_merged_in = std::move(delta_in);
        merged_live = !live.empty();
      } else {
        const std::vector<T>& pre = st.layer_pre_acts[li - 1];
        delta.resize(ll.in);
        for (std::uint32_t i = 0; i < ll.in; ++i) delta[i] = pre[i] > T(0) ? delta_in[i] : T(0);
      }
    }
  }

  // Merge-layer backward: standardization y = (v - mean) / (std + eps).
  // The bias only sits on the residual path.
  T d_lr = g;
  std::vector<T> d_pairs(l.pairs, g);
  if (merged_live) {
    const std::size_t m = l.merged_dim;
    const T scale = st.merged_std + static_cast<T>(kMergeEpsilon);
    T mean_g{}, dot_gd{};
    for (std::size_t i = 0; i < m; ++i) {
      mean_g += d_merged_in[i];
      dot_gd += d_merged_in[i] * st.merged_centered[i];
    }
    mean_g /= static_cast<T>(m);
    const T coef = st.merged_std > T(0) ? dot_gd / (static_cast<T>(m) * st.merged_std * scale * scale) : T(0);
    auto dv = [&](std::size_t i) { return (d_merged_in[i] - mean_g) / scale - st.merged_centered[i] * coef; };
    d_lr = g + dv(0);
    for (std::size_t p = 0; p < l.pairs; ++p) d_pairs[p] = g + dv(1 + p);
  }
  detail::check_finite(d_lr, "lr gradient");

  if (store.config().ffm_enabled) {
    const std::uint32_t F = l.n_fields;
    const std::uint32_t k = l.k;
    T check{};
    for (T d : d_pairs) check += d;
    detail::check_finite(check, "ffm gradient");
    for (const FieldFeatures& b : ex.fields) {
      const std::uint32_t f = b.field_id;
      for (const Feature& feat : b.features) {
        const T x = static_cast<T>(feat.value);
        for (std::uint32_t t = 0; t < F; ++t) {
          if (t == f || !st.present[t]) continue;
          const T gp = d_pairs[f < t ? l.pair_index(f, t) : l.pair_index(t, f)] * x;
          const T* other = st.latent_sums.data() + (static_cast<std::size_t>(t) * F + f) * k;
          const std::size_t off = l.ffm_offset(feat.index, t);
          for (std::uint32_t d = 0; d < k; ++d) sink(kBlockFfm, off + d, gp * other[d]);
        }
      }
    }
  }

  for (const FieldFeatures& b : ex.fields) {
    for (const Feature& feat : b.features) sink(kBlockLr, l.lr + feat.index, d_lr * static_cast<T>(feat.value));
  }
  sink(kBlockLr, l.bias, g);

  return log_loss_term(predict_proba(static_cast<double>(st.logit)), label);
}

template <class Access = Exclusive, class T>
double backward_update(const BasicForwardState<T>& st, const ParsedExample& ex, int label, BasicWeightStore<T>& store,
                       bool sparse) {
  return backward<Access>(st, ex, label, store, sparse, AdagradSink<T, Access>(store));
}

// Raw little-endian weights (and accumulators) in layout order.
inline Bytes flat_weight_view(const WeightStore& store, bool include_optimizer) {
  const std::size_t n = include_optimizer ? store.all().size() : store.layout().params;
  Bytes out(n * sizeof(float));
  std::memcpy(out.data(), store.weights(), out.size());
  return out;
}

// Model file: "FWM1", u32 version, u32 config length, config bytes,
// u8 optimizer flag, then the flat weight view.
inline constexpr std::string_view kModelMagic = "FWM1";
inline constexpr std::uint32_t kModelVersion = 1;

inline Bytes model_header(const ModelConfig& c, bool include_optimizer) {
  Bytes out;
  ByteWriter w(out);
  const Bytes cfg = serialize_config(c);
  w.put_tag(kModelMagic);
  w.put<std::uint32_t>(kModelVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.put_bytes(cfg);
  w.put<std::uint8_t>(include_optimizer ? 1 : 0);
  return out;
}

inline Bytes save_model(const WeightStore& store, bool include_optimizer) {
  Bytes out = model_header(store.config(), include_optimizer);
  const Bytes body = flat_weight_view(store, include_optimizer);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

struct LoadedModel {
  WeightStore store;
  bool has_optimizer = false;
};

// Inference-only files load with accumulators reset to 1.
inline LoadedModel load_model(ByteView bytes, std::uint64_t memory_cap = kDefaultMemoryCap) {
  ByteReader r(bytes, "model file");
  r.expect_tag(kModelMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kModelVersion) throw FormatError("model file: unsupported version " + std::to_string(version));
  const auto cfg_len = r.get<std::uint32_t>();
  ByteReader cr(r.take(cfg_len), "model config");
  ModelConfig cfg = deserialize_config(cr);
  if (!cr.done()) throw FormatError("model config: trailing bytes");
  cfg.memory_cap_bytes = memory_cap;
  const auto flag = r.get<std::uint8_t>();
  if (flag > 1) throw FormatError("model file: bad optimizer flag");
  LoadedModel m{WeightStore(cfg), flag == 1};
  const std::size_t n = m.has_optimizer ? m.store.all().size() : m.store.layout().params;
  if (r.remaining() != n * sizeof(float)) {
    throw FormatError("model file: expected " + std::to_string(n * sizeof(float)) + " weight bytes, found " +
                      std::to_string(r.remaining()));
  }
  std::memcpy(m.store.weights(), r.rest().data(), n * sizeof(float));
  return m;
}

}  // namespace fw
