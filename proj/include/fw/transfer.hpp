#pragma once

// Shipping weights to serving: drop the optimizer half, quantize to 16 bits,
// and diff against the blob the serving side already holds.

#include "fw/model.hpp"
#include "fw/patch.hpp"
#include "fw/quantize.hpp"

namespace fw {

struct QuantizeOptions {
  int alpha = 4;
  int beta = 4;
};

inline Bytes quantized_inference_blob(const WeightStore& store, QuantizeOptions q = {}) {
  return encode_quantized(quantize(store.weight_span(), q.alpha, q.beta));
}

// Patch from the previously shipped quantized blob to the quantized
// inference weights of `new_store`.
inline Patch quantized_update_pipeline(ByteView old_blob, const WeightStore& new_store, QuantizeOptions q = {}) {
  decode_quantized(old_blob);  // validates the base
  const Bytes next = quantized_inference_blob(new_store, q);
  return create_patch(old_blob, next);
}

// Rebuilds an inference-only store from a dequantized blob and the config
// of a model with the same layout.
inline WeightStore store_from_blob(const QuantizedBlob& blob, const ModelConfig& config) {
  WeightStore store(config);
  if (blob.indices.size() != store.layout().params) {
    throw FormatError("quantized blob holds " + std::to_string(blob.indices.size()) + " weights, model needs " +
                      std::to_string(store.layout().params));
  }
  const std::vector<float> w = dequantize(blob);
  std::copy(w.begin(), w.end(), store.weights());
  return store;
}

}  // namespace fw
