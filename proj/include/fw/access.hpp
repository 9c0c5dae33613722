#pragma once

#include <atomic>
#include <cstddef>
#include <vector>

namespace fw {

// How the model reads and writes weights.
//
// Exclusive: single writer, plain loads/stores, views alias the store.
// Shared: Hogwild. Every weight access is a relaxed 32-bit atomic so values
// never tear, with no ordering between weights. Views are copied into
// caller scratch so vector kernels run on private memory and produce the
// same arithmetic as the exclusive path.
struct Exclusive {
  template <class T>
  static T load(const T& x) {
    return x;
  }
  template <class T>
  static void store(T& x, T v) {
    x = v;
  }
  template <class T>
  static const T* view(const T* p, std::size_t, std::vector<T>&) {
    return p;
  }
};

struct Shared {
  template <class T>
  static T load(const T& x) {
    return std::atomic_ref<T>(const_cast<T&>(x)).load(std::memory_order_relaxed);
  }
  template <class T>
  static void store(T& x, T v) {
    std::atomic_ref<T>(x).store(v, std::memory_order_relaxed);
  }
  template <class T>
  static const T* view(const T* p, std::size_t n, std::vector<T>& scratch) {
    if (scratch.size() < n) scratch.resize(n);
    for (std::size_t i = 0; i < n; ++i) scratch[i] = load(p[i]);
    return scratch.data();
  }
};

}  // namespace fw
