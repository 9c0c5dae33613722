#pragma once

// Single-pass training with progressive validation: every example is
// scored before the model learns from it.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fw/bounded_queue.hpp"
#include "fw/error.hpp"
#include "fw/features.hpp"
#include "fw/metrics.hpp"
#include "fw/model.hpp"
#include "fw/source.hpp"

namespace fw {

struct TrainOptions {
  int n_threads = 1;
  int prefetch_depth = 1;  // consumed by the caller that builds the source
  std::size_t eval_window = 30000;
  bool sparse_updates = true;
  const Kernels* kernels = nullptr;  // default_kernels() when null
  // Called with (probability, label) for each scored example. Serialized
  // under a lock when several workers run.
  std::function<void(double, int)> on_prediction;
};

struct TrainReport {
  std::uint64_t examples_seen = 0;
  std::uint64_t parse_errors = 0;
  double progressive_logloss = 0.0;
  std::vector<AucPoint> rolling_auc_series;  // single-threaded runs only
  double wall_time = 0.0;
  double throughput = 0.0;
  std::optional<std::string> io_error;  // set when input failed mid-run
};

namespace detail {

inline void check_schema(const InputSchema& schema, const ModelConfig& cfg) {
  if (schema.field_count() != cfg.n_fields || schema.hash_bits() != cfg.hash_bits) {
    throw ContractError("schema (" + std::to_string(schema.field_count()) + " fields, " +
                        std::to_string(schema.hash_bits()) + " bits) does not match model (" +
                        std::to_string(cfg.n_fields) + " fields, " + std::to_string(cfg.hash_bits) + " bits)");
  }
}

inline void finish_report(TrainReport& r, double loss_sum, std::chrono::steady_clock::time_point start) {
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.progressive_logloss = r.examples_seen ? loss_sum / static_cast<double>(r.examples_seen) : 0.0;
  r.throughput = r.wall_time > 0 ? static_cast<double>(r.examples_seen) / r.wall_time : 0.0;
}

// One worker's view: parse, score, record, learn.
template <class Access>
struct Learner {
  WeightStore& store;
  const InputSchema& schema;
  const TrainOptions& opts;
  const Kernels& kern;
  ForwardState state;
  double loss_sum = 0.0;
  std::uint64_t seen = 0;
  std::uint64_t parse_errors = 0;

  // Returns the scored (probability, label), or nullopt on a parse error.
  std::optional<ScoredLabel> step(const std::string& line) {
    ParsedExample ex;
    try {
      ex = parse_example(line, schema);
    } catch (const ParseError&) {
      ++parse_errors;
      return std::nullopt;
    }
    forward<Access>(ex, store, state, kern);
    const double p = predict_proba(static_cast<double>(state.logit));
    loss_sum += backward_update<Access>(state, ex, ex.label, store, opts.sparse_updates);
    ++seen;
    return ScoredLabel{p, ex.label};
  }
};

}  // namespace detail

inline TrainReport train_stream(LineSource& source, WeightStore& store, const InputSchema& schema,
                                const TrainOptions& opts = {}) {
  detail::check_schema(schema, store.config());
  const Kernels& kern = opts.kernels ? *opts.kernels : default_kernels();
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  RollingAuc rolling(opts.eval_window);
  detail::Learner<Exclusive> learner{store, schema, opts, kern, {}};
  while (true) {
    std::optional<std::string> line;
    try {
      line = source.next();
    } catch (const IoError& e) {
      report.io_error = e.what();
      break;
    }
    if (!line) break;
    auto scored = learner.step(*line);
    if (!scored) continue;
    if (opts.on_prediction) opts.on_prediction(scored->score, scored->label);
    if (auto point = rolling.add(scored->score, scored->label)) report.rolling_auc_series.push_back(*point);
  }
  report.examples_seen = learner.seen;
  report.parse_errors = learner.parse_errors;
  detail::finish_report(report, learner.loss_sum, start);
  store.bump_version();
  return report;
}

// Hogwild: the calling thread feeds raw lines into a bounded queue
// (capacity 4 x n_threads); workers parse, score and update the shared
// store without locks. Metric partials are merged after the join. With one
// worker the result is byte-identical to train_stream.
inline TrainReport hogwild_train(LineSource& source, WeightStore& store, const InputSchema& schema,
                                 const TrainOptions& opts = {}) {
  detail::check_schema(schema, store.config());
  if (opts.n_threads < 1) throw ContractError("n_threads must be >= 1");
  const Kernels& kern = opts.kernels ? *opts.kernels : default_kernels();
  const auto start = std::chrono::steady_clock::now();
  const int n = opts.n_threads;

  BoundedQueue<std::string> queue(static_cast<std::size_t>(4 * n));
  std::vector<detail::Learner<Shared>> learners;
  learners.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) learners.push_back(detail::Learner<Shared>{store, schema, opts, kern, {}});

  TrainReport report;
  std::optional<RollingAuc> rolling;
  if (n == 1) rolling.emplace(opts.eval_window);
  std::mutex callback_mu;
  std::mutex error_mu;
  std::optional<WorkerError> failure;

  auto work = [&](int id) {
    auto& learner = learners[static_cast<std::size_t>(id)];
    try {
      while (auto line = queue.pop()) {
        auto scored = learner.step(*line);
        if (!scored) continue;
        if (opts.on_prediction) {
          std::lock_guard lock(callback_mu);
          opts.on_prediction(scored->score, scored->label);
        }
        if (rolling) {
          if (auto point = rolling->add(scored->score, scored->label)) report.rolling_auc_series.push_back(*point);
        }
      }
    } catch (const Error& e) {
      {
        std::lock_guard lock(error_mu);
        if (!failure) failure.emplace(id, e.what(), e.kind());
      }
      queue.close();
    } catch (const std::exception& e) {
      {
        std::lock_guard lock(error_mu);
        if (!failure) failure.emplace(id, e.what());
      }
      queue.close();
    }
  };

  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) workers.emplace_back(work, i);

  try {
    while (auto line = source.next()) {
      if (!queue.push(std::move(*line))) break;
    }
  } catch (const IoError& e) {
    report.io_error = e.what();
  }
  queue.close();
  for (auto& t : workers) t.join();
  if (failure) throw *failure;

  double loss_sum = 0.0;
  for (const auto& l : learners) {
    report.examples_seen += l.seen;
    report.parse_errors += l.parse_errors;
    loss_sum += l.loss_sum;
  }
  detail::finish_report(report, loss_sum, start);
  store.bump_version();
  return report;
}

}  // namespace fw
