#pragma once

// Example sources: line streams, in-memory lines, and chunked inputs with
// background prefetch.

#include <algorithm>
#include <condition_variable>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "fw/error.hpp"

namespace fw {

class LineSource {
 public:
  virtual ~LineSource() = default;
  // nullopt at end of input; IoError on read failure.
  virtual std::optional<std::string> next() = 0;
};

class StreamLineSource : public LineSource {
 public:
  explicit StreamLineSource(std::istream& in, std::string name = "stream") : in_(in), name_(std::move(name)) {}

  std::optional<std::string> next() override {
    std::string line;
    while (std::getline(in_, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return line;
    }
    if (in_.bad()) throw IoError("read failed on " + name_);
    return std::nullopt;
  }

 private:
  std::istream& in_;
  std::string name_;
};

class FileLineSource : public LineSource {
 public:
  explicit FileLineSource(const std::string& path) : file_(path), inner_(file_, path) {
    if (!file_) throw IoError("cannot open " + path);
  }
  std::optional<std::string> next() override { return inner_.next(); }

 private:
  std::ifstream file_;
  StreamLineSource inner_;
};

class VectorLineSource : public LineSource {
 public:
  explicit VectorLineSource(const std::vector<std::string>& lines) : lines_(lines) {}
  std::optional<std::string> next() override {
    if (pos_ >= lines_.size()) return std::nullopt;
    return lines_[pos_++];
  }

 private:
  const std::vector<std::string>& lines_;
  std::size_t pos_ = 0;
};

// Supplies chunk `index` of an ordered sequence, or nullopt past the end.
// Called concurrently for distinct indices by the prefetcher.
class ChunkProvider {
 public:
  virtual ~ChunkProvider() = default;
  virtual std::optional<std::string> fetch(std::size_t index) = 0;
};

class FileChunkProvider : public ChunkProvider {
 public:
  explicit FileChunkProvider(std::vector<std::string> paths) : paths_(std::move(paths)) {}

  std::optional<std::string> fetch(std::size_t index) override {
    if (index >= paths_.size()) return std::nullopt;
    std::ifstream in(paths_[index], std::ios::binary);
    if (!in) throw IoError("cannot open chunk " + paths_[index]);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on chunk " + paths_[index]);
    return data;
  }

 private:
  std::vector<std::string> paths_;
};

// Regular files of a directory in lexicographic order.
inline std::vector<std::string> directory_chunks(const std::string& dir) {
  std::vector<std::string> paths;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
    if (e.is_regular_file()) paths.push_back(e.path().string());
  }
  if (ec) throw IoError("cannot list " + dir + ": " + ec.message());
  std::sort(paths.begin(), paths.end());
  return paths;
}

// Keeps up to `depth` chunks beyond the one being consumed fetched or in
// flight, using `depth` fetcher threads, and hands them out in index order.
// A fetch failure is rethrown when its chunk would be consumed.
class PrefetchSource : public LineSource {
 public:
  PrefetchSource(std::shared_ptr<ChunkProvider> provider, std::size_t depth)
      : provider_(std::move(provider)), depth_(depth) {
    if (depth_ < 1) throw ContractError("prefetch depth must be >= 1");
    for (std::size_t i = 0; i < depth_; ++i) fetchers_.emplace_back([this] { fetch_loop(); });
  }

  PrefetchSource(const PrefetchSource&) = delete;
  PrefetchSource& operator=(const PrefetchSource&) = delete;

  ~PrefetchSource() override {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : fetchers_) t.join();
  }

  // Next whole chunk in order, nullopt at end.
  std::optional<std::string> next_chunk() {
    std::unique_lock lock(mu_);
    if (done_) {
      if (failure_) std::rethrow_exception(failure_);
      return std::nullopt;
    }
    cv_.wait(lock, [&] { return ready_.count(consume_) > 0; });
    auto node = ready_.extract(consume_);
    Slot slot = std::move(node.mapped());
    if (slot.error) {
      done_ = true;
      failure_ = slot.error;
      lock.unlock();
      cv_.notify_all();
      std::rethrow_exception(slot.error);
    }
    if (!slot.data) {
      done_ = true;
      lock.unlock();
      cv_.notify_all();
      return std::nullopt;
    }
    ++consume_;
    lock.unlock();
    cv_.notify_all();
    return std::move(slot.data);
  }

  std::optional<std::string> next() override {
    while (true) {
      if (pos_ < current_.size()) {
        std::size_t end = current_.find('\n', pos_);
        if (end == std::string::npos) end = current_.size();
        std::string_view line(current_.data() + pos_, end - pos_);
        pos_ = end + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") != std::string_view::npos) return std::string(line);
        continue;
      }
      if (finished_) return std::nullopt;
      auto chunk = next_chunk();
      if (!chunk) {
        finished_ = true;
        return std::nullopt;
      }
      current_ = std::move(*chunk);
      pos_ = 0;
    }
  }

  // Largest number of fetched-but-unconsumed chunks held at once.
  std::size_t peak_buffered() const {
    std::lock_guard lock(mu_);
    return peak_;
  }

 private:
  struct Slot {
    std::optional<std::string> data;
    std::exception_ptr error;
  };

  void fetch_loop() {
    while (true) {
      std::size_t index;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || done_ || (next_fetch_ < end_ && next_fetch_ < consume_ + depth_); });
        if (stop_ || done_) return;
        index = next_fetch_++;
      }
      Slot slot;
      try {
        slot.data = provider_->fetch(index);
      } catch (...) {
        slot.error = std::current_exception();
      }
      {
        std::lock_guard lock(mu_);
        if (!slot.data && !slot.error) end_ = std::min(end_, index + 1);
        ready_.emplace(index, std::move(slot));
        peak_ = std::max(peak_, ready_.size());
      }
      cv_.notify_all();
    }
  }

  std::shared_ptr<ChunkProvider> provider_;
  std::size_t depth_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::size_t, Slot> ready_;
  std::size_t next_fetch_ = 0;
  std::size_t consume_ = 0;
  std::size_t end_ = static_cast<std::size_t>(-1);
  std::size_t peak_ = 0;
  bool stop_ = false;
  bool done_ = false;
  std::exception_ptr failure_;
  std::vector<std::thread> fetchers_;

  std::string current_;
  std::size_t pos_ = 0;
  bool finished_ = false;
};

inline std::unique_ptr<PrefetchSource> prefetch_source(std::shared_ptr<ChunkProvider> provider, std::size_t depth) {
  return std::make_unique<PrefetchSource>(std::move(provider), depth);
}

}  // namespace fw
