#ifndef MIMIC_SIG_CORE_HPP_
#define MIMIC_SIG_CORE_HPP_

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mimic_sig {

#ifdef MIMIC_SIG_BUILD_ID
inline constexpr const char* kBuildId = MIMIC_SIG_BUILD_ID;
#else
inline constexpr const char* kBuildId = "unknown";
#endif

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration. `path` locates the offending field ("$.env.width").
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg, std::string path = "$")
      : Error(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

// A conditional probability was requested on a zero-probability event.
class UndefinedConditional : public Error {
 public:
  using Error::Error;
};

// splitmix64 finalizer. All derived random streams go through this so the
// seed composition can be reproduced outside this library:
//   stream_seed(base, a, b) = mix(mix(mix(base) ^ a) ^ b)
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t stream_seed(std::uint64_t base, std::uint64_t a,
                                           std::uint64_t b = 0) {
  return mix64(mix64(mix64(base) ^ a) ^ b);
}

// Stream tags, so unrelated consumers of one run seed never collide.
enum class Stream : std::uint64_t {
  kInit = 1,
  kEval = 2,
  kMutation = 3,
  kEnv = 4,
  kActions = 5,
  kShuffle = 6,
  kMonteCarlo = 7,
  kBaseline = 8,
};

inline constexpr std::uint64_t stream_seed(std::uint64_t base, Stream s,
                                           std::uint64_t b = 0) {
  return stream_seed(base, static_cast<std::uint64_t>(s), b);
}

// Worker cap from MIMIC_SIG_THREADS (defaults to 1).
inline int worker_threads() {
  const char* env = std::getenv("MIMIC_SIG_THREADS");
  if (env == nullptr) return 1;
  int n = std::atoi(env);
  return std::max(1, n);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// handled exactly once; callers write results into index-addressed slots so
// the reduction order never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mimic_sig

#endif  // MIMIC_SIG_CORE_HPP_
