#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace egm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Singularity guards: training times stay in [t_min, 1 - t_min], and the
// 1-t (equivalently 1-kappa_t) denominators of conditional generators are
// floored so rates stay finite on the last simulation step.
inline constexpr double kDefaultTMin = 1e-3;
inline constexpr double kOneMinusTFloor = 1e-4;

struct DegenerateWeightsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularTimeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Collapses (seed, purpose, counters...) into one stream seed so every
/// worker draws from an independent, schedule-invariant stream.
inline uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
  uint64_t s = 0x6a09e667f3bcc909ull;
  for (uint64_t p : parts) {
    s ^= splitmix64(p) + 0x9e3779b97f4a7c15ull + (s << 6) + (s >> 2);
    (void)splitmix64(s);
  }
  return splitmix64(s);
}

/// mt19937_64 wrapper with stateless draw helpers. Normals use plain
/// Box-Muller with no cached spare so the stream position is a pure
/// function of the call sequence (needed for bitwise-reproducible resume).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform_pos() { return ((gen_() >> 11) + 1) * 0x1.0p-53; }

  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // [0, n)
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = gen_();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (!is) throw std::runtime_error("Rng::deserialize: malformed state");
  }

 private:
  std::mt19937_64 gen_;
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double square(double x) { return x * x; }

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one per
/// worker; results must be written to per-index slots so the outcome is
/// independent of the thread count.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < workers; ++w) {
    int lo = static_cast<int>(int64_t(n) * w / workers);
    int hi = static_cast<int>(int64_t(n) * (w + 1) / workers);
    pool.emplace_back([&, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace egm
