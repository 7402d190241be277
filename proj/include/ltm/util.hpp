#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ltm {

// ============================================================================
// Counter-based RNG
// ============================================================================

// splitmix64 stream. Streams are derived by hashing a key tuple, so any
// (seed, step, index) triple names the same sequence regardless of which
// thread consumes it.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(mix(seed ^ kGolden)) {}

    // Derive an independent stream from a key tuple.
    static Rng stream(std::initializer_list<uint64_t> keys) {
        uint64_t h = 0x6a09e667f3bcc909ULL;
        for (uint64_t k : keys) {
            h = mix(h ^ mix(k + kGolden));
        }
        return Rng(h);
    }

    uint64_t next_u64() {
        state_ += kGolden;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; the second draw of each pair is cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) {
        // rejection sampling to avoid modulo bias
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) {
            v = next_u64();
        }
        return v % n;
    }

  private:
    static constexpr uint64_t kGolden = 0x9E3779B97f4A7C15ULL;

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t state_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

// ============================================================================
// Thread pool-free parallel for
// ============================================================================

// Runs fn(i) for i in [0, n). Work item i always sees the same inputs no
// matter how many threads run, so results are schedule-independent as long
// as the items do not share mutable state.
inline void parallel_for(int64_t n, int n_threads, const std::function<void(int64_t)>& fn) {
    if (n <= 0) {
        return;
    }
    if (n_threads <= 1 || n == 1) {
        for (int64_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    const int workers = static_cast<int>(std::min<int64_t>(n_threads, n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    std::exception_ptr first_error = nullptr;
    std::mutex err_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int64_t i = w; i < n; i += workers) {
                    fn(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

inline int default_thread_count() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace ltm
