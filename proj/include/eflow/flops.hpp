#pragma once

#include <cstdint>

namespace eflow {

// Thread-local multiply-accumulate counter. Kernels tally their actual loop
// trip counts into it; the analytic cost model in bench.hpp mirrors the same
// formulas, and the two are asserted to agree exactly. Transcendentals
// (exp, sqrt) and pure additions are not counted.
struct FlopCounter {
    static std::uint64_t& value() {
        thread_local std::uint64_t count = 0;
        return count;
    }
    static void reset() { value() = 0; }
    static void add(std::uint64_t n) { value() += n; }
    static std::uint64_t read() { return value(); }
};

// Per-op cost formulas shared by the instrumented kernels and the analytic
// model, so the two sides cannot drift apart.
namespace flop_cost {
inline std::uint64_t matmul(std::uint64_t m, std::uint64_t k, std::uint64_t n) { return m * k * n; }
inline std::uint64_t elementwise_mul(std::uint64_t numel) { return numel; }
inline std::uint64_t rms_norm(std::uint64_t n, std::uint64_t d) { return 3 * n * d; }
inline std::uint64_t rope(std::uint64_t n, std::uint64_t d) { return 2 * n * d; }
inline std::uint64_t mean_square(std::uint64_t numel) { return numel; }
// one q.k dot plus one weighted-V accumulate per attended pair
inline std::uint64_t attention_pairs(std::uint64_t pairs, std::uint64_t d_head) {
    return 2 * pairs * d_head;
}
}  // namespace flop_cost

}  // namespace eflow
