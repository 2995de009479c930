#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

#include "eflow/flops.hpp"
#include "eflow/layout.hpp"

// Forward-only attention kernels on flat row-major buffers. These back the
// latency sweeps (float32 there) and the reference paths inside the model.
// Accumulation order is fixed ascending-index in single-thread mode; the
// threaded paths chunk deterministically and reduce in chunk order.

namespace eflow::kernels {

// S = sum_j K_j^T V_j, O_i = Q_i S. No softmax denominator.
template <typename T>
void linear_attention(const T* q, const T* k, const T* v, T* o, int n, int d, int threads = 1) {
    std::vector<T> s(static_cast<std::size_t>(d) * d, T(0));
    if (threads <= 1) {
        for (int j = 0; j < n; ++j)
            for (int a = 0; a < d; ++a) {
                const T kj = k[j * d + a];
                for (int b = 0; b < d; ++b) s[a * d + b] += kj * v[j * d + b];
            }
    } else {
        const int chunk = (n + threads - 1) / threads;
        std::vector<std::vector<T>> partial(threads, std::vector<T>(s.size(), T(0)));
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                const int j0 = t * chunk, j1 = std::min(n, j0 + chunk);
                auto& ps = partial[t];
                for (int j = j0; j < j1; ++j)
                    for (int a = 0; a < d; ++a) {
                        const T kj = k[j * d + a];
                        for (int b = 0; b < d; ++b) ps[a * d + b] += kj * v[j * d + b];
                    }
            });
        for (auto& th : pool) th.join();
        for (int t = 0; t < threads; ++t)
            for (std::size_t i = 0; i < s.size(); ++i) s[i] += partial[t][i];
    }
    auto rows = [&](int i0, int i1) {
        for (int i = i0; i < i1; ++i)
            for (int b = 0; b < d; ++b) {
                T acc = T(0);
                for (int a = 0; a < d; ++a) acc += q[i * d + a] * s[a * d + b];
                o[i * d + b] = acc;
            }
    };
    if (threads <= 1) {
        rows(0, n);
    } else {
        const int chunk = (n + threads - 1) / threads;
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back(rows, t * chunk, std::min(n, (t + 1) * chunk));
        for (auto& th : pool) th.join();
    }
    FlopCounter::add(flop_cost::matmul(n, d, d) * 2);
}

inline std::uint64_t window_pair_count(const std::vector<std::vector<int>>& rows) {
    std::uint64_t pairs = 0;
    for (const auto& r : rows) pairs += r.size();
    return pairs;
}

// Softmax attention restricted to precomputed per-row windows. `probs`,
// when non-null, receives the ragged softmax weights (used by backward).
template <typename T>
void window_attention(const T* q, const T* k, const T* v, T* o, int n, int d,
                      const std::vector<std::vector<int>>& rows, std::vector<std::vector<T>>* probs = nullptr,
                      int threads = 1) {
    const T inv_sqrt_d = T(1) / std::sqrt(T(d));
    if (probs) probs->assign(n, {});
    auto run = [&](int i0, int i1) {
        std::vector<T> score;
        for (int i = i0; i < i1; ++i) {
            const auto& w = rows[i];
            score.resize(w.size());
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t a = 0; a < w.size(); ++a) {
                T s = T(0);
                const T* kj = k + static_cast<std::size_t>(w[a]) * d;
                const T* qi = q + static_cast<std::size_t>(i) * d;
                for (int c = 0; c < d; ++c) s += qi[c] * kj[c];
                score[a] = s * inv_sqrt_d;
                if (score[a] > mx) mx = score[a];
            }
            T sum = T(0);
            for (T& s : score) {
                s = std::exp(s - mx);
                sum += s;
            }
            const T inv = T(1) / sum;
            for (T& s : score) s *= inv;
            T* oi = o + static_cast<std::size_t>(i) * d;
            for (int c = 0; c < d; ++c) oi[c] = T(0);
            for (std::size_t a = 0; a < w.size(); ++a) {
                const T* vj = v + static_cast<std::size_t>(w[a]) * d;
                const T p = score[a];
                for (int c = 0; c < d; ++c) oi[c] += p * vj[c];
            }
            if (probs) (*probs)[i].assign(score.begin(), score.end());
        }
    };
    if (threads <= 1) {
        run(0, n);
    } else {
        const int chunk = (n + threads - 1) / threads;
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back(run, t * chunk, std::min(n, (t + 1) * chunk));
        for (auto& th : pool) th.join();
    }
    FlopCounter::add(flop_cost::attention_pairs(window_pair_count(rows), d));
}

// Full scaled dot-product attention over all pairs: the O(N^2) baseline.
template <typename T>
void softmax_attention_reference(const T* q, const T* k, const T* v, T* o, int n, int d,
                                 int threads = 1) {
    const T inv_sqrt_d = T(1) / std::sqrt(T(d));
    auto run = [&](int i0, int i1) {
        std::vector<T> score(n);
        for (int i = i0; i < i1; ++i) {
            const T* qi = q + static_cast<std::size_t>(i) * d;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < n; ++j) {
                T s = T(0);
                const T* kj = k + static_cast<std::size_t>(j) * d;
                for (int c = 0; c < d; ++c) s += qi[c] * kj[c];
                score[j] = s * inv_sqrt_d;
                if (score[j] > mx) mx = score[j];
            }
            T sum = T(0);
            for (int j = 0; j < n; ++j) {
                score[j] = std::exp(score[j] - mx);
                sum += score[j];
            }
            const T inv = T(1) / sum;
            T* oi = o + static_cast<std::size_t>(i) * d;
            for (int c = 0; c < d; ++c) oi[c] = T(0);
            for (int j = 0; j < n; ++j) {
                const T p = score[j] * inv;
                const T* vj = v + static_cast<std::size_t>(j) * d;
                for (int c = 0; c < d; ++c) oi[c] += p * vj[c];
            }
        }
    };
    if (threads <= 1) {
        run(0, n);
    } else {
        const int chunk = (n + threads - 1) / threads;
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back(run, t * chunk, std::min(n, (t + 1) * chunk));
        for (auto& th : pool) th.join();
    }
    FlopCounter::add(flop_cost::attention_pairs(static_cast<std::uint64_t>(n) * n, d));
}

// y = x @ w, row-major; the sweep's projection step.
template <typename T>
void matmul(const T* x, const T* w, T* y, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* yi = y + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) yi[j] = T(0);
        for (int p = 0; p < k; ++p) {
            const T xp = x[static_cast<std::size_t>(i) * k + p];
            const T* wp = w + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) yi[j] += xp * wp[j];
        }
    }
    FlopCounter::add(flop_cost::matmul(m, k, n));
}

template <typename T>
void rope(T* x, int n, int d, const std::vector<int>& positions, double base) {
    const int half = d / 2;
    for (int r = 0; r < n; ++r)
        for (int i = 0; i < half; ++i) {
            const double theta = positions[r] * std::pow(base, -2.0 * i / d);
            const T c = static_cast<T>(std::cos(theta)), s = static_cast<T>(std::sin(theta));
            T& a = x[static_cast<std::size_t>(r) * d + 2 * i];
            T& b = x[static_cast<std::size_t>(r) * d + 2 * i + 1];
            const T a0 = a, b0 = b;
            a = a0 * c - b0 * s;
            b = a0 * s + b0 * c;
        }
    FlopCounter::add(flop_cost::rope(n, d));
}

template <typename T>
void rms_norm(const T* x, T* y, int n, int d, const T* gain, T eps) {
    for (int r = 0; r < n; ++r) {
        T ms = T(0);
        for (int c = 0; c < d; ++c) {
            const T v = x[static_cast<std::size_t>(r) * d + c];
            ms += v * v;
        }
        const T inv = T(1) / std::sqrt(ms / d + eps);
        for (int c = 0; c < d; ++c)
            y[static_cast<std::size_t>(r) * d + c] = gain[c] * x[static_cast<std::size_t>(r) * d + c] * inv;
    }
    FlopCounter::add(flop_cost::rms_norm(n, d));
}

}  // namespace eflow::kernels
