#include "eflow/layout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace eflow {

TokenLayout TokenLayout::dense(int t_frames, int h, int w) {
    if (t_frames < 1 || h < 1 || w < 1) throw ConfigError("TokenLayout: extents must be positive");
    TokenLayout l;
    l.t_frames = t_frames;
    l.h = h;
    l.w = w;
    l.surviving.resize(static_cast<std::size_t>(t_frames) * h * w);
    std::iota(l.surviving.begin(), l.surviving.end(), 0);
    return l;
}

TokenLayout TokenLayout::with_surviving(int t_frames, int h, int w, std::vector<int> surviving) {
    TokenLayout l = dense(t_frames, h, w);
    const int n = l.total();
    std::vector<char> seen(n, 0);
    for (int i : surviving) {
        if (i < 0 || i >= n) throw UsageError("TokenLayout: surviving index out of range");
        if (seen[i]) throw UsageError("TokenLayout: duplicate surviving index");
        seen[i] = 1;
    }
    l.surviving = std::move(surviving);
    return l;
}

bool TokenLayout::is_canonical() const {
    return std::is_sorted(surviving.begin(), surviving.end());
}

DropPlan make_drop_plan(const TokenLayout& layout, double r, Rng& rng) {
    if (r < 0.0 || r >= 1.0) throw UsageError("make_drop_plan: ratio must be in [0, 1)");
    const int n = layout.total();
    const int target = n - static_cast<int>(std::floor(r * n));
    const int g = std::max(1, static_cast<int>(std::lround(1.0 / (1.0 - r))));

    DropPlan plan;
    plan.ratio = r;
    plan.group_size = g;
    for (int start = 0; start < n; start += g) {
        const int len = std::min(g, n - start);
        plan.kept.push_back(start + static_cast<int>(rng.below(static_cast<std::uint64_t>(len))));
    }
    // trim or top up from the tail so the kept count is exact
    while (static_cast<int>(plan.kept.size()) > target) plan.kept.pop_back();
    if (static_cast<int>(plan.kept.size()) < target) {
        std::vector<char> kept_mask(n, 0);
        for (int i : plan.kept) kept_mask[i] = 1;
        for (int i = n - 1; i >= 0 && static_cast<int>(plan.kept.size()) < target; --i)
            if (!kept_mask[i]) {
                kept_mask[i] = 1;
                plan.kept.push_back(i);
            }
    }
    std::sort(plan.kept.begin(), plan.kept.end());
    return plan;
}

std::vector<int> window_index_set(const TokenLayout& layout, int i, int window_tokens) {
    if (window_tokens < 1) throw ConfigError("window_index_set: window must span >= 1 token");
    if (std::find(layout.surviving.begin(), layout.surviving.end(), i) == layout.surviving.end())
        throw UsageError("window_index_set: token is not in the surviving set");
    const int half = window_tokens / 2;
    std::vector<int> out;
    for (int j : layout.surviving)
        if (std::abs(j - i) <= half) out.push_back(j);
    return out;
}

std::vector<std::vector<int>> window_rows(const TokenLayout& layout, int window_tokens) {
    if (window_tokens < 1) throw ConfigError("window_rows: window must span >= 1 token");
    const int half = window_tokens / 2;
    const int n = layout.active();
    std::vector<std::vector<int>> rows(n);
    if (layout.is_canonical()) {
        // sliding range over the sorted surviving list
        int lo = 0, hi = 0;
        for (int a = 0; a < n; ++a) {
            const int i = layout.surviving[a];
            while (lo < n && layout.surviving[lo] < i - half) ++lo;
            if (hi < lo) hi = lo;
            while (hi < n && layout.surviving[hi] <= i + half) ++hi;
            rows[a].reserve(hi - lo);
            for (int b = lo; b < hi; ++b) rows[a].push_back(b);
        }
    } else {
        // members iterate in ascending ORIGINAL index order regardless of
        // storage order, so permuting storage permutes outputs bitwise
        for (int a = 0; a < n; ++a) {
            const int i = layout.surviving[a];
            for (int b = 0; b < n; ++b)
                if (std::abs(layout.surviving[b] - i) <= half) rows[a].push_back(b);
            std::sort(rows[a].begin(), rows[a].end(),
                      [&](int x, int y) { return layout.surviving[x] < layout.surviving[y]; });
        }
    }
    return rows;
}

}  // namespace eflow
