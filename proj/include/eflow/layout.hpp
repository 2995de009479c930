#pragma once

#include <vector>

#include "eflow/common.hpp"

namespace eflow {

// Rasterized (T', H', W') grid plus the surviving original indices after
// token dropping. Window membership is always computed on ORIGINAL raster
// indices, so positional identity survives dropping.
struct TokenLayout {
    int t_frames = 1;
    int h = 1;
    int w = 1;
    std::vector<int> surviving;  // original raster indices, canonical form is sorted ascending

    int total() const { return t_frames * h * w; }
    int active() const { return static_cast<int>(surviving.size()); }

    static TokenLayout dense(int t_frames, int h, int w);
    // surviving subset; validates range and uniqueness
    static TokenLayout with_surviving(int t_frames, int h, int w, std::vector<int> surviving);
    bool is_canonical() const;  // sorted ascending
};

// Kept-index plan for structured group-wise token subsampling: raster order
// is split into contiguous groups of size round(1/(1-r)) and one uniformly
// random index per group is kept; the tail is adjusted so that exactly
// N - floor(r*N) tokens survive.
struct DropPlan {
    double ratio = 0.0;
    int group_size = 1;
    std::vector<int> kept;  // sorted original indices

    int kept_count() const { return static_cast<int>(kept.size()); }
};

DropPlan make_drop_plan(const TokenLayout& layout, double r, Rng& rng);

// Surviving indices j with |raster(j) - raster(i)| <= floor(m*h*w / 2);
// i itself is always included. i must be a surviving index.
std::vector<int> window_index_set(const TokenLayout& layout, int i, int window_tokens);

// Window membership for every surviving token at once (per-row index lists
// into the surviving array, not original indices). Shared by the attention
// kernels so cost accounting and the per-token sets cannot diverge.
std::vector<std::vector<int>> window_rows(const TokenLayout& layout, int window_tokens);

}  // namespace eflow
