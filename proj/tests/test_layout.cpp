#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "eflow/layout.hpp"

using namespace eflow;

TEST_CASE("window covers the whole sequence when m spans all frames") {
    TokenLayout l = TokenLayout::dense(4, 2, 2);
    const int win = 4 * 2 * 2 * 2;  // larger than the sequence
    for (int i : l.surviving) {
        auto w = window_index_set(l, i, win);
        CHECK(w.size() == l.surviving.size());
    }
}

TEST_CASE("degenerate single-token window") {
    TokenLayout l = TokenLayout::dense(3, 1, 1);
    for (int i : l.surviving) {
        auto w = window_index_set(l, i, 1);
        REQUIRE(w.size() == 1);
        CHECK(w[0] == i);
    }
}

TEST_CASE("window under dropping equals brute-force distance predicate") {
    // 4x2x2 grid with half the tokens dropped
    Rng rng(77);
    TokenLayout dense = TokenLayout::dense(4, 2, 2);
    DropPlan plan = make_drop_plan(dense, 0.5, rng);
    TokenLayout l = TokenLayout::with_surviving(4, 2, 2, plan.kept);
    const int win = 1 * 2 * 2;  // m = 1
    const int half = win / 2;
    for (int i : l.surviving) {
        auto w = window_index_set(l, i, win);
        std::vector<int> expect;
        for (int j : l.surviving)
            if (std::abs(j - i) <= half) expect.push_back(j);
        CHECK(w == expect);
        CHECK(std::find(w.begin(), w.end(), i) != w.end());
    }
    CHECK_THROWS_AS(window_index_set(l, /*not surviving*/ [&] {
        for (int j = 0; j < dense.total(); ++j)
            if (std::find(plan.kept.begin(), plan.kept.end(), j) == plan.kept.end()) return j;
        return -1;
    }(), win), UsageError);
}

TEST_CASE("window_rows matches window_index_set") {
    Rng rng(5);
    TokenLayout dense = TokenLayout::dense(4, 2, 2);
    DropPlan plan = make_drop_plan(dense, 0.25, rng);
    TokenLayout l = TokenLayout::with_surviving(4, 2, 2, plan.kept);
    const int win = 2 * 2 * 2;
    auto rows = window_rows(l, win);
    REQUIRE(static_cast<int>(rows.size()) == l.active());
    for (int a = 0; a < l.active(); ++a) {
        auto expect = window_index_set(l, l.surviving[a], win);
        std::vector<int> got;
        for (int b : rows[a]) got.push_back(l.surviving[b]);
        CHECK(got == expect);
    }
}

TEST_CASE("drop plan: paper ratio 0.75 on 8 tokens keeps 2") {
    Rng rng(1);
    TokenLayout l = TokenLayout::dense(8, 1, 1);
    DropPlan p = make_drop_plan(l, 0.75, rng);
    CHECK(p.kept_count() == 2);
    CHECK(p.group_size == 4);
}

TEST_CASE("drop plan: r = 0 keeps everything") {
    Rng rng(2);
    TokenLayout l = TokenLayout::dense(4, 2, 2);
    DropPlan p = make_drop_plan(l, 0.0, rng);
    CHECK(p.kept_count() == l.total());
}

TEST_CASE("drop plan exhaustive properties for N <= 16") {
    for (int n = 1; n <= 16; ++n) {
        for (double r : {0.0, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9}) {
            for (std::uint64_t seed = 1; seed <= 20; ++seed) {
                Rng rng(seed);
                TokenLayout l = TokenLayout::dense(n, 1, 1);
                DropPlan p = make_drop_plan(l, r, rng);
                const int target = n - static_cast<int>(std::floor(r * n));
                REQUIRE(p.kept_count() == target);
                CHECK(std::is_sorted(p.kept.begin(), p.kept.end()));
                std::set<int> uniq(p.kept.begin(), p.kept.end());
                CHECK(static_cast<int>(uniq.size()) == target);
                for (int i : p.kept) CHECK((i >= 0 && i < n));
                // every group contributes >= 1 kept token when feasible
                const int groups = (n + p.group_size - 1) / p.group_size;
                if (groups <= target) {
                    std::vector<int> per_group(groups, 0);
                    for (int i : p.kept) per_group[i / p.group_size]++;
                    for (int g : per_group) CHECK(g >= 1);
                }
            }
        }
    }
    Rng rng(3);
    TokenLayout l = TokenLayout::dense(4, 1, 1);
    CHECK_THROWS_AS(make_drop_plan(l, 1.0, rng), UsageError);
}
