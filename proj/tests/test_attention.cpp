#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "eflow/attention.hpp"
#include "eflow/flops.hpp"
#include "eflow/kernels.hpp"

using namespace eflow;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// sum_j Q_i (K_j^T V_j), accumulated pair by pair
std::vector<double> linear_attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v) {
    const int n = q.rows(), d = q.cols();
    std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int b = 0; b < d; ++b) {
                double kv = 0.0;
                for (int a = 0; a < d; ++a) kv += q.at(i, a) * k.at(j, a) * v.at(j, b);
                out[i * d + b] += kv;
            }
    return out;
}

// full-matrix softmax with -inf mask outside the window
std::vector<double> masked_softmax_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                                          const TokenLayout& layout, int win) {
    const int n = q.rows(), d = q.cols();
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
    const int half = win / 2;
    for (int i = 0; i < n; ++i) {
        std::vector<double> score(n, -1e300);
        for (int j = 0; j < n; ++j)
            if (std::abs(layout.surviving[j] - layout.surviving[i]) <= half) {
                double s = 0.0;
                for (int c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
                score[j] = s * inv;
            }
        const double mx = *std::max_element(score.begin(), score.end());
        double sum = 0.0;
        std::vector<double> w(n, 0.0);
        for (int j = 0; j < n; ++j)
            if (score[j] > -1e299) {
                w[j] = std::exp(score[j] - mx);
                sum += w[j];
            }
        for (int j = 0; j < n; ++j)
            for (int c = 0; c < d; ++c) out[i * d + c] += (w[j] / sum) * v.at(j, c);
    }
    return out;
}

}  // namespace

TEST_CASE("linear attention rank-1, zero-V, and double-loop oracle") {
    Tensor q1 = Tensor::from({1, 2}, {1, 0});
    Tensor o1 = linear_attention(q1, q1, q1);
    CHECK(o1.at(0, 0) == doctest::Approx(1.0));
    CHECK(o1.at(0, 1) == doctest::Approx(0.0));

    Rng rng(19);
    Tensor q = Tensor::randn({6, 4}, rng);
    Tensor k = Tensor::randn({6, 4}, rng);
    CHECK(max_abs_diff(linear_attention(q, k, Tensor::zeros({6, 4})).values(),
                       std::vector<double>(24, 0.0)) == 0.0);

    Tensor v = Tensor::randn({6, 4}, rng);
    CHECK(max_abs_diff(linear_attention(q, k, v).values(), linear_attention_oracle(q, k, v)) <=
          1e-12);
    // stabilized variant is the same map up to rounding
    CHECK(max_abs_diff(linear_attention(q, k, v, true).values(), linear_attention(q, k, v).values()) <=
          1e-12);
}

TEST_CASE("window attention: full coverage equals softmax reference") {
    Rng rng(23);
    TokenLayout l = TokenLayout::dense(6, 1, 1);
    Tensor q = Tensor::randn({6, 4}, rng);
    Tensor k = Tensor::randn({6, 4}, rng);
    Tensor v = Tensor::randn({6, 4}, rng);
    AttentionConfig cfg;
    cfg.d = 4;
    cfg.heads = 1;
    cfg.m = 20;  // window radius spans everything
    Tensor w = window_attention(q, k, v, l, cfg);
    Tensor ref = softmax_attention_reference(q, k, v);
    CHECK(max_abs_diff(w.values(), ref.values()) <= 1e-12);
}

TEST_CASE("window attention: singleton window returns V exactly") {
    Rng rng(29);
    TokenLayout l = TokenLayout::dense(5, 1, 1);
    Tensor q = Tensor::randn({5, 4}, rng);
    Tensor k = Tensor::randn({5, 4}, rng);
    Tensor v = Tensor::randn({5, 4}, rng);
    AttentionConfig cfg;
    cfg.d = 4;
    cfg.heads = 1;
    cfg.m = 1;  // m*h*w = 1
    Tensor w = window_attention(q, k, v, l, cfg);
    CHECK(max_abs_diff(w.values(), v.values()) == 0.0);
}

TEST_CASE("window attention matches masked-matrix oracle under dropping") {
    Rng rng(31);
    TokenLayout dense = TokenLayout::dense(6, 1, 1);
    TokenLayout l = TokenLayout::with_surviving(6, 1, 1, {0, 2, 3, 5});
    (void)dense;
    Tensor q = Tensor::randn({4, 4}, rng);
    Tensor k = Tensor::randn({4, 4}, rng);
    Tensor v = Tensor::randn({4, 4}, rng);
    AttentionConfig cfg;
    cfg.d = 4;
    cfg.heads = 1;
    cfg.m = 3;  // |W| = 3, half-span 1
    Tensor w = window_attention(q, k, v, l, cfg);
    CHECK(max_abs_diff(w.values(), masked_softmax_oracle(q, k, v, l, 3)) <= 1e-12);
}

TEST_CASE("token-drop locality: removing tokens outside W(i) leaves the row unchanged") {
    Rng rng(37);
    Tensor q = Tensor::randn({8, 4}, rng);
    Tensor k = Tensor::randn({8, 4}, rng);
    Tensor v = Tensor::randn({8, 4}, rng);
    AttentionConfig cfg;
    cfg.d = 4;
    cfg.heads = 1;
    cfg.m = 3;  // half-span 1 on a (8,1,1) grid
    TokenLayout full = TokenLayout::dense(8, 1, 1);
    Tensor o_full = window_attention(q, k, v, full, cfg);

    // drop tokens 5..7; W(1) = {0,1,2} is untouched
    const std::vector<int> kept = {0, 1, 2, 3, 4};
    TokenLayout dropped = TokenLayout::with_surviving(8, 1, 1, kept);
    Tensor o_drop = window_attention(gather_rows(q, kept), gather_rows(k, kept),
                                     gather_rows(v, kept), dropped, cfg);
    for (int c = 0; c < 4; ++c) CHECK(std::abs(o_drop.at(1, c) - o_full.at(1, c)) <= 1e-12);
}

TEST_CASE("softmax reference: N=1 and uniform rows") {
    Tensor v1 = Tensor::from({1, 3}, {4, 5, 6});
    Tensor q1 = Tensor::from({1, 3}, {1, 2, 3});
    CHECK(max_abs_diff(softmax_attention_reference(q1, q1, v1).values(), v1.values()) <= 1e-15);

    Rng rng(43);
    Tensor qu = Tensor::full({5, 4}, 0.3);
    Tensor ku = Tensor::full({5, 4}, -0.2);
    Tensor v = Tensor::randn({5, 4}, rng);
    Tensor o = softmax_attention_reference(qu, ku, v);
    for (int c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (int r = 0; r < 5; ++r) mean += v.at(r, c) / 5.0;
        for (int r = 0; r < 5; ++r) CHECK(o.at(r, c) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("gate fuse: neutral weights, saturation, formula oracle, range") {
    Rng rng(47);
    const int n = 5, d = 4;
    Tensor x = Tensor::randn({n, d}, rng);
    Tensor og = Tensor::randn({n, d}, rng);
    Tensor ol = Tensor::randn({n, d}, rng);

    Tensor zero_wg = Tensor::zeros({d, 2});
    Tensor fused = gate_fuse(x, og, ol, zero_wg);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c)
            CHECK(fused.at(r, c) == doctest::Approx(0.5 * (og.at(r, c) + ol.at(r, c))).epsilon(1e-15));

    // logits (+20, -20): output collapses to the global branch
    Tensor xp = Tensor::full({n, d}, 1.0);
    std::vector<double> wg_sat(d * 2);
    for (int i = 0; i < d; ++i) {
        wg_sat[i * 2] = 20.0 / d;
        wg_sat[i * 2 + 1] = -20.0 / d;
    }
    Tensor sat = gate_fuse(xp, og, ol, Tensor::from({d, 2}, wg_sat));
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) CHECK(std::abs(sat.at(r, c) - og.at(r, c)) <= 1e-8);

    // random weights vs direct formula; gates strictly inside (0,1)
    Tensor wg = Tensor::randn({d, 2}, rng);
    Tensor out = gate_fuse(x, og, ol, wg);
    for (int r = 0; r < n; ++r) {
        double lg = 0.0, ll = 0.0;
        for (int c = 0; c < d; ++c) {
            lg += x.at(r, c) * wg.at(c, 0);
            ll += x.at(r, c) * wg.at(c, 1);
        }
        const double gg = 1.0 / (1.0 + std::exp(-lg));
        const double gl = 1.0 / (1.0 + std::exp(-ll));
        CHECK((gg > 0.0 && gg < 1.0));
        CHECK((gl > 0.0 && gl < 1.0));
        for (int c = 0; c < d; ++c)
            CHECK(std::abs(out.at(r, c) - (gg * og.at(r, c) + gl * ol.at(r, c))) <= 1e-12);
    }
}

TEST_CASE("glga_forward: saturated local gate reproduces the softmax reference pipeline") {
    Rng rng(53);
    const int n = 6, d = 4;
    AttentionConfig cfg;
    cfg.d = d;
    cfg.heads = 1;
    cfg.m = 32;  // full coverage
    cfg.gate_per_head = false;
    TokenLayout l = TokenLayout::dense(n, 1, 1);
    GlgaParams p = GlgaParams::init(cfg, rng);
    // positive inputs and a huge gate projection force gates to exactly (0, 1)
    std::vector<double> xv(static_cast<std::size_t>(n) * d);
    Rng rng2(54);
    for (double& v : xv) v = 0.5 + rng2.uniform();
    Tensor x = Tensor::from({n, d}, xv);
    std::vector<double> wg(d * 2);
    for (int i = 0; i < d; ++i) {
        wg[i * 2] = -400.0 / d;
        wg[i * 2 + 1] = 400.0 / d;
    }
    p.w_g = Tensor::from({d, 2}, wg);

    Tensor out = glga_forward(x, l, cfg, p);

    // oracle: same projections and RoPE, reference attention, branch RMS norm
    Tensor q = rope_apply(matmul(x, p.w_q), l.surviving, cfg.rope_base);
    Tensor k = rope_apply(matmul(x, p.w_k), l.surviving, cfg.rope_base);
    Tensor v = matmul(x, p.w_v);
    Tensor ref = rms_norm(softmax_attention_reference(q, k, v), p.gain_local, cfg.rms_eps);
    CHECK(max_abs_diff(out.values(), ref.values()) <= 1e-10);
}

TEST_CASE("glga_forward: zero input gives zero output") {
    Rng rng(59);
    AttentionConfig cfg;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.m = 2;
    TokenLayout l = TokenLayout::dense(4, 1, 2);
    GlgaParams p = GlgaParams::init(cfg, rng);
    Tensor out = glga_forward(Tensor::zeros({l.total(), 8}), l, cfg, p);
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("permutation contract: storage order permutes window outputs, linear branch invariant") {
    Rng rng(61);
    const int d = 4;
    const std::vector<int> sorted_idx = {0, 2, 3, 5, 6, 7};
    const std::vector<int> perm = {4, 0, 5, 2, 1, 3};  // permutation of storage slots
    TokenLayout l1 = TokenLayout::with_surviving(8, 1, 1, sorted_idx);
    std::vector<int> permuted(sorted_idx.size());
    for (std::size_t a = 0; a < perm.size(); ++a) permuted[a] = sorted_idx[perm[a]];
    TokenLayout l2 = TokenLayout::with_surviving(8, 1, 1, permuted);
    CHECK_FALSE(l2.is_canonical());

    const int n = static_cast<int>(sorted_idx.size());
    Tensor q = Tensor::randn({n, d}, rng);
    Tensor k = Tensor::randn({n, d}, rng);
    Tensor v = Tensor::randn({n, d}, rng);
    const std::vector<int> perm_rows(perm.begin(), perm.end());
    Tensor q2 = gather_rows(q, perm_rows), k2 = gather_rows(k, perm_rows), v2 = gather_rows(v, perm_rows);

    AttentionConfig cfg;
    cfg.d = d;
    cfg.heads = 1;
    cfg.m = 3;
    Tensor w1 = window_attention(q, k, v, l1, cfg);
    Tensor w2 = window_attention(q2, k2, v2, l2, cfg);
    for (int a = 0; a < n; ++a)
        for (int c = 0; c < d; ++c) CHECK(w2.at(a, c) == w1.at(perm[a], c));

    Tensor o1 = linear_attention(q, k, v);
    Tensor o2 = linear_attention(q2, k2, v2);
    for (int a = 0; a < n; ++a)
        for (int c = 0; c < d; ++c) CHECK(std::abs(o2.at(a, c) - o1.at(perm[a], c)) <= 1e-12);
}

TEST_CASE("glga flop counter matches the closed-form count exactly") {
    Rng rng(67);
    AttentionConfig cfg;
    cfg.d = 16;
    cfg.heads = 4;
    cfg.m = 2;
    TokenLayout dense = TokenLayout::dense(6, 2, 2);
    DropPlan plan = make_drop_plan(dense, 0.5, rng);
    TokenLayout l = TokenLayout::with_surviving(6, 2, 2, plan.kept);
    GlgaParams p = GlgaParams::init(cfg, rng);
    Tensor x = Tensor::randn({l.active(), cfg.d}, rng);

    FlopCounter::reset();
    glga_forward(x, l, cfg, p);
    CHECK(FlopCounter::read() == glga_forward_flops(l, cfg));

    FlopCounter::reset();
    softmax_block_forward(x, l, cfg, p);
    CHECK(FlopCounter::read() == softmax_block_flops(l, cfg));
}

TEST_CASE("threaded kernels agree with single-threaded within 1e-10") {
    Rng rng(71);
    const int n = 64, d = 16;
    std::vector<double> q(n * d), k(n * d), v(n * d);
    for (auto* buf : {&q, &k, &v})
        for (double& x : *buf) x = rng.normal();
    TokenLayout l = TokenLayout::dense(n, 1, 1);
    auto rows = window_rows(l, 9);

    std::vector<double> o1(n * d), o4(n * d);
    kernels::window_attention<double>(q.data(), k.data(), v.data(), o1.data(), n, d, rows, nullptr, 1);
    kernels::window_attention<double>(q.data(), k.data(), v.data(), o4.data(), n, d, rows, nullptr, 4);
    CHECK(max_abs_diff(o1, o4) <= 1e-10);

    kernels::linear_attention<double>(q.data(), k.data(), v.data(), o1.data(), n, d, 1);
    kernels::linear_attention<double>(q.data(), k.data(), v.data(), o4.data(), n, d, 4);
    CHECK(max_abs_diff(o1, o4) <= 1e-10);

    kernels::softmax_attention_reference<double>(q.data(), k.data(), v.data(), o1.data(), n, d, 1);
    kernels::softmax_attention_reference<double>(q.data(), k.data(), v.data(), o4.data(), n, d, 4);
    CHECK(max_abs_diff(o1, o4) <= 1e-10);
}
