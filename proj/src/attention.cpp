#include "eflow/attention.hpp"

#include <cmath>

#include "eflow/kernels.hpp"

namespace eflow {

GlgaParams GlgaParams::init(const AttentionConfig& cfg, Rng& rng) {
    cfg.validate();
    GlgaParams p;
    const double std = 0.02;
    p.w_q = Tensor::randn({cfg.d, cfg.d}, rng, std).set_requires_grad(true);
    p.w_k = Tensor::randn({cfg.d, cfg.d}, rng, std).set_requires_grad(true);
    p.w_v = Tensor::randn({cfg.d, cfg.d}, rng, std).set_requires_grad(true);
    const int gate_cols = cfg.gate_per_head ? 2 * cfg.heads : 2;
    p.w_g = Tensor::randn({cfg.d, gate_cols}, rng, std).set_requires_grad(true);
    p.gain_global = Tensor::full({cfg.d}, 1.0).set_requires_grad(true);
    p.gain_local = Tensor::full({cfg.d}, 1.0).set_requires_grad(true);
    return p;
}

Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool stabilize) {
    const Tensor s = matmul(transpose(k), v);
    if (!stabilize) return matmul(q, s);
    const double n = static_cast<double>(q.rows());
    return scale(matmul(q, scale(s, 1.0 / n)), n);
}

Tensor window_attention_rows(const Tensor& q, const Tensor& k, const Tensor& v,
                             const std::vector<std::vector<int>>& rows) {
    const int n = q.rows(), d = q.cols();
    if (k.shape() != q.shape() || v.shape() != q.shape())
        throw ShapeError("window_attention: Q/K/V shapes disagree");
    if (static_cast<int>(rows.size()) != n)
        throw ShapeError("window_attention: row-window count != token count");

    std::vector<double> out(static_cast<std::size_t>(n) * d);
    std::vector<std::vector<double>> probs;
    kernels::window_attention<double>(q.values().data(), k.values().data(), v.values().data(),
                                      out.data(), n, d, rows, &probs);
    const bool rg = autodiff::grad_enabled({&q, &k, &v});
    Tensor y = autodiff::make_output({n, d}, std::move(out), rg, "window_attention");
    if (rg) {
        auto qi = q.impl(), ki = k.impl(), vi = v.impl(), yi = y.impl();
        autodiff::record("window_attention", [qi, ki, vi, yi, rows, probs, n, d] {
            const auto* g = autodiff::grad_or_null(yi);
            if (!g) return;
            const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
            std::vector<double> gq(qi->val.size(), 0.0), gk(ki->val.size(), 0.0),
                gv(vi->val.size(), 0.0);
            std::vector<double> dp;
            for (int i = 0; i < n; ++i) {
                const auto& w = rows[i];
                const auto& p = probs[i];
                const double* go = &(*g)[static_cast<std::size_t>(i) * d];
                dp.assign(w.size(), 0.0);
                double pdp = 0.0;
                for (std::size_t a = 0; a < w.size(); ++a) {
                    const double* vj = &vi->val[static_cast<std::size_t>(w[a]) * d];
                    double acc = 0.0;
                    for (int c = 0; c < d; ++c) {
                        gv[static_cast<std::size_t>(w[a]) * d + c] += p[a] * go[c];
                        acc += vj[c] * go[c];
                    }
                    dp[a] = acc;
                    pdp += p[a] * acc;
                }
                const double* qi_row = &qi->val[static_cast<std::size_t>(i) * d];
                for (std::size_t a = 0; a < w.size(); ++a) {
                    const double ds = p[a] * (dp[a] - pdp) * inv_sqrt_d;
                    const double* kj = &ki->val[static_cast<std::size_t>(w[a]) * d];
                    for (int c = 0; c < d; ++c) {
                        gq[static_cast<std::size_t>(i) * d + c] += ds * kj[c];
                        gk[static_cast<std::size_t>(w[a]) * d + c] += ds * qi_row[c];
                    }
                }
            }
            autodiff::accumulate(qi, gq);
            autodiff::accumulate(ki, gk);
            autodiff::accumulate(vi, gv);
        });
    }
    return y;
}

Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v, const TokenLayout& layout,
                        const AttentionConfig& cfg) {
    if (q.rows() != layout.active())
        throw ShapeError("window_attention: token count != surviving count");
    return window_attention_rows(q, k, v, window_rows(layout, cfg.window_tokens(layout)));
}

Tensor softmax_attention_reference(const Tensor& q, const Tensor& k, const Tensor& v) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
    return matmul(softmax_rows(scores), v);
}

Tensor gate_fuse(const Tensor& x, const Tensor& o_global, const Tensor& o_local, const Tensor& w_g,
                 int heads) {
    const int n = x.rows(), d = o_global.cols();
    if (o_local.shape() != o_global.shape() || o_global.rows() != n)
        throw ShapeError("gate_fuse: branch shapes disagree");
    const int gate_cols = w_g.cols();
    if (gate_cols != 2 && gate_cols != 2 * heads)
        throw ShapeError("gate_fuse: gate projection must have 2 or 2*heads columns");
    const Tensor gates = sigmoid(matmul(x, w_g));
    if (gate_cols == 2) {
        return add(mul_colvec(o_global, slice_cols(gates, 0, 1)),
                   mul_colvec(o_local, slice_cols(gates, 1, 1)));
    }
    const int dh = d / heads;
    Tensor out;
    for (int h = 0; h < heads; ++h) {
        const Tensor fused = add(
            mul_colvec(slice_cols(o_global, h * dh, dh), slice_cols(gates, 2 * h, 1)),
            mul_colvec(slice_cols(o_local, h * dh, dh), slice_cols(gates, 2 * h + 1, 1)));
        out = h == 0 ? fused : concat(out, fused, 1);
    }
    return out;
}

namespace {

struct HeadSplit {
    std::vector<Tensor> q, k, v;  // RoPE applied to q and k
};

HeadSplit project_heads(const Tensor& x, const TokenLayout& layout, const AttentionConfig& cfg,
                        const GlgaParams& params) {
    const Tensor q = matmul(x, params.w_q);
    const Tensor k = matmul(x, params.w_k);
    const Tensor v = matmul(x, params.w_v);
    const int dh = cfg.head_dim();
    HeadSplit hs;
    for (int h = 0; h < cfg.heads; ++h) {
        hs.q.push_back(rope_apply(slice_cols(q, h * dh, dh), layout.surviving, cfg.rope_base));
        hs.k.push_back(rope_apply(slice_cols(k, h * dh, dh), layout.surviving, cfg.rope_base));
        hs.v.push_back(slice_cols(v, h * dh, dh));
    }
    return hs;
}

Tensor concat_heads(const std::vector<Tensor>& heads) {
    Tensor out = heads[0];
    for (std::size_t h = 1; h < heads.size(); ++h) out = concat(out, heads[h], 1);
    return out;
}

}  // namespace

Tensor glga_forward(const Tensor& x, const TokenLayout& layout, const AttentionConfig& cfg,
                    const GlgaParams& params) {
    cfg.validate();
    if (x.rows() != layout.active())
        throw ShapeError("glga_forward: token count != surviving count");
    const auto rows = window_rows(layout, cfg.window_tokens(layout));
    const HeadSplit hs = project_heads(x, layout, cfg, params);
    std::vector<Tensor> global_heads, local_heads;
    for (int h = 0; h < cfg.heads; ++h) {
        global_heads.push_back(linear_attention(hs.q[h], hs.k[h], hs.v[h], cfg.linear_stabilize));
        local_heads.push_back(window_attention_rows(hs.q[h], hs.k[h], hs.v[h], rows));
    }
    const Tensor o_global = rms_norm(concat_heads(global_heads), params.gain_global, cfg.rms_eps);
    const Tensor o_local = rms_norm(concat_heads(local_heads), params.gain_local, cfg.rms_eps);
    return gate_fuse(x, o_global, o_local, params.w_g, cfg.heads);
}

Tensor softmax_block_forward(const Tensor& x, const TokenLayout& layout, const AttentionConfig& cfg,
                             const GlgaParams& params) {
    cfg.validate();
    const HeadSplit hs = project_heads(x, layout, cfg, params);
    std::vector<Tensor> heads;
    for (int h = 0; h < cfg.heads; ++h)
        heads.push_back(softmax_attention_reference(hs.q[h], hs.k[h], hs.v[h]));
    return concat_heads(heads);
}

std::uint64_t glga_forward_flops(const TokenLayout& layout, const AttentionConfig& cfg) {
    const std::uint64_t n = layout.active();
    const std::uint64_t d = cfg.d, heads = cfg.heads, dh = cfg.head_dim();
    const std::uint64_t pairs = kernels::window_pair_count(window_rows(layout, cfg.window_tokens(layout)));
    std::uint64_t f = 0;
    f += 3 * flop_cost::matmul(n, d, d);                        // shared projections
    f += heads * 2 * flop_cost::rope(n, dh);                    // RoPE on Q and K per head
    for (std::uint64_t h = 0; h < heads; ++h) {
        f += flop_cost::matmul(dh, n, dh) + flop_cost::matmul(n, dh, dh);  // linear branch
        if (cfg.linear_stabilize)
            f += flop_cost::elementwise_mul(dh * dh) + flop_cost::elementwise_mul(n * dh);
        f += flop_cost::attention_pairs(pairs, dh);             // window branch
    }
    f += 2 * flop_cost::rms_norm(n, d);                         // per-branch norms
    const std::uint64_t gate_cols = cfg.gate_per_head ? 2 * heads : 2;
    f += flop_cost::matmul(n, d, gate_cols);                    // gate logits
    if (gate_cols == 2) {
        f += 2 * flop_cost::elementwise_mul(n * d);
    } else {
        f += heads * 2 * flop_cost::elementwise_mul(n * dh);
    }
    return f;
}

std::uint64_t softmax_block_flops(const TokenLayout& layout, const AttentionConfig& cfg) {
    const std::uint64_t n = layout.active();
    const std::uint64_t d = cfg.d, heads = cfg.heads, dh = cfg.head_dim();
    std::uint64_t f = 0;
    f += 3 * flop_cost::matmul(n, d, d);
    f += heads * 2 * flop_cost::rope(n, dh);
    for (std::uint64_t h = 0; h < heads; ++h) {
        f += flop_cost::matmul(n, dh, n);          // scores
        f += flop_cost::elementwise_mul(n * n);    // 1/sqrt(d) scale
        f += flop_cost::matmul(n, n, dh);          // probs @ V
    }
    return f;
}

}  // namespace eflow
