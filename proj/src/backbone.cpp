#include "eflow/backbone.hpp"

#include <cmath>

namespace eflow {

void BackboneConfig::validate() const {
    attn.validate();
    if (n_enc < 1 || n_mid < 0 || n_dec < 1)
        throw ConfigError("BackboneConfig: need n_enc >= 1, n_mid >= 0, n_dec >= 1");
    if (d_in < 1 || n_classes < 1 || ffn_mult < 1 || freq_dim < 2 || freq_dim % 2 != 0)
        throw ConfigError("BackboneConfig: bad embedding dims");
    if (tokens_t < 1 || tokens_h < 1 || tokens_w < 1)
        throw ConfigError("BackboneConfig: bad token grid");
}

namespace {

Tensor param_randn(const Shape& s, Rng& rng, double std = 0.02) {
    return Tensor::randn(s, rng, std).set_requires_grad(true);
}

Tensor param_zeros(const Shape& s) { return Tensor::zeros(s).set_requires_grad(true); }

}  // namespace

BackboneParams BackboneParams::init(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    const int d = cfg.attn.d, ffn = cfg.ffn_dim();
    BackboneParams p;
    p.w_in = param_randn({cfg.d_in, d}, rng);
    p.b_in = param_zeros({d});
    p.mask_token = param_zeros({d});
    p.cond.t_w1 = param_randn({cfg.freq_dim, d}, rng);
    p.cond.t_b1 = param_zeros({d});
    p.cond.t_w2 = param_randn({d, d}, rng);
    p.cond.t_b2 = param_zeros({d});
    p.cond.s_w1 = param_randn({cfg.freq_dim, d}, rng);
    p.cond.s_b1 = param_zeros({d});
    p.cond.s_w2 = param_randn({d, d}, rng);
    p.cond.s_b2 = param_zeros({d});
    p.cond.w_w1 = param_randn({cfg.freq_dim, d}, rng);
    p.cond.w_b1 = param_zeros({d});
    p.cond.w_w2 = param_randn({d, d}, rng);
    p.cond.w_b2 = param_zeros({d});
    p.cond.class_table = param_randn({cfg.n_classes + 1, d}, rng);
    for (int b = 0; b < cfg.total_blocks(); ++b) {
        BlockParams blk;
        blk.attn = GlgaParams::init(cfg.attn, rng);
        blk.w_o = param_randn({d, d}, rng);
        blk.w_ff1 = param_randn({d, ffn}, rng);
        blk.b_ff1 = param_zeros({ffn});
        blk.w_ff2 = param_randn({ffn, d}, rng);
        blk.b_ff2 = param_zeros({d});
        blk.w_mod = param_zeros({d, 6 * d});  // adaLN-zero: blocks start as identity
        blk.b_mod = param_zeros({6 * d});
        p.blocks.push_back(std::move(blk));
    }
    p.final_w_mod = param_zeros({d, 2 * d});
    p.final_b_mod = param_zeros({2 * d});
    p.w_out = param_zeros({d, cfg.d_in});
    p.b_out = param_zeros({cfg.d_in});
    return p;
}

BackboneParams BackboneParams::clone_detached() const {
    BackboneParams c = *this;
    auto det = [](Tensor& t) { t = t.detach(); };
    det(c.w_in);
    det(c.b_in);
    det(c.mask_token);
    for (Tensor* t : {&c.cond.t_w1, &c.cond.t_b1, &c.cond.t_w2, &c.cond.t_b2, &c.cond.s_w1,
                      &c.cond.s_b1, &c.cond.s_w2, &c.cond.s_b2, &c.cond.w_w1, &c.cond.w_b1,
                      &c.cond.w_w2, &c.cond.w_b2, &c.cond.class_table})
        det(*t);
    for (auto& blk : c.blocks) {
        det(blk.attn.w_q);
        det(blk.attn.w_k);
        det(blk.attn.w_v);
        det(blk.attn.w_g);
        det(blk.attn.gain_global);
        det(blk.attn.gain_local);
        det(blk.w_o);
        det(blk.w_ff1);
        det(blk.b_ff1);
        det(blk.w_ff2);
        det(blk.b_ff2);
        det(blk.w_mod);
        det(blk.b_mod);
    }
    det(c.final_w_mod);
    det(c.final_b_mod);
    det(c.w_out);
    det(c.b_out);
    return c;
}

void visit_params(const BackboneConfig& cfg, BackboneParams& p,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("w_in", p.w_in);
    fn("b_in", p.b_in);
    fn("mask_token", p.mask_token);
    fn("cond.t.w1", p.cond.t_w1);
    fn("cond.t.b1", p.cond.t_b1);
    fn("cond.t.w2", p.cond.t_w2);
    fn("cond.t.b2", p.cond.t_b2);
    fn("cond.s.w1", p.cond.s_w1);
    fn("cond.s.b1", p.cond.s_b1);
    fn("cond.s.w2", p.cond.s_w2);
    fn("cond.s.b2", p.cond.s_b2);
    fn("cond.w.w1", p.cond.w_w1);
    fn("cond.w.b1", p.cond.w_b1);
    fn("cond.w.w2", p.cond.w_w2);
    fn("cond.w.b2", p.cond.w_b2);
    fn("cond.class_table", p.cond.class_table);
    char name[64];
    for (int b = 0; b < cfg.total_blocks(); ++b) {
        auto& blk = p.blocks[b];
        auto item = [&](const char* suffix, Tensor& t) {
            std::snprintf(name, sizeof(name), "block%02d.%s", b, suffix);
            fn(name, t);
        };
        item("attn.w_q", blk.attn.w_q);
        item("attn.w_k", blk.attn.w_k);
        item("attn.w_v", blk.attn.w_v);
        item("attn.w_g", blk.attn.w_g);
        item("attn.gain_global", blk.attn.gain_global);
        item("attn.gain_local", blk.attn.gain_local);
        item("w_o", blk.w_o);
        item("ff.w1", blk.w_ff1);
        item("ff.b1", blk.b_ff1);
        item("ff.w2", blk.w_ff2);
        item("ff.b2", blk.b_ff2);
        item("mod.w", blk.w_mod);
        item("mod.b", blk.b_mod);
    }
    fn("final.mod.w", p.final_w_mod);
    fn("final.mod.b", p.final_b_mod);
    fn("w_out", p.w_out);
    fn("b_out", p.b_out);
}

int class_row(const BackboneConfig& cfg, int cls) {
    if (cls == -1) return cfg.n_classes;
    if (cls < 0 || cls > cfg.n_classes) throw UsageError("class id out of range");
    return cls;
}

namespace {

Tensor sinusoidal_features(double x, int dim, double scale) {
    const int half = dim / 2;
    std::vector<double> v(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        v[i] = std::cos(scale * x * freq);
        v[half + i] = std::sin(scale * x * freq);
    }
    return Tensor::from({1, dim}, std::move(v));
}

Tensor cond_mlp(const Tensor& feat, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                const Tensor& b2) {
    return add_rowvec(matmul(silu(add_rowvec(matmul(feat, w1), b1)), w2), b2);
}

Tensor embed_condition(const BackboneConfig& cfg, const BackboneParams& p, double t, double s,
                       double w, int cls) {
    const Tensor e_t = cond_mlp(sinusoidal_features(t, cfg.freq_dim, 1000.0), p.cond.t_w1,
                                p.cond.t_b1, p.cond.t_w2, p.cond.t_b2);
    const Tensor e_s = cond_mlp(sinusoidal_features(s, cfg.freq_dim, 1000.0), p.cond.s_w1,
                                p.cond.s_b1, p.cond.s_w2, p.cond.s_b2);
    const Tensor e_w = cond_mlp(sinusoidal_features(w, cfg.freq_dim, 100.0), p.cond.w_w1,
                                p.cond.w_b1, p.cond.w_w2, p.cond.w_b2);
    const Tensor e_c = gather_rows(p.cond.class_table, {class_row(cfg, cls)});
    return add(add(e_t, e_s), add(e_w, e_c));
}

Tensor modulate(const Tensor& h, const Tensor& shift, const Tensor& scl) {
    return add_rowvec(add(h, mul_rowvec(h, scl)), shift);
}

Tensor block_forward(const BackboneConfig& cfg, const BlockParams& blk, const Tensor& x,
                     const TokenLayout& layout, const Tensor& cond, const Tensor& unit_gain,
                     bool use_softmax) {
    const int d = cfg.attn.d;
    const Tensor mod = add_rowvec(matmul(silu(cond), blk.w_mod), blk.b_mod);
    const Tensor shift1 = slice_cols(mod, 0, d), scale1 = slice_cols(mod, d, d),
                 gate1 = slice_cols(mod, 2 * d, d), shift2 = slice_cols(mod, 3 * d, d),
                 scale2 = slice_cols(mod, 4 * d, d), gate2 = slice_cols(mod, 5 * d, d);

    Tensor h = modulate(rms_norm(x, unit_gain, cfg.attn.rms_eps), shift1, scale1);
    Tensor attn = use_softmax ? softmax_block_forward(h, layout, cfg.attn, blk.attn)
                              : glga_forward(h, layout, cfg.attn, blk.attn);
    Tensor x1 = add(x, mul_rowvec(matmul(attn, blk.w_o), gate1));

    Tensor h2 = modulate(rms_norm(x1, unit_gain, cfg.attn.rms_eps), shift2, scale2);
    Tensor ff = add_rowvec(
        matmul(silu(add_rowvec(matmul(h2, blk.w_ff1), blk.b_ff1)), blk.w_ff2), blk.b_ff2);
    return add(x1, mul_rowvec(ff, gate2));
}

}  // namespace

Tensor sparse_dense_fuse(const Tensor& dense_enc, const Tensor& sparse_out, const DropPlan& plan,
                         const Tensor& mask_token) {
    if (sparse_out.rows() != plan.kept_count())
        throw ShapeError("sparse_dense_fuse: sparse rows != kept indices");
    const int n = dense_enc.rows();
    const Tensor lifted = plan.kept_count() == n
                              ? sparse_out
                              : scatter_rows_with_fill(sparse_out, plan.kept, mask_token, n);
    return add(lifted, dense_enc);
}

Tensor backbone_F(const BackboneConfig& cfg, const BackboneParams& p, const Tensor& x_tokens,
                  double t, double s, int cls, double w, Path path, const DropPlan* plan,
                  const ForwardDebug* dbg) {
    cfg.validate();
    const TokenLayout dense = cfg.dense_layout();
    const int n = dense.total(), d = cfg.attn.d;
    if (x_tokens.rows() != n || x_tokens.cols() != cfg.d_in)
        throw ShapeError("backbone_F: input grid mismatch");
    if (t < 0.0 || t > 1.0 || s < 0.0 || s > 1.0) throw UsageError("backbone_F: times must be in [0,1]");

    const Tensor unit_gain = Tensor::full({d}, 1.0);
    const Tensor cond = embed_condition(cfg, p, t, s, w, cls);
    Tensor h = add_rowvec(matmul(x_tokens, p.w_in), p.b_in);

    int g = 0;
    for (int i = 0; i < cfg.n_enc; ++i, ++g)
        h = block_forward(cfg, p.blocks[g], h, dense, cond, unit_gain, cfg.block_uses_softmax(g));
    const Tensor enc_out = h;

    Tensor fused;
    if (path == Path::weak) {
        // middle replaced by identity; runs dense, no dropping
        g += cfg.n_mid;
        fused = add(enc_out, enc_out);
    } else {
        const bool dropping = plan != nullptr && plan->kept_count() < n;
        Tensor hs = dropping ? gather_rows(enc_out, plan->kept) : enc_out;
        TokenLayout mid_layout =
            dropping ? TokenLayout::with_surviving(dense.t_frames, dense.h, dense.w, plan->kept)
                     : dense;
        for (int i = 0; i < cfg.n_mid; ++i, ++g)
            hs = block_forward(cfg, p.blocks[g], hs, mid_layout, cond, unit_gain,
                               cfg.block_uses_softmax(g));
        if (dbg && dbg->detach_sparse_branch) hs = hs.detach();
        Tensor lifted = dropping ? scatter_rows_with_fill(hs, plan->kept, p.mask_token, n) : hs;
        Tensor residual = (dbg && dbg->detach_long_residual) ? enc_out.detach() : enc_out;
        fused = add(lifted, residual);
    }

    for (int i = 0; i < cfg.n_dec; ++i, ++g)
        fused = block_forward(cfg, p.blocks[g], fused, dense, cond, unit_gain,
                              cfg.block_uses_softmax(g));

    const Tensor final_mod = add_rowvec(matmul(silu(cond), p.final_w_mod), p.final_b_mod);
    const Tensor out_h = modulate(rms_norm(fused, unit_gain, cfg.attn.rms_eps),
                                  slice_cols(final_mod, 0, d), slice_cols(final_mod, d, d));
    return add_rowvec(matmul(out_h, p.w_out), p.b_out);
}

Tensor backbone_f(const BackboneConfig& cfg, const BackboneParams& p, const Tensor& x_tokens,
                  double t, double s, int cls, double w, Path path, const DropPlan* plan) {
    if (s == t) return x_tokens;  // boundary condition, bitwise
    const Tensor F = backbone_F(cfg, p, x_tokens, t, s, cls, w, path, plan);
    return add(x_tokens, scale(F, s - t));
}

std::uint64_t backbone_F_flops(const BackboneConfig& cfg, Path path, int n_mid_active) {
    const std::uint64_t n = cfg.n_tokens(), d = cfg.attn.d, ffn = cfg.ffn_dim(),
                        freq = cfg.freq_dim, din = cfg.d_in;
    std::uint64_t f = 0;
    // condition embedding: three sinusoidal MLPs
    f += 3 * (flop_cost::matmul(1, freq, d) + flop_cost::elementwise_mul(d) +
              flop_cost::matmul(1, d, d));
    // input projection
    f += flop_cost::matmul(n, din, d);

    TokenLayout dense = cfg.dense_layout();
    TokenLayout mid = dense;
    if (n_mid_active < dense.total()) {
        std::vector<int> kept(n_mid_active);
        for (int i = 0; i < n_mid_active; ++i) kept[i] = i;
        mid = TokenLayout::with_surviving(dense.t_frames, dense.h, dense.w, kept);
    }

    auto block_cost = [&](const TokenLayout& layout, bool use_softmax) {
        const std::uint64_t nt = layout.active();
        std::uint64_t c = 0;
        c += flop_cost::elementwise_mul(d);           // silu(cond)
        c += flop_cost::matmul(1, d, 6 * d);          // modulation projection
        c += flop_cost::rms_norm(nt, d);              // pre-attn norm
        c += flop_cost::elementwise_mul(nt * d);      // modulate scale
        c += use_softmax ? softmax_block_flops(layout, cfg.attn)
                         : glga_forward_flops(layout, cfg.attn);
        c += flop_cost::matmul(nt, d, d);             // output projection
        c += flop_cost::elementwise_mul(nt * d);      // gate1
        c += flop_cost::rms_norm(nt, d);              // pre-ffn norm
        c += flop_cost::elementwise_mul(nt * d);      // modulate scale
        c += flop_cost::matmul(nt, d, ffn);
        c += flop_cost::elementwise_mul(nt * ffn);    // silu
        c += flop_cost::matmul(nt, ffn, d);
        c += flop_cost::elementwise_mul(nt * d);      // gate2
        return c;
    };

    int g = 0;
    for (int i = 0; i < cfg.n_enc; ++i, ++g) f += block_cost(dense, cfg.block_uses_softmax(g));
    if (path == Path::weak) {
        g += cfg.n_mid;
    } else {
        for (int i = 0; i < cfg.n_mid; ++i, ++g) f += block_cost(mid, cfg.block_uses_softmax(g));
    }
    for (int i = 0; i < cfg.n_dec; ++i, ++g) f += block_cost(dense, cfg.block_uses_softmax(g));

    // final norm + modulation + output head
    f += flop_cost::elementwise_mul(d) + flop_cost::matmul(1, d, 2 * d);
    f += flop_cost::rms_norm(n, d) + flop_cost::elementwise_mul(n * d);
    f += flop_cost::matmul(n, d, din);
    return f;
}

}  // namespace eflow
