#pragma once

#include <cstdint>

#include "eflow/layout.hpp"
#include "eflow/tensor.hpp"

namespace eflow {

struct AttentionConfig {
    int d = 32;
    int heads = 4;
    int m = 4;              // window span in latent frames; |W| = m * h * w
    double rope_base = 10000.0;
    double rms_eps = 1e-6;
    int interleave_K = 8;   // every K-th block runs full softmax attention
    bool gate_per_head = true;
    bool linear_stabilize = false;  // rescale the KV summary by 1/N' for f32 runs

    int head_dim() const {
        if (d % heads != 0) throw ConfigError("AttentionConfig: d must be divisible by heads");
        return d / heads;
    }
    int window_tokens(const TokenLayout& l) const { return m * l.h * l.w; }
    void validate() const {
        head_dim();
        if (m < 1) throw ConfigError("AttentionConfig: m must be >= 1");
        if (interleave_K < 1) throw ConfigError("AttentionConfig: interleave_K must be >= 1");
    }
};

// Shared Q/K/V projections, the gate projection, and per-branch RMS gains.
struct GlgaParams {
    Tensor w_q, w_k, w_v;     // d x d
    Tensor w_g;               // d x 2  (or d x 2*heads with per-head gates)
    Tensor gain_global;       // d
    Tensor gain_local;        // d

    static GlgaParams init(const AttentionConfig& cfg, Rng& rng);
};

// Eq-level building blocks. Q, K, V are per-head slices with RoPE already
// applied to Q and K.
Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool stabilize = false);
Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v, const TokenLayout& layout,
                        const AttentionConfig& cfg);
Tensor window_attention_rows(const Tensor& q, const Tensor& k, const Tensor& v,
                             const std::vector<std::vector<int>>& rows);
Tensor softmax_attention_reference(const Tensor& q, const Tensor& k, const Tensor& v);

// O_i = g_global,i * O_global,i + g_local,i * O_local,i with
// [g_global, g_local] = sigmoid(X W_g). Branch outputs are expected to be
// RMS-normalized already.
Tensor gate_fuse(const Tensor& x, const Tensor& o_global, const Tensor& o_local, const Tensor& w_g,
                 int heads = 1);

// Full block: shared projections -> per-head RoPE -> {linear, window}
// branches -> per-branch RMS norm -> input-aware gated fusion.
Tensor glga_forward(const Tensor& x, const TokenLayout& layout, const AttentionConfig& cfg,
                    const GlgaParams& params);

// Interleaved full-attention block body (multi-head softmax with RoPE),
// sharing the GLGA projection weights.
Tensor softmax_block_forward(const Tensor& x, const TokenLayout& layout, const AttentionConfig& cfg,
                             const GlgaParams& params);

// Closed-form multiply-accumulate counts mirroring the forwards above.
std::uint64_t glga_forward_flops(const TokenLayout& layout, const AttentionConfig& cfg);
std::uint64_t softmax_block_flops(const TokenLayout& layout, const AttentionConfig& cfg);

}  // namespace eflow
