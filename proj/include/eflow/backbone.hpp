#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eflow/attention.hpp"
#include "eflow/layout.hpp"
#include "eflow/tensor.hpp"

namespace eflow {

enum class Path { full, weak };
enum class AttentionKind { glga, softmax };

struct BackboneConfig {
    int n_enc = 1;
    int n_mid = 4;
    int n_dec = 1;
    int d_in = 2;
    int n_classes = 8;
    int ffn_mult = 4;
    int freq_dim = 32;
    int tokens_t = 1, tokens_h = 1, tokens_w = 1;
    AttentionKind attention = AttentionKind::glga;
    AttentionConfig attn;

    int total_blocks() const { return n_enc + n_mid + n_dec; }
    int ffn_dim() const { return ffn_mult * attn.d; }
    int n_tokens() const { return tokens_t * tokens_h * tokens_w; }
    TokenLayout dense_layout() const { return TokenLayout::dense(tokens_t, tokens_h, tokens_w); }
    // every interleave_K-th block runs full softmax attention
    bool block_uses_softmax(int idx) const {
        return attention == AttentionKind::softmax || (idx + 1) % attn.interleave_K == 0;
    }
    void validate() const;
};

struct BlockParams {
    GlgaParams attn;
    Tensor w_o;
    Tensor w_ff1, b_ff1, w_ff2, b_ff2;
    Tensor w_mod, b_mod;  // adaLN projection to (shift, scale, gate) x 2, zero-init
};

struct CondParams {
    Tensor t_w1, t_b1, t_w2, t_b2;
    Tensor s_w1, s_b1, s_w2, s_b2;
    Tensor w_w1, w_b1, w_w2, w_b2;
    Tensor class_table;  // (n_classes + 1) x d; last row is the null class
};

struct BackboneParams {
    Tensor w_in, b_in;
    Tensor mask_token;
    CondParams cond;
    std::vector<BlockParams> blocks;
    Tensor final_w_mod, final_b_mod;  // final-layer (shift, scale)
    Tensor w_out, b_out;              // zero-init so F == 0 at start

    static BackboneParams init(const BackboneConfig& cfg, Rng& rng);
    BackboneParams clone_detached() const;  // EMA shadow: same shapes, no grads
};

// deterministic, checkpoint-stable parameter order
void visit_params(const BackboneConfig& cfg, BackboneParams& p,
                  const std::function<void(const std::string&, Tensor&)>& fn);

// null class (-1 or n_classes) selects the learned null embedding
int class_row(const BackboneConfig& cfg, int cls);

// test-only taps used to assert gradient flow through both fusion paths
struct ForwardDebug {
    bool detach_long_residual = false;
    bool detach_sparse_branch = false;
};

// F_theta: encoder dense -> (optional drop) middle sparse, or identity on the
// weak path -> mask-fill scatter + long residual -> decoder dense.
Tensor backbone_F(const BackboneConfig& cfg, const BackboneParams& p, const Tensor& x_tokens,
                  double t, double s, int cls, double w, Path path, const DropPlan* plan,
                  const ForwardDebug* dbg = nullptr);

// Euler-style solution map: f = x + (s - t) F; at s == t the product is
// forced to a true zero by returning x itself.
Tensor backbone_f(const BackboneConfig& cfg, const BackboneParams& p, const Tensor& x_tokens,
                  double t, double s, int cls, double w, Path path, const DropPlan* plan);

// lifts sparse middle output back to N rows (mask fill) and adds the dense
// encoder features
Tensor sparse_dense_fuse(const Tensor& dense_enc, const Tensor& sparse_out, const DropPlan& plan,
                         const Tensor& mask_token);

// closed-form multiply-accumulate count for one F forward, mirroring the ops
std::uint64_t backbone_F_flops(const BackboneConfig& cfg, Path path, const DropPlan* plan);

}  // namespace eflow
