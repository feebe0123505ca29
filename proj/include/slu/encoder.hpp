#pragma once

// Pre-norm transformer building blocks and the co-executed sign/text encoder
// pair. Fusion residuals enter before each of the last F layers of both
// stacks; F = 0 reduces to two independent encoders.

#include <optional>
#include <vector>

#include "slu/fusion.hpp"
#include "slu/tensor.hpp"

namespace slu {

struct LinearParams {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
};

Tensor linear(const Tensor& x, const LinearParams& p);

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
};

Tensor apply_ln(const Tensor& x, const LayerNormParams& p);

struct MhaParams {
    LayerNormParams ln;  // pre-norm of the query stream
    LinearParams wq, wk, wv, wo;
    int heads = 1;
};

struct FfnParams {
    LayerNormParams ln;
    LinearParams w1, w2;
};

struct BlockParams {
    MhaParams self_attn;
    FfnParams ffn;
};

// Multi-head attention; x_kv enters unnormalised (cross-attention passes
// encoder output which carries its own final norm).
Tensor mha(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p,
           const std::optional<AttnMask>& mask = std::nullopt);

Tensor self_attn_sublayer(const Tensor& x, const MhaParams& p,
                          const std::optional<AttnMask>& mask = std::nullopt);
Tensor cross_attn_sublayer(const Tensor& x, const Tensor& cond, const MhaParams& p);
Tensor ffn_sublayer(const Tensor& x, const FfnParams& p);

Tensor encoder_block(const Tensor& x, const BlockParams& p,
                     const std::optional<AttnMask>& mask = std::nullopt);

struct EncoderStackParams {
    std::vector<BlockParams> layers;
    LayerNormParams final_ln;  // applied only when depth >= 1
    int depth() const { return static_cast<int>(layers.size()); }
};

// Plain stack without fusion; depth 0 is the identity.
Tensor encode(const Tensor& x, const EncoderStackParams& stack);

struct CoEncodeOutput {
    Tensor sign_tokens;  // [Ls+1, D], class token at row 0
    Tensor text_tokens;  // [Tt, D], CLS at row 0
    Tensor s_cls;        // [D]
    Tensor t_cls;        // [D]
};

// Runs both stacks in lockstep. The sign class token is prepended here.
// For the last F layers the fused residuals are added to each stream before
// the layer; both residuals are computed from the same pre-update features.
// `fusion` holds one parameter set when shared across layers, else one per
// fused layer (bottom fused layer first).
CoEncodeOutput co_encode(const Tensor& sign_in, const Tensor& text_in,
                         const EncoderStackParams& sign_stack, const EncoderStackParams& text_stack,
                         const Tensor& sign_class_token, const std::vector<FusionParams>& fusion,
                         int fusion_layers);

LinearParams init_linear(int in, int out, Rng& rng);
LayerNormParams init_ln(int dim);
BlockParams init_block(int d_model, int heads, int ffn_mult, Rng& rng);
EncoderStackParams init_encoder_stack(int d_model, int heads, int depth, int ffn_mult, Rng& rng);

}  // namespace slu
