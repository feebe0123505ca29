#pragma once

// Bidirectional cross-attention exchange between the sign and text streams.
// Produces residuals that the co-encoder feeds back into each stack.

#include <utility>

#include "slu/tensor.hpp"

namespace slu {

struct FusionParams {
    // Per modality: query, value and output projections, all [D, D].
    // Keys reuse the source modality's query projection.
    Tensor sign_wq, sign_wv, sign_wout;
    Tensor text_wq, text_wv, text_wout;
    int heads = 1;
    bool shared_across_layers = true;
};

struct FusionOut {
    Tensor sign_residual;  // text-to-sign stream, shape of the sign input
    Tensor text_residual;  // sign-to-text stream, shape of the text input
};

// Both directions are computed from the same pre-update inputs. Output
// projections start at zero, so a fresh module is an exact no-op.
FusionOut cross_fuse(const Tensor& sign, const Tensor& text, const FusionParams& params);

FusionParams init_fusion_params(int d_model, int heads, Rng& rng);

}  // namespace slu
