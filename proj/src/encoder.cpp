#include "slu/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace slu {

Tensor linear(const Tensor& x, const LinearParams& p) { return add_channels(matmul(x, p.w), p.b); }

Tensor apply_ln(const Tensor& x, const LayerNormParams& p) { return layer_norm(x, p.gamma, p.beta); }

Tensor mha(const Tensor& x_q, const Tensor& x_kv, const MhaParams& p,
           const std::optional<AttnMask>& mask) {
    Tensor q = linear(x_q, p.wq);
    Tensor k = linear(x_kv, p.wk);
    Tensor v = linear(x_kv, p.wv);
    const int d = q.cols();
    if (d % p.heads != 0) throw std::invalid_argument("mha: width not divisible by heads");
    const int dh = d / p.heads;
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
        outs.push_back(attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh),
                                 slice_cols(v, h * dh, dh), mask));
    }
    return linear(p.heads == 1 ? outs[0] : concat_cols(outs), p.wo);
}

Tensor self_attn_sublayer(const Tensor& x, const MhaParams& p, const std::optional<AttnMask>& mask) {
    Tensor h = apply_ln(x, p.ln);
    return add(x, mha(h, h, p, mask));
}

Tensor cross_attn_sublayer(const Tensor& x, const Tensor& cond, const MhaParams& p) {
    return add(x, mha(apply_ln(x, p.ln), cond, p));
}

Tensor ffn_sublayer(const Tensor& x, const FfnParams& p) {
    return add(x, linear(gelu(linear(apply_ln(x, p.ln), p.w1)), p.w2));
}

Tensor encoder_block(const Tensor& x, const BlockParams& p, const std::optional<AttnMask>& mask) {
    return ffn_sublayer(self_attn_sublayer(x, p.self_attn, mask), p.ffn);
}

Tensor encode(const Tensor& x, const EncoderStackParams& stack) {
    Tensor h = x;
    for (const BlockParams& b : stack.layers) h = encoder_block(h, b);
    return stack.depth() > 0 ? apply_ln(h, stack.final_ln) : h;
}

CoEncodeOutput co_encode(const Tensor& sign_in, const Tensor& text_in,
                         const EncoderStackParams& sign_stack, const EncoderStackParams& text_stack,
                         const Tensor& sign_class_token, const std::vector<FusionParams>& fusion,
                         int fusion_layers) {
    const int depth = sign_stack.depth();
    if (text_stack.depth() != depth) throw std::invalid_argument("co_encode: stack depths differ");
    if (fusion_layers < 0 || fusion_layers > depth) {
        throw std::invalid_argument("co_encode: fusion layer count exceeds depth");
    }
    if (fusion_layers > 0 && fusion.size() != 1 &&
        fusion.size() != static_cast<std::size_t>(fusion_layers)) {
        throw std::invalid_argument("co_encode: fusion parameter sets must be 1 or F");
    }
    Tensor s = concat_rows({sign_class_token, sign_in});
    Tensor t = text_in;
    for (int i = 0; i < depth; ++i) {
        if (i >= depth - fusion_layers) {
            const std::size_t fi =
                fusion.size() == 1 ? 0 : static_cast<std::size_t>(i - (depth - fusion_layers));
            FusionOut f = cross_fuse(s, t, fusion[fi]);
            s = add(s, f.sign_residual);
            t = add(t, f.text_residual);
        }
        s = encoder_block(s, sign_stack.layers[static_cast<std::size_t>(i)]);
        t = encoder_block(t, text_stack.layers[static_cast<std::size_t>(i)]);
    }
    if (depth > 0) {
        s = apply_ln(s, sign_stack.final_ln);
        t = apply_ln(t, text_stack.final_ln);
    }
    CoEncodeOutput out;
    out.sign_tokens = s;
    out.text_tokens = t;
    out.s_cls = reshape(slice_rows(s, 0, 1), {s.cols()});
    out.t_cls = reshape(slice_rows(t, 0, 1), {t.cols()});
    return out;
}

LinearParams init_linear(int in, int out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (in + out));
    return LinearParams{Tensor::uniform({in, out}, rng, -bound, bound, true),
                        Tensor::zeros({out}, true)};
}

LayerNormParams init_ln(int dim) {
    return LayerNormParams{Tensor::ones({dim}, true), Tensor::zeros({dim}, true)};
}

BlockParams init_block(int d_model, int heads, int ffn_mult, Rng& rng) {
    BlockParams b;
    b.self_attn.ln = init_ln(d_model);
    b.self_attn.wq = init_linear(d_model, d_model, rng);
    b.self_attn.wk = init_linear(d_model, d_model, rng);
    b.self_attn.wv = init_linear(d_model, d_model, rng);
    b.self_attn.wo = init_linear(d_model, d_model, rng);
    b.self_attn.heads = heads;
    b.ffn.ln = init_ln(d_model);
    b.ffn.w1 = init_linear(d_model, d_model * ffn_mult, rng);
    b.ffn.w2 = init_linear(d_model * ffn_mult, d_model, rng);
    return b;
}

EncoderStackParams init_encoder_stack(int d_model, int heads, int depth, int ffn_mult, Rng& rng) {
    EncoderStackParams s;
    for (int i = 0; i < depth; ++i) s.layers.push_back(init_block(d_model, heads, ffn_mult, rng));
    s.final_ln = init_ln(d_model);
    return s;
}

}  // namespace slu
