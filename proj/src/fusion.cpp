#include "slu/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace slu {

namespace {

Tensor heads_attend(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    const int d = q.cols();
    if (d % heads != 0) throw std::invalid_argument("cross_fuse: width not divisible by heads");
    const int dh = d / heads;
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        outs.push_back(attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh),
                                 slice_cols(v, h * dh, dh)));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace

FusionOut cross_fuse(const Tensor& sign, const Tensor& text, const FusionParams& p) {
    if (sign.cols() != text.cols()) throw std::invalid_argument("cross_fuse: width mismatch");
    // text -> sign: sign rows query the text stream
    Tensor qs = matmul(sign, p.sign_wq);
    Tensor kt = matmul(text, p.text_wq);
    Tensor vt = matmul(text, p.text_wv);
    Tensor sign_res = matmul(heads_attend(qs, kt, vt, p.heads), p.sign_wout);
    // sign -> text: text rows query the sign stream
    Tensor qt = matmul(text, p.text_wq);
    Tensor ks = matmul(sign, p.sign_wq);
    Tensor vs = matmul(sign, p.sign_wv);
    Tensor text_res = matmul(heads_attend(qt, ks, vs, p.heads), p.text_wout);
    return FusionOut{sign_res, text_res};
}

FusionParams init_fusion_params(int d_model, int heads, Rng& rng) {
    auto proj = [&]() {
        const double bound = std::sqrt(3.0 / d_model);
        return Tensor::uniform({d_model, d_model}, rng, -bound, bound, true);
    };
    FusionParams p;
    p.heads = heads;
    p.sign_wq = proj();
    p.sign_wv = proj();
    p.sign_wout = Tensor::zeros({d_model, d_model}, true);
    p.text_wq = proj();
    p.text_wv = proj();
    p.text_wout = Tensor::zeros({d_model, d_model}, true);
    return p;
}

}  // namespace slu
