#include "slu/model.hpp"

#include <sstream>
#include <stdexcept>

namespace slu {

std::string ModelConfig::describe() const {
    std::ostringstream s;
    s << "d_model=" << d_model << ";heads=" << heads << ";enc_depth=" << enc_depth
      << ";dec_match=" << dec_match_blocks << ";dec_lm=" << dec_lm_blocks << ";ffn=" << ffn_mult
      << ";stgcn_hidden=" << stgcn_hidden << ";part_dim=" << part_dim << ";d_proj=" << d_proj
      << ";max_text_len=" << max_text_len << ";max_frames=" << max_frames
      << ";share_fusion=" << (share_fusion ? 1 : 0) << ";fusion_sets="
      << (share_fusion ? 1 : fusion_layers) << ";center=" << (center_frames ? 1 : 0);
    return s.str();
}

void ModelBundle::add(const std::string& name, const Tensor& t) {
    if (!params_.emplace(name, t).second) {
        throw std::logic_error("bundle: duplicate parameter '" + name + "'");
    }
}

Tensor& ModelBundle::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("bundle: missing parameter '" + name + "'");
    return it->second;
}

const Tensor& ModelBundle::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("bundle: missing parameter '" + name + "'");
    return it->second;
}

std::uint64_t ModelBundle::value_fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix_bytes = [&h](const void* p, std::size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : params_) {
        mix_bytes(name.data(), name.size());
        mix_bytes(t.vec().data(), t.vec().size() * sizeof(double));
    }
    return h;
}

Model::Model(const ModelConfig& config, int vocab_size, std::uint64_t seed)
    : cfg_(config), vocab_size_(vocab_size) {
    if (vocab_size < kNumReserved + 1) throw std::invalid_argument("model: vocabulary too small");
    if (cfg_.fusion_layers < 0 || cfg_.fusion_layers > cfg_.enc_depth) {
        throw std::invalid_argument("model: fusion_layers out of range");
    }
    Rng rng(seed);
    for (int p = 0; p < 4; ++p) {
        frontend[static_cast<std::size_t>(p)] =
            init_stgcn_params(kCoords, cfg_.stgcn_hidden, cfg_.part_dim, rng);
        frontend[static_cast<std::size_t>(p)].center_frames = cfg_.center_frames;
        adjacency[static_cast<std::size_t>(p)] = build_adjacency(static_cast<Part>(p));
    }
    sign_proj = init_linear(4 * cfg_.part_dim, cfg_.d_model, rng);
    sign_cls = Tensor::randn({1, cfg_.d_model}, rng, 0.02, true);
    sign_pos = Tensor::randn({cfg_.max_frames, cfg_.d_model}, rng, 0.02, true);
    sign_enc = init_encoder_stack(cfg_.d_model, cfg_.heads, cfg_.enc_depth, cfg_.ffn_mult, rng);
    text_embed = Tensor::randn({vocab_size, cfg_.d_model}, rng, 0.05, true);
    text_pos = Tensor::randn({cfg_.max_text_len, cfg_.d_model}, rng, 0.02, true);
    text_enc = init_encoder_stack(cfg_.d_model, cfg_.heads, cfg_.enc_depth, cfg_.ffn_mult, rng);
    const int fusion_sets = cfg_.share_fusion ? 1 : std::max(1, cfg_.fusion_layers);
    for (int i = 0; i < fusion_sets; ++i) {
        fusion.push_back(init_fusion_params(cfg_.d_model, cfg_.heads, rng));
    }
    heads = init_projection_heads(cfg_.d_model, cfg_.d_proj, rng);
    temp = Temperature::init(0.07);
    decoder = init_grounded_params(cfg_.d_model, cfg_.heads, cfg_.dec_match_blocks,
                                   cfg_.dec_lm_blocks, cfg_.ffn_mult, rng);
    register_params();
}

namespace {

void reg_linear(ModelBundle& b, const std::string& prefix, const LinearParams& p) {
    b.add(prefix + ".w", p.w);
    b.add(prefix + ".b", p.b);
}

void reg_ln(ModelBundle& b, const std::string& prefix, const LayerNormParams& p) {
    b.add(prefix + ".g", p.gamma);
    b.add(prefix + ".b", p.beta);
}

void reg_mha(ModelBundle& b, const std::string& prefix, const MhaParams& p) {
    reg_ln(b, prefix + ".ln", p.ln);
    reg_linear(b, prefix + ".wq", p.wq);
    reg_linear(b, prefix + ".wk", p.wk);
    reg_linear(b, prefix + ".wv", p.wv);
    reg_linear(b, prefix + ".wo", p.wo);
}

void reg_ffn(ModelBundle& b, const std::string& prefix, const FfnParams& p) {
    reg_ln(b, prefix + ".ln", p.ln);
    reg_linear(b, prefix + ".w1", p.w1);
    reg_linear(b, prefix + ".w2", p.w2);
}

void reg_block(ModelBundle& b, const std::string& prefix, const BlockParams& p) {
    reg_mha(b, prefix + ".self_attn", p.self_attn);
    reg_ffn(b, prefix + ".ffn", p.ffn);
}

void reg_stack(ModelBundle& b, const std::string& prefix, const EncoderStackParams& p) {
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        reg_block(b, prefix + ".l" + std::to_string(i), p.layers[i]);
    }
    reg_ln(b, prefix + ".final_ln", p.final_ln);
}

}  // namespace

void Model::register_params() {
    for (int p = 0; p < 4; ++p) {
        const std::string prefix = std::string("frontend.") + part_name(static_cast<Part>(p));
        const StgcnParams& sp = frontend[static_cast<std::size_t>(p)];
        for (int blk = 0; blk < 2; ++blk) {
            const std::string bp = prefix + ".b" + std::to_string(blk);
            bundle_.add(bp + ".spatial_w", sp.blocks[static_cast<std::size_t>(blk)].spatial_w);
            bundle_.add(bp + ".temporal_k", sp.blocks[static_cast<std::size_t>(blk)].temporal_k);
            bundle_.add(bp + ".bias", sp.blocks[static_cast<std::size_t>(blk)].bias);
        }
        bundle_.add(prefix + ".proj_w", sp.proj_w);
        bundle_.add(prefix + ".proj_b", sp.proj_b);
    }
    reg_linear(bundle_, "sign_proj", sign_proj);
    bundle_.add("sign_cls", sign_cls);
    bundle_.add("sign_pos", sign_pos);
    reg_stack(bundle_, "sign_enc", sign_enc);
    bundle_.add("text_embed", text_embed);
    bundle_.add("text_pos", text_pos);
    reg_stack(bundle_, "text_enc", text_enc);
    for (std::size_t i = 0; i < fusion.size(); ++i) {
        const std::string fp =
            fusion.size() == 1 ? std::string("fusion") : "fusion.l" + std::to_string(i);
        bundle_.add(fp + ".sign.wq", fusion[i].sign_wq);
        bundle_.add(fp + ".sign.wv", fusion[i].sign_wv);
        bundle_.add(fp + ".sign.wout", fusion[i].sign_wout);
        bundle_.add(fp + ".text.wq", fusion[i].text_wq);
        bundle_.add(fp + ".text.wv", fusion[i].text_wv);
        bundle_.add(fp + ".text.wout", fusion[i].text_wout);
    }
    bundle_.add("proj.sign.w", heads.sign_w);
    bundle_.add("proj.text.w", heads.text_w);
    bundle_.add("temp.log_tau", temp.log_tau);
    for (std::size_t i = 0; i < decoder.match_blocks.size(); ++i) {
        const std::string mp = "dec.match" + std::to_string(i);
        reg_mha(bundle_, mp + ".self_attn", decoder.match_blocks[i].self_attn);
        reg_mha(bundle_, mp + ".cross_attn", decoder.match_blocks[i].cross_attn);
        reg_ffn(bundle_, mp + ".ffn", decoder.match_blocks[i].ffn);
    }
    for (std::size_t i = 0; i < decoder.lm_blocks.size(); ++i) {
        reg_block(bundle_, "dec.lm" + std::to_string(i), decoder.lm_blocks[i]);
    }
    reg_ln(bundle_, "dec.match_final_ln", decoder.match_final_ln);
    reg_ln(bundle_, "dec.lm_final_ln", decoder.lm_final_ln);
    reg_linear(bundle_, "dec.match_head", decoder.match_head);
}

Tensor Model::frontend_forward(const SkeletonSequence& seq) const {
    std::array<Tensor, 4> parts = split_parts(seq);
    std::array<Tensor, 4> feats;
    for (int p = 0; p < 4; ++p) {
        feats[static_cast<std::size_t>(p)] =
            stgcn_forward(parts[static_cast<std::size_t>(p)], adjacency[static_cast<std::size_t>(p)],
                          frontend[static_cast<std::size_t>(p)]);
    }
    Tensor x = linear(fuse_parts(feats), sign_proj);
    const int l = x.rows();
    if (l > cfg_.max_frames) throw std::invalid_argument("frontend: sequence exceeds max_frames");
    return add(x, slice_rows(sign_pos, 0, l));
}

CoEncodeOutput Model::encode_pair(const SkeletonSequence& seq, const TokenizedText& text,
                                  int fusion_layers) const {
    Tensor sign_in = frontend_forward(seq);
    Tensor text_in = embed(text, text_embed, text_pos);
    return co_encode(sign_in, text_in, sign_enc, text_enc, sign_cls, fusion, fusion_layers);
}

Tensor Model::encode_sign(const SkeletonSequence& seq) const {
    Tensor s = concat_rows({sign_cls, frontend_forward(seq)});
    return encode(s, sign_enc);
}

Tensor Model::encode_text(const TokenizedText& text) const {
    return encode(embed(text, text_embed, text_pos), text_enc);
}

Tensor Model::match_logit(const std::vector<int>& text_ids, const Tensor& cond_feats) const {
    return match_forward(text_ids, decoder, text_embed, text_pos, cond_feats);
}

Tensor Model::decode_hidden(const std::vector<int>& input_ids, const Tensor* cond, LmMode mode) const {
    return lm_hidden(input_ids, decoder, text_embed, text_pos, cond, mode);
}

Tensor Model::decode_logits(const std::vector<int>& input_ids, const Tensor* cond, LmMode mode) const {
    return lm_forward(input_ids, decoder, text_embed, text_pos, cond, mode);
}

void copy_parameter_values(const ModelBundle& src, ModelBundle& dst) {
    for (const auto& [name, t] : src.map()) {
        Tensor& target = dst.at(name);
        if (target.shape != t.shape) {
            throw std::invalid_argument("copy_parameter_values: shape mismatch for '" + name + "'");
        }
        target.vec() = t.vec();
    }
}

}  // namespace slu
