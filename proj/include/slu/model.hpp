#pragma once

// Named-parameter store and the assembled model: skeleton frontend, twin
// encoders with fusion, projection heads, temperature, and the grounded text
// paths. Typed views share storage with the bundle map, so in-place updates
// through either side stay consistent.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slu/cluster.hpp"
#include "slu/contrastive.hpp"
#include "slu/encoder.hpp"
#include "slu/fusion.hpp"
#include "slu/grounded.hpp"
#include "slu/skeleton.hpp"
#include "slu/text.hpp"

namespace slu {

struct ModelConfig {
    int d_model = 128;
    int heads = 4;
    int enc_depth = 6;
    int dec_match_blocks = 2;
    int dec_lm_blocks = 2;
    int ffn_mult = 4;
    int stgcn_hidden = 64;
    int part_dim = 64;  // per-part feature width D; the sign input is 4D wide
    int d_proj = 64;
    int max_text_len = 64;
    int max_frames = 256;
    int fusion_layers = 2;
    bool share_fusion = true;
    bool center_frames = true;

    // Architecture fingerprint; checkpoints refuse to load across mismatches.
    std::string describe() const;
};

class ModelBundle {
public:
    void add(const std::string& name, const Tensor& t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }
    std::size_t size() const { return params_.size(); }
    const std::map<std::string, Tensor>& map() const { return params_; }
    std::map<std::string, Tensor>& map() { return params_; }
    std::uint64_t value_fingerprint() const;

private:
    std::map<std::string, Tensor> params_;
};

class Model {
public:
    Model(const ModelConfig& config, int vocab_size, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    int vocab_size() const { return vocab_size_; }
    ModelBundle& bundle() { return bundle_; }
    const ModelBundle& bundle() const { return bundle_; }

    // [L, 69, 2] -> [L, D_model] with positions added.
    Tensor frontend_forward(const SkeletonSequence& seq) const;
    // Both encoders in lockstep with fusion at the last F layers.
    CoEncodeOutput encode_pair(const SkeletonSequence& seq, const TokenizedText& text,
                               int fusion_layers) const;
    // Sign stack alone (class token prepended), [Ls+1, D_model].
    Tensor encode_sign(const SkeletonSequence& seq) const;
    // Text stack alone, [Tt, D_model].
    Tensor encode_text(const TokenizedText& text) const;

    Tensor match_logit(const std::vector<int>& text_ids, const Tensor& cond_feats) const;
    Tensor decode_hidden(const std::vector<int>& input_ids, const Tensor* cond, LmMode mode) const;
    Tensor decode_logits(const std::vector<int>& input_ids, const Tensor* cond, LmMode mode) const;

    std::array<StgcnParams, 4> frontend;
    std::array<PartAdjacency, 4> adjacency;
    LinearParams sign_proj;
    Tensor sign_cls;   // [1, D_model]
    Tensor sign_pos;   // [max_frames, D_model]
    EncoderStackParams sign_enc;
    Tensor text_embed;  // [V, D_model]; also the tied LM head
    Tensor text_pos;    // [max_text_len, D_model]
    EncoderStackParams text_enc;
    std::vector<FusionParams> fusion;  // size 1 when shared, else fusion_layers
    ProjectionHeads heads;
    Temperature temp;
    GroundedTextParams decoder;

private:
    void register_params();

    ModelConfig cfg_;
    int vocab_size_ = 0;
    ModelBundle bundle_;
};

// Copies values of `src` into same-named parameters of `dst` (shapes must
// match). Missing names throw.
void copy_parameter_values(const ModelBundle& src, ModelBundle& dst);

}  // namespace slu
