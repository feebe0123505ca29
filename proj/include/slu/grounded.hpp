#pragma once

// Dual-path grounded text encoder: a matching path whose blocks cross-attend
// to conditioning features and end in a binary match head, and a language
// modelling path of causal blocks whose output head is weight-tied to the
// text embedding table. Fine-tuning interleaves both paths into a
// sign-conditioned decoder.

#include <cstdint>
#include <vector>

#include "slu/encoder.hpp"
#include "slu/tensor.hpp"

namespace slu {

struct CrossBlockParams {
    MhaParams self_attn;
    MhaParams cross_attn;
    FfnParams ffn;
};

struct GroundedTextParams {
    std::vector<CrossBlockParams> match_blocks;  // M >= 1
    std::vector<BlockParams> lm_blocks;          // N >= 1
    LayerNormParams match_final_ln;
    LayerNormParams lm_final_ln;
    LinearParams match_head;  // D_model -> 1
};

// Match path: ids must start with the task token; self-attention is
// bidirectional, cross-attention keys/values come from cond_feats, and the
// head reads the task token's final state. Returns a scalar logit.
Tensor match_forward(const std::vector<int>& ids, const GroundedTextParams& p,
                     const Tensor& embed_table, const Tensor& pos_table, const Tensor& cond_feats);

enum class LmMode { Pretrain, Finetune };

// Pretrain: causal LM blocks only, text-only. Finetune: match blocks (causal
// self-attention, cross-attention to cond_feats) interleaved with LM blocks.
Tensor lm_hidden(const std::vector<int>& input_ids, const GroundedTextParams& p,
                 const Tensor& embed_table, const Tensor& pos_table, const Tensor* cond_feats,
                 LmMode mode);

// Tied output head: logits = hidden * table^T.
Tensor lm_logits_from_hidden(const Tensor& hidden, const Tensor& embed_table);

Tensor lm_forward(const std::vector<int>& input_ids, const GroundedTextParams& p,
                  const Tensor& embed_table, const Tensor& pos_table, const Tensor* cond_feats,
                  LmMode mode);

// Mean token cross-entropy over non-PAD target positions.
Tensor lm_loss(const Tensor& logits, const std::vector<int>& targets);

// Mean binary cross-entropy of logits [N] against 0/1 labels.
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& labels);

struct MatchExample {
    int sign_index;
    int text_index;
    double label;  // 1 = matching pair, 0 = mismatch
};

// B positives plus one uniformly drawn in-batch mismatch per sample,
// deterministic under the seed.
std::vector<MatchExample> sample_negatives(int batch_size, std::uint64_t seed);

// (1 - beta) * match + beta * lm; the endpoints return the single loss
// unchanged.
Tensor grounded_loss(const Tensor& match_loss, const Tensor& lm_loss_value, double beta);

GroundedTextParams init_grounded_params(int d_model, int heads, int match_blocks, int lm_blocks,
                                        int ffn_mult, Rng& rng);

}  // namespace slu
