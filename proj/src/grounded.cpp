#include "slu/grounded.hpp"

#include <stdexcept>

#include "slu/text.hpp"

namespace slu {

namespace {

Tensor cross_block(const Tensor& x, const Tensor& cond, const CrossBlockParams& p,
                   const std::optional<AttnMask>& self_mask) {
    Tensor h = self_attn_sublayer(x, p.self_attn, self_mask);
    h = cross_attn_sublayer(h, cond, p.cross_attn);
    return ffn_sublayer(h, p.ffn);
}

}  // namespace

Tensor match_forward(const std::vector<int>& ids, const GroundedTextParams& p,
                     const Tensor& embed_table, const Tensor& pos_table, const Tensor& cond_feats) {
    if (ids.empty() || ids.front() != kTaskId) {
        throw std::invalid_argument("match_forward: input must start with the task token");
    }
    Tensor x = embed_ids(ids, embed_table, pos_table);
    for (const CrossBlockParams& b : p.match_blocks) x = cross_block(x, cond_feats, b, std::nullopt);
    x = apply_ln(x, p.match_final_ln);
    Tensor task_state = slice_rows(x, 0, 1);
    return reshape(linear(task_state, p.match_head), {1});
}

Tensor lm_hidden(const std::vector<int>& input_ids, const GroundedTextParams& p,
                 const Tensor& embed_table, const Tensor& pos_table, const Tensor* cond_feats,
                 LmMode mode) {
    if (input_ids.empty()) throw std::invalid_argument("lm_hidden: empty input");
    const AttnMask causal = AttnMask::causal(static_cast<int>(input_ids.size()));
    Tensor x = embed_ids(input_ids, embed_table, pos_table);
    if (mode == LmMode::Pretrain) {
        for (const BlockParams& b : p.lm_blocks) x = encoder_block(x, b, causal);
        return apply_ln(x, p.lm_final_ln);
    }
    if (cond_feats == nullptr) {
        throw std::invalid_argument("lm_hidden: conditioning features required for fine-tuning");
    }
    const std::size_t rounds = std::max(p.match_blocks.size(), p.lm_blocks.size());
    for (std::size_t i = 0; i < rounds; ++i) {
        if (i < p.match_blocks.size()) x = cross_block(x, *cond_feats, p.match_blocks[i], causal);
        if (i < p.lm_blocks.size()) x = encoder_block(x, p.lm_blocks[i], causal);
    }
    return apply_ln(x, p.lm_final_ln);
}

Tensor lm_logits_from_hidden(const Tensor& hidden, const Tensor& embed_table) {
    return matmul(hidden, transpose2d(embed_table));
}

Tensor lm_forward(const std::vector<int>& input_ids, const GroundedTextParams& p,
                  const Tensor& embed_table, const Tensor& pos_table, const Tensor* cond_feats,
                  LmMode mode) {
    return lm_logits_from_hidden(lm_hidden(input_ids, p, embed_table, pos_table, cond_feats, mode),
                                 embed_table);
}

Tensor lm_loss(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.ndim() != 2 || logits.rows() != static_cast<int>(targets.size())) {
        throw std::invalid_argument("lm_loss: logits/target length mismatch");
    }
    const int t = logits.rows(), v = logits.cols();
    int valid = 0;
    for (int id : targets) {
        if (id < 0 || id >= v) throw std::out_of_range("lm_loss: target id out of range");
        if (id != kPadId) ++valid;
    }
    if (valid == 0) throw std::invalid_argument("lm_loss: all-PAD target");
    Tensor pick = Tensor::zeros({t, v});
    for (int i = 0; i < t; ++i) {
        if (targets[static_cast<std::size_t>(i)] == kPadId) continue;
        pick.vec()[static_cast<std::size_t>(i) * v + targets[static_cast<std::size_t>(i)]] =
            1.0 / valid;
    }
    return neg(sum_all(mul(log_softmax_lastdim(logits), pick)));
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& labels) {
    if (logits.ndim() != 1 || logits.numel() != static_cast<std::int64_t>(labels.size())) {
        throw std::invalid_argument("bce_with_logits: size mismatch");
    }
    for (double y : labels) {
        if (y != 0.0 && y != 1.0) throw std::invalid_argument("bce_with_logits: labels must be 0/1");
    }
    Tensor y = Tensor::from_data(logits.shape, labels);
    return mean_all(sub(softplus(logits), mul(y, logits)));
}

std::vector<MatchExample> sample_negatives(int batch_size, std::uint64_t seed) {
    if (batch_size < 2) throw std::invalid_argument("sample_negatives: batch size must be >= 2");
    Rng rng(seed);
    std::vector<MatchExample> out;
    out.reserve(static_cast<std::size_t>(batch_size) * 2);
    for (int i = 0; i < batch_size; ++i) out.push_back({i, i, 1.0});
    std::uniform_int_distribution<int> pick(0, batch_size - 2);
    for (int i = 0; i < batch_size; ++i) {
        int j = pick(rng);
        if (j >= i) ++j;
        out.push_back({i, j, 0.0});
    }
    return out;
}

Tensor grounded_loss(const Tensor& match_loss, const Tensor& lm_loss_value, double beta) {
    if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("grounded_loss: beta out of [0,1]");
    if (beta == 0.0) return match_loss;
    if (beta == 1.0) return lm_loss_value;
    return add(scale(match_loss, 1.0 - beta), scale(lm_loss_value, beta));
}

GroundedTextParams init_grounded_params(int d_model, int heads, int match_blocks, int lm_blocks,
                                        int ffn_mult, Rng& rng) {
    if (match_blocks < 1 || lm_blocks < 1) {
        throw std::invalid_argument("init_grounded_params: need at least one block per path");
    }
    GroundedTextParams p;
    for (int i = 0; i < match_blocks; ++i) {
        CrossBlockParams b;
        BlockParams base = init_block(d_model, heads, ffn_mult, rng);
        b.self_attn = base.self_attn;
        b.ffn = base.ffn;
        b.cross_attn.ln = init_ln(d_model);
        b.cross_attn.wq = init_linear(d_model, d_model, rng);
        b.cross_attn.wk = init_linear(d_model, d_model, rng);
        b.cross_attn.wv = init_linear(d_model, d_model, rng);
        b.cross_attn.wo = init_linear(d_model, d_model, rng);
        b.cross_attn.heads = heads;
        p.match_blocks.push_back(b);
    }
    for (int i = 0; i < lm_blocks; ++i) p.lm_blocks.push_back(init_block(d_model, heads, ffn_mult, rng));
    p.match_final_ln = init_ln(d_model);
    p.lm_final_ln = init_ln(d_model);
    p.match_head = init_linear(d_model, 1, rng);
    return p;
}

}  // namespace slu
