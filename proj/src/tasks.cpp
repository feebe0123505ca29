#include "slu/tasks.hpp"

#include <stdexcept>

#include "slu/grounded.hpp"

namespace slu {

TaskType task_from_string(const std::string& s) {
    if (s == "islr") return TaskType::ISLR;
    if (s == "cslr") return TaskType::CSLR;
    if (s == "slt") return TaskType::SLT;
    throw std::invalid_argument("unknown task '" + s + "'");
}

const char* to_string(TaskType t) {
    switch (t) {
        case TaskType::ISLR: return "islr";
        case TaskType::CSLR: return "cslr";
        case TaskType::SLT: return "slt";
    }
    return "?";
}

TransferMode transfer_mode_from_string(const std::string& s) {
    if (s == "none") return TransferMode::None;
    if (s == "sign_only") return TransferMode::SignOnly;
    if (s == "sign_and_sgt") return TransferMode::SignAndSgt;
    if (s == "full") return TransferMode::Full;
    throw std::invalid_argument("unknown transfer_mode '" + s + "'");
}

const char* to_string(TransferMode m) {
    switch (m) {
        case TransferMode::None: return "none";
        case TransferMode::SignOnly: return "sign_only";
        case TransferMode::SignAndSgt: return "sign_and_sgt";
        case TransferMode::Full: return "full";
    }
    return "?";
}

bool is_match_self_attention(const std::string& name) {
    return name.rfind("dec.match", 0) == 0 && name.find(".self_attn.") != std::string::npos;
}

bool is_sign_encoder_param(const std::string& name) {
    return name.rfind("frontend.", 0) == 0 || name.rfind("sign_proj.", 0) == 0 ||
           name == "sign_cls" || name == "sign_pos" || name.rfind("sign_enc.", 0) == 0;
}

TransferFilter filter_for_mode(TransferMode mode) {
    switch (mode) {
        case TransferMode::None:
            return [](const std::string&) { return false; };
        case TransferMode::SignOnly:
            return [](const std::string& n) { return is_sign_encoder_param(n); };
        case TransferMode::SignAndSgt:
            return [](const std::string& n) {
                if (is_match_self_attention(n)) return false;
                return is_sign_encoder_param(n) || n.rfind("dec.", 0) == 0;
            };
        case TransferMode::Full:
            return [](const std::string& n) { return !is_match_self_attention(n); };
    }
    throw std::logic_error("filter_for_mode: bad mode");
}

TransferFilter transfer_all() {
    return [](const std::string&) { return true; };
}

TransferManifest transfer_parameters(const ModelBundle& pretrained, ModelBundle& finetune,
                                     const TransferFilter& filter) {
    TransferManifest manifest;
    for (auto& [name, target] : finetune.map()) {
        if (!filter(name)) {
            manifest.fresh.push_back(name);
            continue;
        }
        if (!pretrained.has(name)) {
            throw std::invalid_argument("transfer: missing pretrained parameter '" + name + "'");
        }
        const Tensor& src = pretrained.at(name);
        if (src.shape != target.shape) {
            throw std::invalid_argument("transfer: shape mismatch for '" + name + "'");
        }
        target.vec() = src.vec();
        manifest.copied.push_back(name);
    }
    return manifest;
}

TeacherForced teacher_force(const TokenizedText& text) {
    text.validate();
    // Content = everything after CLS, EOS included.
    std::vector<int> content(text.ids.begin() + 1, text.ids.end());
    TeacherForced tf;
    tf.input_ids.push_back(kBosId);
    tf.input_ids.insert(tf.input_ids.end(), content.begin(), content.end() - 1);
    tf.target_ids = std::move(content);
    return tf;
}

std::vector<int> greedy_decode(const Model& model, const Tensor& cond_feats, int max_len) {
    NoGradGuard ng;
    std::vector<int> input = {kBosId};
    std::vector<int> out;
    while (static_cast<int>(out.size()) < max_len) {
        Tensor logits = model.decode_logits(input, &cond_feats, LmMode::Finetune);
        const int t = logits.rows() - 1;
        const int v = logits.cols();
        int best = 0;
        double bv = logits.at({t, 0});
        for (int j = 1; j < v; ++j) {
            const double val = logits.at({t, j});
            if (val > bv) {
                bv = val;
                best = j;
            }
        }
        if (best == kEosId) break;
        out.push_back(best);
        input.push_back(best);
    }
    return out;
}

Tensor finetune_loss(const Tensor& logits, const std::vector<int>& targets) {
    return lm_loss(logits, targets);
}

}  // namespace slu
