#pragma once

// Unified fine-tuning plumbing: parameter transfer with name filters, greedy
// decoding, teacher forcing and per-task target construction.

#include <functional>
#include <string>
#include <vector>

#include "slu/model.hpp"
#include "slu/text.hpp"

namespace slu {

enum class TaskType { ISLR, CSLR, SLT };
TaskType task_from_string(const std::string& s);
const char* to_string(TaskType t);

enum class TransferMode { None, SignOnly, SignAndSgt, Full };
TransferMode transfer_mode_from_string(const std::string& s);
const char* to_string(TransferMode m);

using TransferFilter = std::function<bool(const std::string&)>;

// The match path's self-attention sublayers stay fresh in every mode except
// the all-pass filter.
bool is_match_self_attention(const std::string& name);
bool is_sign_encoder_param(const std::string& name);
TransferFilter filter_for_mode(TransferMode mode);
TransferFilter transfer_all();

struct TransferManifest {
    std::vector<std::string> copied;
    std::vector<std::string> fresh;
};

// Copies selected pretrained values into the fine-tune bundle; unselected
// parameters keep their fresh initialisation. A selected name missing from
// the source throws.
TransferManifest transfer_parameters(const ModelBundle& pretrained, ModelBundle& finetune,
                                     const TransferFilter& filter);

struct TeacherForced {
    std::vector<int> input_ids;   // BOS-prefixed
    std::vector<int> target_ids;  // content tokens, EOS-terminated
};

// Strips CLS and shifts: input [BOS, y1..y_{m-1}], target [y1..ym] with
// ym = EOS.
TeacherForced teacher_force(const TokenizedText& text);

// BOS-seeded argmax decoding until EOS or max_len tokens; EOS is dropped from
// the returned sequence.
std::vector<int> greedy_decode(const Model& model, const Tensor& cond_feats, int max_len);

// The task objective is the LM loss on teacher-forced logits.
Tensor finetune_loss(const Tensor& logits, const std::vector<int>& targets);

}  // namespace slu
