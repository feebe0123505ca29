#pragma once

// Optimizer, schedule, training loops, checkpointing, configuration and the
// ablation sweep plumbing behind the CLI.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slu/data.hpp"
#include "slu/metrics.hpp"
#include "slu/model.hpp"
#include "slu/tasks.hpp"

namespace slu {

struct TrainConfig {
    std::string stage = "pretrain";  // pretrain | finetune
    std::string task = "slt";        // islr | cslr | slt
    int epochs = 10;
    int steps = 0;  // > 0 overrides the epoch count
    int batch_size = 16;
    double base_lr = 3e-4;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;  // config key "betas" holds the pair
    std::uint64_t seed = 1;
    double alpha = 0.5;
    double beta = 0.5;
    int fusion_layers = 2;
    std::string row_op = "max";
    std::string scoring = "softmax";
    bool freeze_text_encoder = false;
    std::string cond_source = "sign";      // sign | text
    std::string transfer_mode = "full";    // none | sign_only | sign_and_sgt | full
    std::string manifest;
    std::string out_dir = ".";
    int vocab_max = 512;
    int grad_accum = 1;  // micro-batches per optimizer step (fine-tuning)
    bool checked = true;
    int eval_max_len = 24;
    std::string cluster_mode = "word";  // word | chunk
    int chunk_size = 2;
    bool project_local = true;
    // model dimensions
    int d_model = 128;
    int heads = 4;
    int enc_depth = 6;
    int dec_match_blocks = 2;
    int dec_lm_blocks = 2;
    int ffn_mult = 4;
    int stgcn_hidden = 64;
    int part_dim = 64;
    int d_proj = 64;
    int max_text_len = 64;
    int max_frames = 256;
    bool share_fusion = true;
    bool center_frames = true;

    ModelConfig model_config() const;
    AlignConfig align_config() const;
    void validate() const;
};

// Flat key=value text; '#' starts a comment line. Unknown keys are errors.
TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path);
void apply_config_kv(TrainConfig& config, const std::string& key, const std::string& value);
std::string config_to_text(const TrainConfig& config);
std::uint64_t arch_fingerprint(const TrainConfig& config, int vocab_size);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
    std::map<std::string, std::vector<double>> m, v;
    std::int64_t t = 0;
};

// Decoupled weight decay, bias-corrected moments. Parameters rejected by
// `trainable` are skipped entirely.
void adamw_step(ModelBundle& params, AdamState& state, double lr, double weight_decay, double beta1,
                double beta2, double eps, const TransferFilter& trainable);

double cosine_lr(int step, int total_steps, double base_lr);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    std::uint32_t version = 1;
    std::uint64_t arch = 0;
    std::int64_t step = 0;
    std::string config_text;
    std::vector<std::string> vocab_tokens;  // id order
    std::map<std::string, std::vector<int>> shapes;
    std::map<std::string, std::vector<double>> params;
    std::map<std::string, std::vector<double>> adam_m, adam_v;
    std::int64_t adam_t = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
Checkpoint snapshot(const Model& model, const Vocabulary& vocab, const TrainConfig& config,
                    const AdamState& opt, std::int64_t step);
Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt);
// Copies every bundle-named value from the checkpoint into the model.
void restore_model(const Checkpoint& ckpt, Model& model);
void restore_adam(const Checkpoint& ckpt, AdamState& state);
TransferManifest transfer_from_checkpoint(const Checkpoint& ckpt, ModelBundle& target,
                                          const TransferFilter& filter);

// ---------------------------------------------------------------------------
// Loops

struct LoadedSample {
    SkeletonSequence seq;
    std::string text;
    std::vector<std::string> glosses;
    std::string id;  // skl file stem
};

struct Dataset {
    std::vector<LoadedSample> train, dev, test;
    const std::vector<LoadedSample>& split(const std::string& name) const;
};

Dataset load_dataset(const std::string& manifest_path);

std::string task_target_text(const LoadedSample& sample, TaskType task);

struct PretrainResult {
    std::string checkpoint_path;
    std::string trace_path;
    double first_traced_total = 0.0;  // step-10 value used by convergence checks
    double final_total = 0.0;
    double final_global = 0.0;
    double final_local = 0.0;
    double final_match = 0.0;
    double final_lm = 0.0;
    double retrieval_top1 = 0.0;  // sign-to-text, training batch
    int steps_run = 0;
    std::vector<double> total_by_step;
};

PretrainResult pretrain_loop(const TrainConfig& config);

struct FinetuneResult {
    std::string checkpoint_path;
    EvalReport train_report;
    EvalReport dev_report;
    TransferManifest transfer;
};

FinetuneResult finetune_loop(const TrainConfig& config, const std::string& from_checkpoint,
                             bool force = false);

EvalReport evaluate(const Model& model, Vocabulary& vocab, const std::vector<LoadedSample>& samples,
                    TaskType task, int max_len);

void export_embeddings(const std::string& checkpoint_path, const std::string& split,
                       const std::string& manifest_path, const std::string& out_path);

struct AblateRow {
    std::string sweep;
    std::string value;
    PretrainResult result;
};

std::vector<AblateRow> ablate_sweep(const TrainConfig& config, const std::string& sweep);
void write_ablate_table(const std::vector<AblateRow>& rows, const std::string& path);

}  // namespace slu
