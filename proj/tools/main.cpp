// Command-line surface: corpus generation, pre-training, fine-tuning,
// evaluation, gradient checks, ablation sweeps and embedding export.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "slu/data.hpp"
#include "slu/gradcheck_suite.hpp"
#include "slu/metrics.hpp"
#include "slu/train.hpp"

namespace fs = std::filesystem;

namespace {

void print_report(const slu::EvalReport& report) {
    std::printf("task\t%s\n", report.task.c_str());
    std::printf("samples\t%d\n", report.sample_count);
    for (const auto& [key, value] : report.values) {
        std::printf("%s\t%s\n", key.c_str(), slu::format_percent(value).c_str());
    }
}

int run(int argc, char** argv) {
    CLI::App app{"skeleton-based sign language understanding pipeline"};
    app.require_subcommand(1);

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "run the pre-training loop");
    std::string pre_config;
    pre->add_option("--config", pre_config, "key=value config file")->required();

    // finetune
    auto* fin = app.add_subcommand("finetune", "fine-tune for a downstream task");
    std::string fin_task, fin_config, fin_from;
    bool fin_force = false;
    fin->add_option("--task", fin_task, "islr|cslr|slt")->required();
    fin->add_option("--config", fin_config, "key=value config file")->required();
    fin->add_option("--from", fin_from, "pretrained checkpoint");
    fin->add_flag("--force", fin_force, "ignore architecture fingerprint mismatches");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
    std::string ev_task, ev_ckpt, ev_split = "dev", ev_manifest;
    ev->add_option("--task", ev_task, "islr|cslr|slt")->required();
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--split", ev_split, "train|dev|test");
    ev->add_option("--manifest", ev_manifest, "override the manifest recorded in the checkpoint");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    slu::GenConfig gen_cfg;
    gen->add_option("--seed", gen_cfg.seed, "corpus seed");
    gen->add_option("--out", gen_cfg.out_dir, "output directory")->required();
    gen->add_option("--num-glosses", gen_cfg.num_glosses, "distinct glosses");
    gen->add_option("--num-sentences", gen_cfg.num_sentences, "number of samples");
    gen->add_option("--noise-std", gen_cfg.noise_std, "coordinate jitter stddev");
    gen->add_option("--min-glosses", gen_cfg.min_glosses_per_sentence, "min glosses per sentence");
    gen->add_option("--max-glosses", gen_cfg.max_glosses_per_sentence, "max glosses per sentence");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::string gc_module;
    gc->add_option("--module", gc_module, "restrict to one module");

    // ablate
    auto* ab = app.add_subcommand("ablate", "sweep one knob and emit a result table");
    std::string ab_sweep, ab_config;
    ab->add_option("--sweep", ab_sweep, "alpha|beta|fusion|rowop|scoring")->required();
    ab->add_option("--config", ab_config, "key=value config file")->required();

    // export-embeddings
    auto* ex = app.add_subcommand("export-embeddings", "dump pooled sign/text embeddings");
    std::string ex_ckpt, ex_split = "train", ex_out, ex_manifest;
    ex->add_option("--ckpt", ex_ckpt, "checkpoint path")->required();
    ex->add_option("--split", ex_split, "train|dev|test");
    ex->add_option("--out", ex_out, "output TSV path")->required();
    ex->add_option("--manifest", ex_manifest, "override the manifest recorded in the checkpoint");

    CLI11_PARSE(app, argc, argv);

    if (pre->parsed()) {
        slu::TrainConfig config = slu::parse_config_file(pre_config);
        slu::PretrainResult r = slu::pretrain_loop(config);
        std::printf("checkpoint\t%s\n", r.checkpoint_path.c_str());
        std::printf("trace\t%s\n", r.trace_path.c_str());
        std::printf("steps\t%d\n", r.steps_run);
        std::printf("final_total\t%.6f\n", r.final_total);
        std::printf("retrieval_top1\t%.2f\n", r.retrieval_top1);
        return 0;
    }
    if (fin->parsed()) {
        slu::TrainConfig config = slu::parse_config_file(fin_config);
        config.task = fin_task;
        config.stage = "finetune";
        config.validate();
        slu::FinetuneResult r = slu::finetune_loop(config, fin_from, fin_force);
        std::printf("checkpoint\t%s\n", r.checkpoint_path.c_str());
        std::printf("transferred\t%zu\n", r.transfer.copied.size());
        std::printf("fresh\t%zu\n", r.transfer.fresh.size());
        std::printf("== train ==\n");
        print_report(r.train_report);
        if (!r.dev_report.values.empty()) {
            std::printf("== dev ==\n");
            print_report(r.dev_report);
        }
        return 0;
    }
    if (ev->parsed()) {
        slu::Checkpoint ckpt = slu::load_checkpoint(ev_ckpt);
        slu::TrainConfig config = slu::parse_config_text(ckpt.config_text);
        if (!ev_manifest.empty()) config.manifest = ev_manifest;
        slu::Vocabulary vocab = slu::vocab_from_checkpoint(ckpt);
        slu::Model model(config.model_config(), vocab.size(), config.seed);
        slu::restore_model(ckpt, model);
        slu::Dataset data = slu::load_dataset(config.manifest);
        slu::EvalReport report = slu::evaluate(model, vocab, data.split(ev_split),
                                               slu::task_from_string(ev_task), config.eval_max_len);
        print_report(report);
        return 0;
    }
    if (gen->parsed()) {
        slu::CorpusManifest manifest = slu::generate_corpus(gen_cfg);
        std::printf("manifest\t%s\n", (fs::path(gen_cfg.out_dir) / "manifest.tsv").string().c_str());
        std::printf("samples\t%zu\n", manifest.samples.size());
        return 0;
    }
    if (gc->parsed()) {
        const std::vector<slu::GradCheckCase> cases = slu::run_gradcheck_suite(gc_module);
        if (cases.empty()) {
            std::fprintf(stderr, "error: no gradcheck scenarios match module '%s'\n",
                         gc_module.c_str());
            return 1;
        }
        bool ok = true;
        for (const slu::GradCheckCase& c : cases) {
            std::printf("%s\t%s/%s\tmax_rel_err=%.3g\ttol=%.1g\n", c.pass ? "PASS" : "FAIL",
                        c.module.c_str(), c.name.c_str(), c.max_rel_err, c.tolerance);
            ok = ok && c.pass;
        }
        return ok ? 0 : 1;
    }
    if (ab->parsed()) {
        slu::TrainConfig config = slu::parse_config_file(ab_config);
        const std::vector<slu::AblateRow> rows = slu::ablate_sweep(config, ab_sweep);
        const std::string table =
            (fs::path(config.out_dir) / ("ablate_" + ab_sweep + ".tsv")).string();
        slu::write_ablate_table(rows, table);
        std::printf("table\t%s\n", table.c_str());
        for (const slu::AblateRow& r : rows) {
            std::printf("%s\t%s\ttotal=%.6f\tretrieval=%.2f\n", r.sweep.c_str(), r.value.c_str(),
                        r.result.final_total, r.result.retrieval_top1);
        }
        return 0;
    }
    if (ex->parsed()) {
        slu::export_embeddings(ex_ckpt, ex_split, ex_manifest, ex_out);
        std::printf("embeddings\t%s\n", ex_out.c_str());
        return 0;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
