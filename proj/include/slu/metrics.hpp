#pragma once

// Evaluation metrics: top-1 accuracy (per-instance and per-class), word error
// rate, corpus BLEU and ROUGE-L. All values are percentages.

#include <string>
#include <utility>
#include <vector>

namespace slu {

// Levenshtein distance / reference length * 100. May exceed 100.
double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

// Corpus-level BLEU-n: geometric mean of modified n-gram precisions with
// add-one smoothing on zero match counts, times the brevity penalty.
double bleu(const std::vector<std::vector<std::string>>& refs,
            const std::vector<std::vector<std::string>>& hyps, int n);

// LCS F1 for one pair.
double rouge_l_pair(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);
// Corpus value: mean over pairs.
double rouge_l(const std::vector<std::vector<std::string>>& refs,
               const std::vector<std::vector<std::string>>& hyps);

// per_class=false: mean correctness. per_class=true: unweighted mean of
// per-class accuracy over classes present in the labels.
double top1_accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& labels,
                     bool per_class);

// Whitespace tokens, or one token per code point for CJK-style corpora.
std::vector<std::string> metric_tokens(const std::string& text, bool cjk);

// Two-decimal percent rendering used by reports.
std::string format_percent(double value);

struct EvalReport {
    std::string task;
    std::vector<std::pair<std::string, double>> values;
    int sample_count = 0;
};

void write_report_txt(const EvalReport& report, const std::string& path);
void write_report_json(const EvalReport& report, const std::string& path);

}  // namespace slu
