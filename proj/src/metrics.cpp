#include "slu/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace slu {

double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
    if (ref.empty()) throw std::invalid_argument("wer: empty reference");
    const std::size_t n = ref.size(), m = hyp.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return 100.0 * static_cast<double>(prev[m]) / static_cast<double>(n);
}

namespace {

std::map<std::string, int> ngram_counts(const std::vector<std::string>& tokens, int k) {
    std::map<std::string, int> counts;
    if (static_cast<int>(tokens.size()) < k) return counts;
    for (std::size_t i = 0; i + k <= tokens.size(); ++i) {
        std::string key;
        for (int j = 0; j < k; ++j) {
            if (j) key += '\x1f';
            key += tokens[i + static_cast<std::size_t>(j)];
        }
        ++counts[key];
    }
    return counts;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double bleu(const std::vector<std::vector<std::string>>& refs,
            const std::vector<std::vector<std::string>>& hyps, int n) {
    if (n < 1 || n > 4) throw std::invalid_argument("bleu: n must be in 1..4");
    if (refs.empty() || refs.size() != hyps.size()) throw std::invalid_argument("bleu: empty corpus");
    std::size_t hyp_len = 0, ref_len = 0;
    std::vector<std::size_t> matched(static_cast<std::size_t>(n), 0);
    std::vector<std::size_t> total(static_cast<std::size_t>(n), 0);
    for (std::size_t p = 0; p < refs.size(); ++p) {
        hyp_len += hyps[p].size();
        ref_len += refs[p].size();
        for (int k = 1; k <= n; ++k) {
            auto rc = ngram_counts(refs[p], k);
            auto hc = ngram_counts(hyps[p], k);
            for (const auto& [gram, count] : hc) {
                total[static_cast<std::size_t>(k - 1)] += static_cast<std::size_t>(count);
                auto it = rc.find(gram);
                if (it != rc.end()) {
                    matched[static_cast<std::size_t>(k - 1)] +=
                        static_cast<std::size_t>(std::min(count, it->second));
                }
            }
        }
    }
    if (hyp_len == 0) return 0.0;
    double log_prec = 0.0;
    for (int k = 0; k < n; ++k) {
        double prec;
        if (total[static_cast<std::size_t>(k)] == 0) {
            prec = 1.0;  // no n-grams of this order to get wrong
        } else if (matched[static_cast<std::size_t>(k)] == 0) {
            prec = 1.0 / (static_cast<double>(total[static_cast<std::size_t>(k)]) + 1.0);
        } else {
            prec = static_cast<double>(matched[static_cast<std::size_t>(k)]) /
                   static_cast<double>(total[static_cast<std::size_t>(k)]);
        }
        log_prec += std::log(prec) / n;
    }
    const double bp =
        hyp_len >= ref_len ? 1.0
                           : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_prec);
}

double rouge_l_pair(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
    if (ref.empty()) throw std::invalid_argument("rouge_l: empty reference");
    if (hyp.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(ref, hyp));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(hyp.size());
    const double r = lcs / static_cast<double>(ref.size());
    return 100.0 * 2.0 * p * r / (p + r);
}

double rouge_l(const std::vector<std::vector<std::string>>& refs,
               const std::vector<std::vector<std::string>>& hyps) {
    if (refs.empty() || refs.size() != hyps.size()) throw std::invalid_argument("rouge_l: empty corpus");
    double acc = 0.0;
    for (std::size_t i = 0; i < refs.size(); ++i) acc += rouge_l_pair(refs[i], hyps[i]);
    return acc / static_cast<double>(refs.size());
}

double top1_accuracy(const std::vector<std::string>& preds, const std::vector<std::string>& labels,
                     bool per_class) {
    if (preds.size() != labels.size()) throw std::invalid_argument("top1: length mismatch");
    if (labels.empty()) throw std::invalid_argument("top1: empty inputs");
    if (!per_class) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i] ? 1 : 0;
        return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
    }
    std::map<std::string, std::pair<std::size_t, std::size_t>> per;  // label -> (correct, total)
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto& [correct, total] = per[labels[i]];
        ++total;
        if (preds[i] == labels[i]) ++correct;
    }
    double acc = 0.0;
    for (const auto& [label, ct] : per) {
        acc += static_cast<double>(ct.first) / static_cast<double>(ct.second);
    }
    return 100.0 * acc / static_cast<double>(per.size());
}

std::vector<std::string> metric_tokens(const std::string& text, bool cjk) {
    std::vector<std::string> out;
    if (!cjk) {
        std::istringstream in(text);
        std::string w;
        while (in >> w) out.push_back(w);
        return out;
    }
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        std::size_t len = 1;
        if (c >= 0xF0) len = 4;
        else if (c >= 0xE0) len = 3;
        else if (c >= 0xC0) len = 2;
        out.push_back(text.substr(i, len));
        i += len;
    }
    return out;
}

std::string format_percent(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", value);
    return buf;
}

void write_report_txt(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("report: cannot open " + path);
    out << "task\t" << report.task << '\n';
    out << "samples\t" << report.sample_count << '\n';
    for (const auto& [key, value] : report.values) out << key << '\t' << format_percent(value) << '\n';
}

void write_report_json(const EvalReport& report, const std::string& path) {
    nlohmann::json j;
    j["task"] = report.task;
    j["samples"] = report.sample_count;
    for (const auto& [key, value] : report.values) j["metrics"][key] = value;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("report: cannot open " + path);
    out << j.dump(2) << '\n';
}

}  // namespace slu
