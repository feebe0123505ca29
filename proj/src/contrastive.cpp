#include "slu/contrastive.hpp"

#include <cmath>
#include <stdexcept>

namespace slu {

RowOp row_op_from_string(const std::string& s) {
    if (s == "max") return RowOp::Max;
    if (s == "average") return RowOp::Average;
    if (s == "topk_average") return RowOp::TopkAverage;
    if (s == "softmax") return RowOp::Softmax;
    throw std::invalid_argument("unknown row_op '" + s + "'");
}

Scoring scoring_from_string(const std::string& s) {
    if (s == "sum") return Scoring::Sum;
    if (s == "average") return Scoring::Average;
    if (s == "log_sum_exp") return Scoring::LogSumExp;
    if (s == "softmax") return Scoring::Softmax;
    if (s == "variance_reduced_sum") return Scoring::VarianceReducedSum;
    throw std::invalid_argument("unknown scoring '" + s + "'");
}

const char* to_string(RowOp op) {
    switch (op) {
        case RowOp::Max: return "max";
        case RowOp::Average: return "average";
        case RowOp::TopkAverage: return "topk_average";
        case RowOp::Softmax: return "softmax";
    }
    return "?";
}

const char* to_string(Scoring sc) {
    switch (sc) {
        case Scoring::Sum: return "sum";
        case Scoring::Average: return "average";
        case Scoring::LogSumExp: return "log_sum_exp";
        case Scoring::Softmax: return "softmax";
        case Scoring::VarianceReducedSum: return "variance_reduced_sum";
    }
    return "?";
}

Temperature Temperature::init(double tau) {
    Temperature t;
    t.log_tau = Tensor::from_data({1}, {std::log(tau)}, true);
    return t;
}

Tensor Temperature::effective() const { return clamp(exp(log_tau), lo, hi); }

double Temperature::value() const {
    return std::min(std::max(std::exp(log_tau.value()), lo), hi);
}

void Temperature::clamp_after_update() const {
    double& v = (*log_tau.data)[0];
    v = std::min(std::max(v, std::log(lo)), std::log(hi));
}

Tensor project_rows(const Tensor& x, const Tensor& w) {
    return l2_normalize_rows(matmul(x, w));
}

Tensor global_similarity(const Tensor& s_cls_batch, const Tensor& t_cls_batch,
                         const ProjectionHeads& heads) {
    if (s_cls_batch.rows() != t_cls_batch.rows()) {
        throw std::invalid_argument("global_similarity: batch size mismatch");
    }
    Tensor zs = project_rows(s_cls_batch, heads.sign_w);
    Tensor zt = project_rows(t_cls_batch, heads.text_w);
    return matmul(zs, transpose2d(zt));
}

namespace {

Tensor row_reduce(const Tensor& m, const AlignConfig& cfg) {
    switch (cfg.row_op) {
        case RowOp::Max:
            return row_max(m);
        case RowOp::Average:
            return row_mean(m);
        case RowOp::TopkAverage:
            return row_topk_mean(m, std::max(1, m.cols() / 3));
        case RowOp::Softmax:
            return row_sum(mul(softmax_lastdim(m), m));
    }
    throw std::logic_error("row_reduce: bad op");
}

Tensor score_rows(const Tensor& r, const AlignConfig& cfg) {
    switch (cfg.scoring) {
        case Scoring::Sum:
            return sum_all(r);
        case Scoring::Average:
            return mean_all(r);
        case Scoring::LogSumExp:
            return log(sum_all(exp(r)));
        case Scoring::Softmax:
            return sum_all(mul(softmax_lastdim(r), r));
        case Scoring::VarianceReducedSum:
            return sum_all(sub(r, expand_to(mean_all(r), r.shape)));
    }
    throw std::logic_error("score_rows: bad scoring");
}

Tensor local_similarity(const std::vector<Tensor>& queries, const std::vector<Tensor>& keys,
                        const AlignConfig& cfg) {
    if (queries.empty() || queries.size() != keys.size()) {
        throw std::invalid_argument("local_similarity: empty or mismatched batch");
    }
    const int b = static_cast<int>(queries.size());
    std::vector<Tensor> entries;
    entries.reserve(static_cast<std::size_t>(b) * b);
    for (int i = 0; i < b; ++i) {
        for (int j = 0; j < b; ++j) {
            Tensor m = matmul(queries[static_cast<std::size_t>(i)],
                              transpose2d(keys[static_cast<std::size_t>(j)]));
            entries.push_back(score_rows(row_reduce(m, cfg), cfg));
        }
    }
    return stack_scalars(entries, b, b);
}

}  // namespace

Tensor local_similarity_s2t(const std::vector<Tensor>& sign_tokens,
                            const std::vector<Tensor>& text_clusters, const AlignConfig& config) {
    return local_similarity(sign_tokens, text_clusters, config);
}

Tensor local_similarity_t2s(const std::vector<Tensor>& text_clusters,
                            const std::vector<Tensor>& sign_tokens, const AlignConfig& config) {
    return local_similarity(text_clusters, sign_tokens, config);
}

Tensor info_nce_rows(const Tensor& m, const std::optional<Temperature>& tau) {
    if (m.ndim() != 2 || m.rows() != m.cols()) {
        throw std::invalid_argument("info_nce: matrix must be square");
    }
    Tensor scaled = m;
    if (tau) {
        scaled = mul(m, expand_to(reciprocal(tau->effective()), m.shape));
    }
    return neg(mean_all(diag(log_softmax_lastdim(scaled))));
}

Tensor info_nce(const Tensor& m, const std::optional<Temperature>& tau) {
    Tensor fwd = info_nce_rows(m, tau);
    Tensor bwd = info_nce_rows(transpose2d(m), tau);
    return scale(add(fwd, bwd), 0.5);
}

Tensor global_alignment_loss(const AlignBatch& batch, const ProjectionHeads& heads,
                             const Temperature& tau) {
    return info_nce(global_similarity(batch.s_cls, batch.t_cls, heads), tau);
}

Tensor local_alignment_loss(const AlignBatch& batch, const ProjectionHeads& heads,
                            const AlignConfig& config) {
    if (batch.sign_tokens.size() != batch.text_clusters.size()) {
        throw std::invalid_argument("local_alignment_loss: batch size mismatch");
    }
    std::vector<Tensor> sign, clusters;
    sign.reserve(batch.sign_tokens.size());
    clusters.reserve(batch.text_clusters.size());
    for (const Tensor& t : batch.sign_tokens) {
        sign.push_back(config.project_local ? project_rows(t, heads.sign_w) : l2_normalize_rows(t));
    }
    for (const Tensor& t : batch.text_clusters) {
        clusters.push_back(config.project_local ? project_rows(t, heads.text_w) : l2_normalize_rows(t));
    }
    // Both directions carry their own similarity matrix; temperature is fixed
    // at 1 for the local level.
    Tensor s2t = info_nce_rows(local_similarity_s2t(sign, clusters, config), std::nullopt);
    Tensor t2s = info_nce_rows(local_similarity_t2s(clusters, sign, config), std::nullopt);
    return scale(add(s2t, t2s), 0.5);
}

Tensor alignment_loss(const AlignBatch& batch, const ProjectionHeads& heads, const Temperature& tau,
                      const AlignConfig& config) {
    if (config.alpha < 0.0 || config.alpha > 1.0) {
        throw std::invalid_argument("alignment_loss: alpha out of [0,1]");
    }
    if (config.alpha == 0.0) return global_alignment_loss(batch, heads, tau);
    if (config.alpha == 1.0) return local_alignment_loss(batch, heads, config);
    return add(scale(global_alignment_loss(batch, heads, tau), 1.0 - config.alpha),
               scale(local_alignment_loss(batch, heads, config), config.alpha));
}

ProjectionHeads init_projection_heads(int d_model, int d_proj, Rng& rng) {
    const double bound = std::sqrt(6.0 / (d_model + d_proj));
    ProjectionHeads h;
    h.sign_w = Tensor::uniform({d_model, d_proj}, rng, -bound, bound, true);
    h.text_w = Tensor::uniform({d_model, d_proj}, rng, -bound, bound, true);
    return h;
}

}  // namespace slu
