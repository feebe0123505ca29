#pragma once

// Hierarchical alignment: a global class-token contrastive loss plus a local
// cluster-wise contrastive loss over sign tokens and text clusters, mixed by
// alpha. Row operations and scoring methods for the local similarity are
// configurable.

#include <optional>
#include <string>
#include <vector>

#include "slu/tensor.hpp"

namespace slu {

enum class RowOp { Max, Average, TopkAverage, Softmax };
enum class Scoring { Sum, Average, LogSumExp, Softmax, VarianceReducedSum };

RowOp row_op_from_string(const std::string& s);
Scoring scoring_from_string(const std::string& s);
const char* to_string(RowOp op);
const char* to_string(Scoring sc);

struct ProjectionHeads {
    Tensor sign_w;  // [D_model, D_proj]
    Tensor text_w;  // [D_model, D_proj]
};

struct Temperature {
    Tensor log_tau;  // learnable scalar
    double lo = 0.01;
    double hi = 1.0;
    static Temperature init(double tau = 0.07);
    // exp(log_tau) clamped into [lo, hi], on the tape.
    Tensor effective() const;
    double value() const;
    // Keeps log_tau inside the clamp bounds; called after optimizer steps.
    void clamp_after_update() const;
};

struct AlignConfig {
    double alpha = 0.5;
    RowOp row_op = RowOp::Max;
    Scoring scoring = Scoring::Softmax;
    bool project_local = true;  // pass local features through the projection heads
};

// Projects rows and L2-normalises them.
Tensor project_rows(const Tensor& x, const Tensor& w);

// M[i,j] = <g_s(s_i), g_t(t_j)>, entries in [-1, 1].
Tensor global_similarity(const Tensor& s_cls_batch, const Tensor& t_cls_batch,
                         const ProjectionHeads& heads);

// Cluster-wise similarity. Entry (i, j) scores queries[i] against keys[j]:
// rows of the cosine matrix run over query tokens, the row op reduces over
// key tokens (top-k uses k = max(1, floor(n_keys / 3))), and the scoring
// method collapses the per-row vector to a scalar. Inputs must be
// L2-normalised per token.
Tensor local_similarity_s2t(const std::vector<Tensor>& sign_tokens,
                            const std::vector<Tensor>& text_clusters, const AlignConfig& config);
Tensor local_similarity_t2s(const std::vector<Tensor>& text_clusters,
                            const std::vector<Tensor>& sign_tokens, const AlignConfig& config);

// -(1/B) sum_i log softmax(M[i,:] / tau)[i], rows only.
Tensor info_nce_rows(const Tensor& m, const std::optional<Temperature>& tau);
// Bidirectional: 0.5 * (rows over M + rows over M^T). tau absent means tau=1.
Tensor info_nce(const Tensor& m, const std::optional<Temperature>& tau);

struct AlignBatch {
    Tensor s_cls;                       // [B, D_model]
    Tensor t_cls;                       // [B, D_model]
    std::vector<Tensor> sign_tokens;    // B x [L_i, D_model]
    std::vector<Tensor> text_clusters;  // B x [K_j, D_model]
};

Tensor global_alignment_loss(const AlignBatch& batch, const ProjectionHeads& heads,
                             const Temperature& tau);
// Local loss omits temperature scaling; both directions averaged.
Tensor local_alignment_loss(const AlignBatch& batch, const ProjectionHeads& heads,
                            const AlignConfig& config);
// (1-alpha) * global + alpha * local; the endpoints take the single-branch
// path so they match the standalone losses bitwise.
Tensor alignment_loss(const AlignBatch& batch, const ProjectionHeads& heads, const Temperature& tau,
                      const AlignConfig& config);

ProjectionHeads init_projection_heads(int d_model, int d_proj, Rng& rng);

}  // namespace slu
