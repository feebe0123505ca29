#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "slu/contrastive.hpp"

using namespace slu;

namespace {

// ---------------------------------------------------------------------------
// Brute-force oracle over plain doubles, written before the vectorised path.
// Features arrive already L2-normalised; entry (i, j) scores queries[i]
// against keys[j].

using Rows = std::vector<std::vector<double>>;  // tokens x dim

double oracle_row_reduce(const std::vector<double>& row, RowOp op, int last_dim) {
    switch (op) {
        case RowOp::Max: {
            double best = row[0];
            for (double v : row) best = std::max(best, v);
            return best;
        }
        case RowOp::Average: {
            double acc = 0.0;
            for (double v : row) acc += v;
            return acc / static_cast<double>(row.size());
        }
        case RowOp::TopkAverage: {
            const int k = std::max(1, last_dim / 3);
            std::vector<double> sorted = row;
            std::sort(sorted.begin(), sorted.end(), std::greater<double>());
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += sorted[static_cast<std::size_t>(i)];
            return acc / k;
        }
        case RowOp::Softmax: {
            double mx = row[0];
            for (double v : row) mx = std::max(mx, v);
            double denom = 0.0;
            for (double v : row) denom += std::exp(v - mx);
            double acc = 0.0;
            for (double v : row) acc += std::exp(v - mx) / denom * v;
            return acc;
        }
    }
    return 0.0;
}

double oracle_score(const std::vector<double>& r, Scoring sc) {
    switch (sc) {
        case Scoring::Sum: {
            double acc = 0.0;
            for (double v : r) acc += v;
            return acc;
        }
        case Scoring::Average: {
            double acc = 0.0;
            for (double v : r) acc += v;
            return acc / static_cast<double>(r.size());
        }
        case Scoring::LogSumExp: {
            double acc = 0.0;
            for (double v : r) acc += std::exp(v);
            return std::log(acc);
        }
        case Scoring::Softmax: {
            double mx = r[0];
            for (double v : r) mx = std::max(mx, v);
            double denom = 0.0;
            for (double v : r) denom += std::exp(v - mx);
            double acc = 0.0;
            for (double v : r) acc += std::exp(v - mx) / denom * v;
            return acc;
        }
        case Scoring::VarianceReducedSum: {
            double mean = 0.0;
            for (double v : r) mean += v;
            mean /= static_cast<double>(r.size());
            double acc = 0.0;
            for (double v : r) acc += v - mean;
            return acc;
        }
    }
    return 0.0;
}

Rows oracle_cosine(const Rows& q, const Rows& k) {
    Rows m(q.size(), std::vector<double>(k.size(), 0.0));
    for (std::size_t i = 0; i < q.size(); ++i)
        for (std::size_t j = 0; j < k.size(); ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < q[i].size(); ++c) acc += q[i][c] * k[j][c];
            m[i][j] = acc;
        }
    return m;
}

// Triple loop over (i, j, row).
std::vector<std::vector<double>> oracle_local_similarity(const std::vector<Rows>& queries,
                                                         const std::vector<Rows>& keys, RowOp op,
                                                         Scoring sc) {
    const std::size_t b = queries.size();
    std::vector<std::vector<double>> out(b, std::vector<double>(b, 0.0));
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            const Rows m = oracle_cosine(queries[i], keys[j]);
            std::vector<double> reduced;
            for (const std::vector<double>& row : m) {
                reduced.push_back(oracle_row_reduce(row, op, static_cast<int>(keys[j].size())));
            }
            out[i][j] = oracle_score(reduced, sc);
        }
    }
    return out;
}

Rows normalized_rows(const Tensor& t) {
    Rows rows;
    for (int i = 0; i < t.rows(); ++i) {
        std::vector<double> r;
        double sq = 0.0;
        for (int j = 0; j < t.cols(); ++j) {
            r.push_back(t.at({i, j}));
            sq += t.at({i, j}) * t.at({i, j});
        }
        const double n = std::sqrt(sq);
        for (double& v : r) v /= n;
        rows.push_back(r);
    }
    return rows;
}

}  // namespace

TEST_CASE("global similarity: diagonal of matched unit vectors, orthogonal off-diagonal") {
    // Identity projections via a square orthonormal basis: use identity heads.
    ProjectionHeads heads;
    heads.sign_w = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    heads.text_w = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor s = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor t = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = global_similarity(s, t, heads);
    CHECK(m.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.at({1, 1}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.at({0, 1}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.at({1, 0}) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS(global_similarity(Tensor::zeros({2, 2}), Tensor::zeros({3, 2}), heads));
}

TEST_CASE("global similarity matches a dot-product loop oracle") {
    Rng rng(3);
    ProjectionHeads heads = init_projection_heads(6, 4, rng);
    Tensor s = Tensor::randn({4, 6}, rng);
    Tensor t = Tensor::randn({4, 6}, rng);
    Tensor m = global_similarity(s, t, heads);
    const Rows zs = normalized_rows(matmul(s, heads.sign_w));
    const Rows zt = normalized_rows(matmul(t, heads.text_w));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (int c = 0; c < 4; ++c)
                acc += zs[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] *
                       zt[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
            CHECK(m.at({i, j}) == doctest::Approx(acc).epsilon(1e-12));
            CHECK(std::abs(m.at({i, j})) <= 1.0 + 1e-12);
        }
}

TEST_CASE("local similarity: single identical unit vectors score 1 under defaults") {
    AlignConfig cfg;  // max + softmax scoring
    std::vector<Tensor> sign = {Tensor::from_data({1, 4}, {1, 0, 0, 0})};
    std::vector<Tensor> clusters = {Tensor::from_data({1, 4}, {1, 0, 0, 0})};
    Tensor m = local_similarity_s2t(sign, clusters, cfg);
    CHECK(m.at({0, 0}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("topk uses k = max(1, floor(last_dim / 3))") {
    AlignConfig cfg;
    cfg.row_op = RowOp::TopkAverage;
    cfg.scoring = Scoring::Sum;
    // One query row against K keys whose similarities are known.
    auto unit = [](double x, double y) {
        const double n = std::sqrt(x * x + y * y);
        return std::vector<double>{x / n, y / n};
    };
    // K = 5 -> k = 1 (top value only).
    {
        std::vector<double> qv = unit(1, 0);
        std::vector<double> keys;
        std::vector<double> sims = {0.9, 0.5, 0.1, -0.2, -0.8};
        for (double s : sims) {
            const double y = std::sqrt(1.0 - s * s);
            keys.push_back(s);
            keys.push_back(y);
        }
        std::vector<Tensor> q = {Tensor::from_data({1, 2}, qv)};
        std::vector<Tensor> k = {Tensor::from_data({5, 2}, keys)};
        Tensor m = local_similarity_s2t(q, k, cfg);
        CHECK(m.at({0, 0}) == doctest::Approx(0.9).epsilon(1e-9));
    }
    // K = 9 -> k = 3 (mean of the top three).
    {
        std::vector<double> qv = unit(1, 0);
        std::vector<double> keys;
        std::vector<double> sims = {0.9, 0.8, 0.7, 0.2, 0.1, 0.0, -0.1, -0.5, -0.9};
        for (double s : sims) {
            keys.push_back(s);
            keys.push_back(std::sqrt(1.0 - s * s));
        }
        std::vector<Tensor> q = {Tensor::from_data({1, 2}, qv)};
        std::vector<Tensor> k = {Tensor::from_data({9, 2}, keys)};
        Tensor m = local_similarity_s2t(q, k, cfg);
        CHECK(m.at({0, 0}) == doctest::Approx((0.9 + 0.8 + 0.7) / 3.0).epsilon(1e-9));
    }
}

TEST_CASE("vectorised local similarity equals the brute-force oracle for all combinations") {
    Rng rng(7);
    const int b = 4, d = 8;
    for (int rep = 0; rep < 3; ++rep) {
        std::vector<Tensor> sign, clusters;
        std::vector<Rows> sign_rows, cluster_rows;
        std::uniform_int_distribution<int> ldist(1, 7), kdist(1, 5);
        for (int i = 0; i < b; ++i) {
            Tensor s = l2_normalize_rows(Tensor::randn({ldist(rng), d}, rng));
            Tensor c = l2_normalize_rows(Tensor::randn({kdist(rng), d}, rng));
            sign.push_back(s);
            clusters.push_back(c);
            sign_rows.push_back(normalized_rows(s));
            cluster_rows.push_back(normalized_rows(c));
        }
        for (RowOp op : {RowOp::Max, RowOp::Average, RowOp::TopkAverage, RowOp::Softmax}) {
            for (Scoring sc : {Scoring::Sum, Scoring::Average, Scoring::LogSumExp, Scoring::Softmax,
                               Scoring::VarianceReducedSum}) {
                AlignConfig cfg;
                cfg.row_op = op;
                cfg.scoring = sc;
                Tensor s2t = local_similarity_s2t(sign, clusters, cfg);
                Tensor t2s = local_similarity_t2s(clusters, sign, cfg);
                const auto os2t = oracle_local_similarity(sign_rows, cluster_rows, op, sc);
                const auto ot2s = oracle_local_similarity(cluster_rows, sign_rows, op, sc);
                for (int i = 0; i < b; ++i)
                    for (int j = 0; j < b; ++j) {
                        CHECK(std::abs(s2t.at({i, j}) -
                                       os2t[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) <
                              1e-9);
                        CHECK(std::abs(t2s.at({i, j}) -
                                       ot2s[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) <
                              1e-9);
                    }
            }
        }
    }
}

TEST_CASE("t2s is not the transpose of s2t in general") {
    Rng rng(11);
    AlignConfig cfg;
    std::vector<Tensor> sign, clusters;
    for (int i = 0; i < 3; ++i) {
        sign.push_back(l2_normalize_rows(Tensor::randn({5, 6}, rng)));
        clusters.push_back(l2_normalize_rows(Tensor::randn({2, 6}, rng)));
    }
    Tensor s2t = local_similarity_s2t(sign, clusters, cfg);
    Tensor t2s = local_similarity_t2s(clusters, sign, cfg);
    bool differs = false;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            differs = differs || std::abs(s2t.at({i, j}) - t2s.at({j, i})) > 1e-6;
    CHECK(differs);
}

TEST_CASE("log_sum_exp scoring matches the scalar oracle") {
    AlignConfig cfg;
    cfg.row_op = RowOp::Max;
    cfg.scoring = Scoring::LogSumExp;
    Rng rng(13);
    std::vector<Tensor> q = {l2_normalize_rows(Tensor::randn({3, 4}, rng))};
    std::vector<Tensor> k = {l2_normalize_rows(Tensor::randn({2, 4}, rng))};
    Tensor m = local_similarity_s2t(q, k, cfg);
    const Rows qr = normalized_rows(q[0]);
    const Rows kr = normalized_rows(k[0]);
    const Rows cos = oracle_cosine(qr, kr);
    double acc = 0.0;
    for (const std::vector<double>& row : cos) acc += std::exp(*std::max_element(row.begin(), row.end()));
    CHECK(m.at({0, 0}) == doctest::Approx(std::log(acc)).epsilon(1e-12));
}

TEST_CASE("info_nce: uniform matrix gives ln B exactly") {
    for (int b : {2, 4, 8}) {
        Tensor m = Tensor::full({b, b}, 0.37);
        Tensor loss = info_nce(m, std::nullopt);
        CHECK(std::abs(loss.value() - std::log(static_cast<double>(b))) < 1e-12);
    }
    CHECK_THROWS(info_nce(Tensor::zeros({2, 3}), std::nullopt));
}

TEST_CASE("info_nce: identity similarity with tau 0.07 is almost zero") {
    Tensor m = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) m.vec()[static_cast<std::size_t>(i) * 4 + i] = 1.0;
    Temperature tau = Temperature::init(0.07);
    Tensor loss = info_nce(m, tau);
    // Scalar oracle: per row -log(e^{1/tau} / (e^{1/tau} + 3)).
    const double expect = std::log(1.0 + 3.0 * std::exp(-1.0 / 0.07));
    CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-9));
    CHECK(loss.value() <= 1e-5);
}

TEST_CASE("info_nce gradcheck w.r.t. matrix and log_tau") {
    Rng rng(17);
    Tensor m = Tensor::uniform({4, 4}, rng, -1, 1, true);
    Temperature tau = Temperature::init(0.07);
    std::vector<Tensor> inputs = {m, tau.log_tau};
    const double err = grad_check([&]() { return info_nce(m, tau); }, inputs, 1e-6);
    CHECK(err < 1e-5);
}

TEST_CASE("increasing a diagonal entry strictly decreases info_nce") {
    Rng rng(19);
    Tensor m = Tensor::uniform({4, 4}, rng, -0.5, 0.5, false);
    const double base = info_nce(m, std::nullopt).value();
    for (int i = 0; i < 4; ++i) {
        Tensor bumped = Tensor::zeros({4, 4});
        bumped.vec() = m.vec();
        bumped.vec()[static_cast<std::size_t>(i) * 4 + i] += 1e-4;
        CHECK(info_nce(bumped, std::nullopt).value() < base);
    }
}

TEST_CASE("temperature stays inside its clamp bounds") {
    Temperature tau = Temperature::init(0.07);
    CHECK(tau.value() == doctest::Approx(0.07));
    (*tau.log_tau.data)[0] = std::log(5.0);  // simulate an optimizer overshoot
    tau.clamp_after_update();
    CHECK(tau.value() <= 1.0);
    (*tau.log_tau.data)[0] = std::log(1e-5);
    tau.clamp_after_update();
    CHECK(tau.value() >= 0.01);
}

namespace {

AlignBatch random_batch(Rng& rng, int b, int d) {
    AlignBatch batch;
    batch.s_cls = Tensor::randn({b, d}, rng);
    batch.t_cls = Tensor::randn({b, d}, rng);
    std::uniform_int_distribution<int> ldist(2, 5), kdist(1, 3);
    for (int i = 0; i < b; ++i) {
        batch.sign_tokens.push_back(Tensor::randn({ldist(rng), d}, rng));
        batch.text_clusters.push_back(Tensor::randn({kdist(rng), d}, rng));
    }
    return batch;
}

AlignBatch permuted(const AlignBatch& batch, const std::vector<int>& perm) {
    AlignBatch out;
    const int b = batch.s_cls.rows();
    const int d = batch.s_cls.cols();
    out.s_cls = Tensor::zeros({b, d});
    out.t_cls = Tensor::zeros({b, d});
    for (int i = 0; i < b; ++i) {
        for (int j = 0; j < d; ++j) {
            out.s_cls.vec()[static_cast<std::size_t>(i) * d + j] =
                batch.s_cls.at({perm[static_cast<std::size_t>(i)], j});
            out.t_cls.vec()[static_cast<std::size_t>(i) * d + j] =
                batch.t_cls.at({perm[static_cast<std::size_t>(i)], j});
        }
        out.sign_tokens.push_back(batch.sign_tokens[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
        out.text_clusters.push_back(
            batch.text_clusters[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    }
    return out;
}

}  // namespace

TEST_CASE("alignment loss endpoints are the pure losses, bitwise") {
    Rng rng(23);
    ProjectionHeads heads = init_projection_heads(6, 4, rng);
    Temperature tau = Temperature::init(0.07);
    AlignBatch batch = random_batch(rng, 3, 6);
    AlignConfig cfg;
    cfg.alpha = 0.0;
    CHECK(alignment_loss(batch, heads, tau, cfg).value() ==
          global_alignment_loss(batch, heads, tau).value());
    cfg.alpha = 1.0;
    CHECK(alignment_loss(batch, heads, tau, cfg).value() ==
          local_alignment_loss(batch, heads, cfg).value());
    cfg.alpha = 1.5;
    CHECK_THROWS(alignment_loss(batch, heads, tau, cfg));
}

TEST_CASE("batch permutation leaves the alignment loss unchanged") {
    Rng rng(29);
    ProjectionHeads heads = init_projection_heads(6, 4, rng);
    Temperature tau = Temperature::init(0.07);
    AlignBatch batch = random_batch(rng, 4, 6);
    AlignConfig cfg;  // alpha 0.5
    const double base = alignment_loss(batch, heads, tau, cfg).value();
    const double shuffled = alignment_loss(permuted(batch, {2, 0, 3, 1}), heads, tau, cfg).value();
    CHECK(std::abs(base - shuffled) < 1e-9);
}

TEST_CASE("scaling one sequence's tokens before normalisation leaves max-row scores unchanged") {
    Rng rng(31);
    AlignConfig cfg;  // row max
    cfg.project_local = false;
    ProjectionHeads unused;
    AlignBatch batch = random_batch(rng, 3, 6);
    Tensor scaled_tokens = scale(batch.sign_tokens[1], 3.7);
    AlignBatch scaled_batch = batch;
    scaled_batch.sign_tokens[1] = scaled_tokens;
    std::vector<Tensor> a_norm, b_norm, c_norm;
    for (const Tensor& t : batch.sign_tokens) a_norm.push_back(l2_normalize_rows(t));
    for (const Tensor& t : scaled_batch.sign_tokens) b_norm.push_back(l2_normalize_rows(t));
    for (const Tensor& t : batch.text_clusters) c_norm.push_back(l2_normalize_rows(t));
    Tensor m1 = local_similarity_s2t(a_norm, c_norm, cfg);
    Tensor m2 = local_similarity_s2t(b_norm, c_norm, cfg);
    for (std::size_t i = 0; i < m1.vec().size(); ++i)
        CHECK(m1.vec()[i] == doctest::Approx(m2.vec()[i]).epsilon(1e-12));
}
