#include <doctest.h>

#include <cmath>

#include "slu/cluster.hpp"
#include "slu/text.hpp"

using namespace slu;

TEST_CASE("compute_offsets mirrors word ids") {
    ClusterAssignment a = compute_offsets({-1, 0, 1, -1});
    CHECK(a.offsets == std::vector<int>{-1, 0, 1, -1});
    CHECK(a.k == 2);
    CHECK_THROWS(compute_offsets({-1, -1}));
}

TEST_CASE("subwords of one word share a cluster") {
    Vocabulary v;
    v.add("curios");
    v.add("ity");
    TokenizedText t = tokenize("curiosity", v);
    ClusterAssignment a = compute_offsets(t.word_ids);
    CHECK(a.k == 1);
    CHECK(a.offsets[1] == 0);
    CHECK(a.offsets[2] == 0);
}

TEST_CASE("offsets are surjective onto [0, k) — counting oracle") {
    Vocabulary v;
    v.add("so");
    v.add("me");
    v.add("words");
    v.add("split");
    for (const char* text : {"some words", "split some words split", "me so"}) {
        TokenizedText t = tokenize(text, v);
        ClusterAssignment a = compute_offsets(t.word_ids);
        std::vector<int> counts(static_cast<std::size_t>(a.k), 0);
        int nonspecial = 0;
        for (int o : a.offsets) {
            if (o >= 0) {
                ++counts[static_cast<std::size_t>(o)];
                ++nonspecial;
            }
        }
        for (int c : counts) CHECK(c > 0);
        CHECK(a.k <= nonspecial);
    }
}

TEST_CASE("chunk_offsets groups consecutive tokens") {
    ClusterAssignment a = chunk_offsets({-1, 0, 1, 2, 3, 4, -1}, 2);
    CHECK(a.k == 3);
    CHECK(a.offsets == std::vector<int>{-1, 0, 0, 1, 1, 2, -1});
}

TEST_CASE("aggregate: singleton clusters reproduce token rows; equal rows average to themselves") {
    Rng rng(5);
    Tensor feats = Tensor::randn({4, 3}, rng);
    ClusterAssignment singles = compute_offsets({-1, 0, 1, -1});
    Tensor out = aggregate(feats, singles);
    CHECK(out.shape == std::vector<int>{2, 3});
    for (int j = 0; j < 3; ++j) {
        CHECK(out.at({0, j}) == doctest::Approx(feats.at({1, j})).epsilon(1e-15));
        CHECK(out.at({1, j}) == doctest::Approx(feats.at({2, j})).epsilon(1e-15));
    }

    Tensor same = Tensor::zeros({4, 3});
    for (int j = 0; j < 3; ++j) {
        same.vec()[3 + static_cast<std::size_t>(j)] = 0.5 * j;
        same.vec()[6 + static_cast<std::size_t>(j)] = 0.5 * j;
    }
    ClusterAssignment merged = compute_offsets({-1, 0, 0, -1});
    Tensor mo = aggregate(same, merged);
    for (int j = 0; j < 3; ++j) CHECK(mo.at({0, j}) == doctest::Approx(0.5 * j).epsilon(1e-15));
}

TEST_CASE("aggregate matches a loop-and-average oracle") {
    Rng rng(7);
    Tensor feats = Tensor::randn({5, 3}, rng);
    ClusterAssignment a = compute_offsets({-1, 0, 0, 1, -1});
    Tensor got = aggregate(feats, a);
    for (int cluster = 0; cluster < a.k; ++cluster) {
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            int count = 0;
            for (int t = 0; t < 5; ++t) {
                if (a.offsets[static_cast<std::size_t>(t)] == cluster) {
                    acc += feats.at({t, j});
                    ++count;
                }
            }
            CHECK(got.at({cluster, j}) == doctest::Approx(acc / count).epsilon(1e-12));
        }
    }
}

TEST_CASE("permutation within a cluster leaves the aggregate unchanged") {
    Rng rng(9);
    Tensor feats = Tensor::randn({5, 4}, rng);
    Tensor swapped = Tensor::zeros({5, 4});
    swapped.vec() = feats.vec();
    for (int j = 0; j < 4; ++j) std::swap(swapped.vec()[1 * 4 + j], swapped.vec()[2 * 4 + j]);
    ClusterAssignment a = compute_offsets({-1, 0, 0, 1, -1});
    Tensor x = aggregate(feats, a);
    Tensor y = aggregate(swapped, a);
    for (std::size_t i = 0; i < x.vec().size(); ++i)
        CHECK(x.vec()[i] == doctest::Approx(y.vec()[i]).epsilon(1e-15));
}

TEST_CASE("backward conserves gradient mass") {
    tape().reset();
    Rng rng(11);
    Tensor feats = Tensor::uniform({5, 3}, rng, -1, 1, true);
    ClusterAssignment a = compute_offsets({-1, 0, 0, 1, -1});
    Tensor clusters = aggregate(feats, a);
    Tensor weights = Tensor::randn({2, 3}, rng);
    backward(sum_all(mul(clusters, weights)));
    double token_mass = 0.0;
    for (double g : feats.gradvec()) token_mass += g;
    double cluster_mass = 0.0;
    for (double w : weights.vec()) cluster_mass += w;  // d loss / d clusters = weights
    CHECK(token_mass == doctest::Approx(cluster_mass).epsilon(1e-12));
    tape().reset();
}

TEST_CASE("aggregate validates shape and rejects degenerate assignments") {
    Tensor feats = Tensor::zeros({3, 2});
    ClusterAssignment bad;
    bad.offsets = {-1, 0, 1};
    bad.k = 3;  // cluster 2 empty
    CHECK_THROWS(aggregate(feats, bad));
    ClusterAssignment ok = compute_offsets({-1, 0, 0});
    CHECK_THROWS(aggregate(Tensor::zeros({4, 2}), ok));  // row count mismatch
}
