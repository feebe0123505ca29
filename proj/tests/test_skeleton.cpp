#include <doctest.h>

#include <cmath>

#include "slu/skeleton.hpp"

using namespace slu;

namespace {

SkeletonSequence zero_seq(int l) { return SkeletonSequence{Tensor::zeros({l, kKeypoints, kCoords})}; }

}  // namespace

TEST_CASE("split_parts shapes, index ranges and round trip") {
    SkeletonSequence z = zero_seq(1);
    auto parts = split_parts(z);
    CHECK(parts[0].shape == std::vector<int>{1, 21, 2});
    CHECK(parts[1].shape == std::vector<int>{1, 21, 2});
    CHECK(parts[2].shape == std::vector<int>{1, 9, 2});
    CHECK(parts[3].shape == std::vector<int>{1, 18, 2});

    // Keypoint k carries its own index so the slice ranges are visible.
    SkeletonSequence seq = zero_seq(2);
    for (int f = 0; f < 2; ++f)
        for (int k = 0; k < kKeypoints; ++k)
            for (int c = 0; c < 2; ++c)
                seq.frames.vec()[(static_cast<std::size_t>(f) * kKeypoints + k) * 2 + c] =
                    k / 100.0;
    auto p = split_parts(seq);
    CHECK(p[0].at({0, 0, 0}) == doctest::Approx(0.0));
    CHECK(p[0].at({0, 20, 0}) == doctest::Approx(0.20));
    CHECK(p[1].at({0, 0, 0}) == doctest::Approx(0.21));
    CHECK(p[1].at({0, 20, 0}) == doctest::Approx(0.41));
    CHECK(p[2].at({0, 0, 0}) == doctest::Approx(0.42));
    CHECK(p[2].at({0, 8, 0}) == doctest::Approx(0.50));
    CHECK(p[3].at({0, 0, 0}) == doctest::Approx(0.51));
    CHECK(p[3].at({0, 17, 0}) == doctest::Approx(0.68));

    // Concatenating the slices reproduces the input bitwise.
    std::size_t pos = 0;
    for (int f = 0; f < 2; ++f) {
        for (int part = 0; part < 4; ++part) {
            const int n = kPartSizes[static_cast<std::size_t>(part)];
            for (int j = 0; j < n; ++j)
                for (int c = 0; c < 2; ++c) {
                    CHECK(p[static_cast<std::size_t>(part)].at({f, j, c}) == seq.frames.vec()[pos]);
                    ++pos;
                }
        }
    }

    SkeletonSequence bad{Tensor::zeros({1, 68, 2})};
    CHECK_THROWS(split_parts(bad));
}

TEST_CASE("adjacency: row sums, symmetry, tree edge count, connectivity") {
    for (int part = 0; part < 4; ++part) {
        PartAdjacency adj = build_adjacency(static_cast<Part>(part));
        const int n = adj.matrix.rows();
        for (int i = 0; i < n; ++i) {
            double sum = 0.0;
            for (int j = 0; j < n; ++j) sum += adj.matrix.at({i, j});
            CHECK(std::abs(sum - 1.0) < 1e-9);
            CHECK(adj.matrix.at({i, i}) > 0.0);  // self loop
            for (int j = 0; j < n; ++j) CHECK(adj.matrix.at({i, j}) == adj.matrix.at({j, i}));
        }
        // Connectivity via reachability over nonzero off-diagonals.
        std::vector<int> seen(static_cast<std::size_t>(n), 0);
        std::vector<int> stack = {0};
        seen[0] = 1;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (int v = 0; v < n; ++v) {
                if (v != u && adj.matrix.at({u, v}) > 0.0 && !seen[static_cast<std::size_t>(v)]) {
                    seen[static_cast<std::size_t>(v)] = 1;
                    stack.push_back(v);
                }
            }
        }
        for (int v : seen) CHECK(v == 1);
    }
    CHECK(part_edges(Part::LeftHand).size() == 20);  // 21-node tree
    CHECK(part_edges(Part::RightHand).size() == 20);
    CHECK(part_edges(Part::Body).size() == 8);
}

TEST_CASE("stgcn: zero input with zero biases gives zero output") {
    Rng rng(5);
    StgcnParams params = init_stgcn_params(2, 4, 3, rng);
    PartAdjacency adj = build_adjacency(Part::Body);
    Tensor out = stgcn_forward(Tensor::zeros({6, 9, 2}), adj, params);
    for (double v : out.vec()) CHECK(v == 0.0);
}

TEST_CASE("stgcn: output shape [L, D] for L in {1, 5, 300}") {
    Rng rng(6);
    StgcnParams params = init_stgcn_params(2, 4, 3, rng);
    PartAdjacency adj = build_adjacency(Part::Face);
    for (int l : {1, 5, 300}) {
        Tensor out = stgcn_forward(Tensor::uniform({l, 18, 2}, rng, 0.0, 1.0), adj, params);
        CHECK(out.shape == std::vector<int>{l, 3});
    }
}

TEST_CASE("stgcn translation robustness under per-frame centering") {
    Rng rng(7);
    StgcnParams params = init_stgcn_params(2, 4, 3, rng);
    PartAdjacency adj = build_adjacency(Part::Body);
    Tensor x = Tensor::uniform({5, 9, 2}, rng, 0.2, 0.8);
    Tensor shifted = add_scalar(x, 0.07);
    Tensor a = stgcn_forward(x, adj, params);
    Tensor b = stgcn_forward(shifted, adj, params);
    for (std::size_t i = 0; i < a.vec().size(); ++i) CHECK(std::abs(a.vec()[i] - b.vec()[i]) < 1e-9);
}

TEST_CASE("stgcn temporal reversal equivariance at symmetric init") {
    Rng rng(8);
    StgcnParams params = init_stgcn_params(2, 4, 3, rng);
    PartAdjacency adj = build_adjacency(Part::Body);
    const int l = 6;
    Tensor x = Tensor::uniform({l, 9, 2}, rng, 0.0, 1.0);
    Tensor rev = Tensor::zeros({l, 9, 2});
    const std::size_t stride = 9 * 2;
    for (int t = 0; t < l; ++t)
        std::copy(x.vec().begin() + static_cast<std::size_t>(l - 1 - t) * stride,
                  x.vec().begin() + static_cast<std::size_t>(l - t) * stride,
                  rev.vec().begin() + static_cast<std::size_t>(t) * stride);
    Tensor fwd = stgcn_prepool(x, adj, params);
    Tensor bwd = stgcn_prepool(rev, adj, params);
    const std::size_t fs = static_cast<std::size_t>(fwd.numel() / l);
    for (int t = 0; t < l; ++t)
        for (std::size_t i = 0; i < fs; ++i)
            CHECK(std::abs(fwd.vec()[static_cast<std::size_t>(t) * fs + i] -
                           bwd.vec()[static_cast<std::size_t>(l - 1 - t) * fs + i]) < 1e-12);
}

TEST_CASE("fuse_parts keeps fixed order and 4D width") {
    std::array<Tensor, 4> feats;
    for (int p = 0; p < 4; ++p) feats[static_cast<std::size_t>(p)] = Tensor::full({3, 2}, p + 1.0);
    Tensor fused = fuse_parts(feats);
    CHECK(fused.shape == std::vector<int>{3, 8});
    const std::vector<double> row = {1, 1, 2, 2, 3, 3, 4, 4};
    for (int f = 0; f < 3; ++f)
        for (int j = 0; j < 8; ++j)
            CHECK(fused.at({f, j}) == row[static_cast<std::size_t>(j)]);

    // A permuted part order produces a different fingerprint.
    std::array<Tensor, 4> swapped = {feats[1], feats[0], feats[2], feats[3]};
    Tensor other = fuse_parts(swapped);
    bool differs = false;
    for (std::size_t i = 0; i < fused.vec().size(); ++i) differs = differs || fused.vec()[i] != other.vec()[i];
    CHECK(differs);

    feats[2] = Tensor::zeros({4, 2});
    CHECK_THROWS(fuse_parts(feats));
}

TEST_CASE("stgcn gradcheck through two stacked blocks") {
    Rng rng(11);
    StgcnParams params = init_stgcn_params(2, 3, 2, rng);
    PartAdjacency adj = build_adjacency(Part::Body);
    Tensor feats = Tensor::uniform({4, 9, 2}, rng, 0.0, 1.0, true);
    std::vector<Tensor> inputs = {feats, params.blocks[0].spatial_w, params.blocks[1].temporal_k,
                                  params.proj_w};
    const double err = grad_check(
        [&]() {
            Tensor out = stgcn_forward(feats, adj, params);
            return sum_all(mul(out, out));
        },
        inputs, 1e-6);
    CHECK(err < 1e-3);
}
