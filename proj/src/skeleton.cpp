#include "slu/skeleton.hpp"

#include <cmath>
#include <stdexcept>

namespace slu {

const char* part_name(Part p) {
    switch (p) {
        case Part::LeftHand: return "lh";
        case Part::RightHand: return "rh";
        case Part::Body: return "b";
        case Part::Face: return "f";
    }
    throw std::invalid_argument("part_name: bad part");
}

void SkeletonSequence::validate() const {
    if (frames.ndim() != 3 || frames.dim(1) != kKeypoints || frames.dim(2) != kCoords) {
        throw std::invalid_argument("skeleton: expected [L, 69, 2] frames");
    }
    if (frames.dim(0) < 1) throw std::invalid_argument("skeleton: empty sequence");
    check_finite(frames, "skeleton");
}

std::array<Tensor, 4> split_parts(const SkeletonSequence& seq) {
    seq.validate();
    const int l = seq.length();
    std::array<Tensor, 4> out;
    for (int p = 0; p < 4; ++p) {
        const int n = kPartSizes[static_cast<std::size_t>(p)];
        const int off = kPartOffsets[static_cast<std::size_t>(p)];
        Tensor t = Tensor::zeros({l, n, kCoords});
        for (int f = 0; f < l; ++f)
            for (int j = 0; j < n; ++j)
                for (int c = 0; c < kCoords; ++c)
                    t.vec()[(static_cast<std::size_t>(f) * n + j) * kCoords + c] =
                        seq.frames.vec()[(static_cast<std::size_t>(f) * kKeypoints + off + j) * kCoords + c];
        out[static_cast<std::size_t>(p)] = t;
    }
    return out;
}

std::vector<std::pair<int, int>> part_edges(Part part) {
    std::vector<std::pair<int, int>> e;
    switch (part) {
        case Part::LeftHand:
        case Part::RightHand:
            // Wrist 0; fingers are chains of four joints each.
            for (int f = 0; f < 5; ++f) {
                const int base = 1 + f * 4;
                e.emplace_back(0, base);
                e.emplace_back(base, base + 1);
                e.emplace_back(base + 1, base + 2);
                e.emplace_back(base + 2, base + 3);
            }
            break;
        case Part::Body:
            for (int i = 1; i < 9; ++i) e.emplace_back(0, i);
            break;
        case Part::Face:
            // Contour ring 0..7, eye ring 8..11, mouth ring 12..17, with two
            // spokes tying the rings to the contour so the graph is connected.
            for (int i = 0; i < 8; ++i) e.emplace_back(i, (i + 1) % 8);
            for (int i = 8; i < 12; ++i) e.emplace_back(i, i == 11 ? 8 : i + 1);
            for (int i = 12; i < 18; ++i) e.emplace_back(i, i == 17 ? 12 : i + 1);
            e.emplace_back(0, 8);
            e.emplace_back(4, 12);
            break;
    }
    return e;
}

PartAdjacency build_adjacency(Part part) {
    const int n = kPartSizes[static_cast<std::size_t>(part)];
    std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
    for (auto [u, v] : part_edges(part)) {
        a[static_cast<std::size_t>(u) * n + v] = 1.0;
        a[static_cast<std::size_t>(v) * n + u] = 1.0;
    }
    std::vector<double> deg(static_cast<std::size_t>(n), 0.0);
    double dmax = 0.0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) deg[static_cast<std::size_t>(i)] += a[static_cast<std::size_t>(i) * n + j];
        dmax = std::max(dmax, deg[static_cast<std::size_t>(i)]);
    }
    // Lazy-walk normalisation keeps the matrix symmetric and row-stochastic.
    const double denom = dmax + 1.0;
    Tensor w = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
            w.vec()[static_cast<std::size_t>(i) * n + j] = a[static_cast<std::size_t>(i) * n + j] / denom;
        w.vec()[static_cast<std::size_t>(i) * n + i] = 1.0 - deg[static_cast<std::size_t>(i)] / denom;
    }
    return PartAdjacency{part, w};
}

namespace {

Tensor stgcn_block(const Tensor& x, const PartAdjacency& adj, const StgcnBlockParams& p) {
    const int l = x.dim(0), n = x.dim(1);
    const int cin = x.dim(2), cout = p.spatial_w.cols();
    if (p.spatial_w.rows() != cin) throw std::invalid_argument("stgcn: spatial weight shape");
    Tensor h = batched_adj_mul(adj.matrix, x);
    h = reshape(matmul(reshape(h, {l * n, cin}), p.spatial_w), {l, n, cout});
    Tensor k0 = reshape(slice_rows(p.temporal_k, 0, 1), {cout});
    Tensor k1 = reshape(slice_rows(p.temporal_k, 1, 1), {cout});
    Tensor k2 = reshape(slice_rows(p.temporal_k, 2, 1), {cout});
    Tensor t = add(add(mul_channels(shift_frames(h, -1), k0), mul_channels(h, k1)),
                   mul_channels(shift_frames(h, +1), k2));
    return gelu(add_channels(t, p.bias));
}

Tensor stgcn_stack(const Tensor& part_feats, const PartAdjacency& adj, const StgcnParams& params) {
    if (part_feats.ndim() != 3 || part_feats.dim(1) != kPartSizes[static_cast<std::size_t>(adj.part)]) {
        throw std::invalid_argument("stgcn: feature shape does not match part");
    }
    Tensor x = part_feats;
    if (params.center_frames) {
        x = sub(x, repeat_axis1_3d(mean_axis1_3d(x), x.dim(1)));
    }
    for (const StgcnBlockParams& b : params.blocks) x = stgcn_block(x, adj, b);
    return x;
}

}  // namespace

Tensor stgcn_prepool(const Tensor& part_feats, const PartAdjacency& adj, const StgcnParams& params) {
    return stgcn_stack(part_feats, adj, params);
}

Tensor stgcn_forward(const Tensor& part_feats, const PartAdjacency& adj, const StgcnParams& params) {
    Tensor pooled = mean_axis1_3d(stgcn_stack(part_feats, adj, params));
    return add_channels(matmul(pooled, params.proj_w), params.proj_b);
}

Tensor fuse_parts(const std::array<Tensor, 4>& features) {
    const int l = features[0].dim(0);
    for (const Tensor& f : features) {
        if (f.ndim() != 2 || f.dim(0) != l) throw std::invalid_argument("fuse_parts: length mismatch");
    }
    return concat_cols({features[0], features[1], features[2], features[3]});
}

StgcnParams init_stgcn_params(int in_channels, int hidden, int out_dim, Rng& rng) {
    auto xavier = [&rng](int fin, int fout) {
        const double bound = std::sqrt(6.0 / (fin + fout));
        Tensor t = Tensor::zeros({fin, fout}, true);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (double& v : t.vec()) v = dist(rng);
        return t;
    };
    StgcnParams p;
    std::uniform_real_distribution<double> tap(0.05, 0.45);
    int cin = in_channels;
    for (StgcnBlockParams& b : p.blocks) {
        b.spatial_w = xavier(cin, hidden);
        b.temporal_k = Tensor::zeros({3, hidden}, true);
        for (int c = 0; c < hidden; ++c) {
            const double side = tap(rng);
            const double mid = tap(rng) + 0.3;
            b.temporal_k.vec()[c] = side;
            b.temporal_k.vec()[static_cast<std::size_t>(hidden) + c] = mid;
            b.temporal_k.vec()[2 * static_cast<std::size_t>(hidden) + c] = side;
        }
        b.bias = Tensor::zeros({hidden}, true);
        cin = hidden;
    }
    p.proj_w = xavier(hidden, out_dim);
    p.proj_b = Tensor::zeros({out_dim}, true);
    return p;
}

}  // namespace slu
