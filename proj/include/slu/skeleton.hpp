#pragma once

// Skeleton frontend: splits 69-keypoint 2D sequences into four body-part
// groups, runs part-specific spatial-temporal graph convolutions, and fuses
// the per-part features into one [L, 4D] sequence.

#include <array>
#include <string>

#include "slu/tensor.hpp"

namespace slu {

inline constexpr int kKeypoints = 69;
inline constexpr int kCoords = 2;

enum class Part { LeftHand = 0, RightHand = 1, Body = 2, Face = 3 };

inline constexpr std::array<int, 4> kPartSizes = {21, 21, 9, 18};
inline constexpr std::array<int, 4> kPartOffsets = {0, 21, 42, 51};

const char* part_name(Part p);

struct SkeletonSequence {
    Tensor frames;  // [L, 69, 2], coordinates in [0,1]
    int length() const { return frames.dim(0); }
    void validate() const;
};

struct PartAdjacency {
    Part part;
    Tensor matrix;  // [N_p, N_p], symmetric, row-stochastic, self-loops
};

// Disjoint slices in fixed order: left hand, right hand, body, face.
std::array<Tensor, 4> split_parts(const SkeletonSequence& seq);

// Hand: wrist-rooted five-finger tree. Body: star on the neck. Face: contour
// ring plus eye and mouth rings tied to the contour. The 0/1 graph A with
// degrees D is normalised as W = I - (D - A)/(dmax + 1), which is symmetric,
// has unit row sums and a positive diagonal.
PartAdjacency build_adjacency(Part part);

// Undirected edge list of the raw part graph (before self-loops), for tests.
std::vector<std::pair<int, int>> part_edges(Part part);

struct StgcnBlockParams {
    Tensor spatial_w;   // [C_in, C_out]
    Tensor temporal_k;  // [3, C_out], taps for frames t-1, t, t+1
    Tensor bias;        // [C_out]
};

struct StgcnParams {
    std::array<StgcnBlockParams, 2> blocks;
    Tensor proj_w;  // [hidden, D]
    Tensor proj_b;  // [D]
    bool center_frames = true;  // per-frame mean-centering before block 0
};

// [L, N_p, 2] -> [L, D]. Per block: spatial graph conv, depthwise temporal
// conv (kernel 3, zero padding), bias, GELU. Joints are mean-pooled before the
// final linear projection.
Tensor stgcn_forward(const Tensor& part_feats, const PartAdjacency& adj, const StgcnParams& params);

// Features of a part's ST-GCN stack right before joint pooling, used by the
// temporal-equivariance test.
Tensor stgcn_prepool(const Tensor& part_feats, const PartAdjacency& adj, const StgcnParams& params);

// Channel-wise concatenation in the fixed part order, [L, 4D].
Tensor fuse_parts(const std::array<Tensor, 4>& features);

// Fresh parameters; temporal kernels are initialised symmetric (same tap for
// t-1 and t+1).
StgcnParams init_stgcn_params(int in_channels, int hidden, int out_dim, Rng& rng);

}  // namespace slu
