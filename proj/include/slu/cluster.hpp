#pragma once

// Collapses subword token features into word/phrase-level cluster features.

#include <vector>

#include "slu/tensor.hpp"

namespace slu {

struct ClusterAssignment {
    std::vector<int> offsets;  // cluster index per token, -1 for specials
    int k = 0;
    void validate() const;
};

// Cluster index = source word index; subwords of one word share a cluster.
ClusterAssignment compute_offsets(const std::vector<int>& word_ids);

// Alternative grouping: consecutive non-special tokens in fixed-size chunks.
ClusterAssignment chunk_offsets(const std::vector<int>& word_ids, int chunk_size);

// Mean of member token rows per cluster -> [k, D]. Specials are excluded and
// gradients distribute 1/|cluster| to members.
Tensor aggregate(const Tensor& token_feats, const ClusterAssignment& assignment);

}  // namespace slu
