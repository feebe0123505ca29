#include "slu/cluster.hpp"

#include <stdexcept>

namespace slu {

void ClusterAssignment::validate() const {
    if (k < 1) throw std::invalid_argument("cluster: k must be positive");
    int prev = -1;
    int nonspecial = 0;
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int o : offsets) {
        if (o == -1) continue;
        if (o < 0 || o >= k) throw std::invalid_argument("cluster: offset out of range");
        if (nonspecial == 0 && o != 0) throw std::invalid_argument("cluster: offsets must start at 0");
        if (o < prev) throw std::invalid_argument("cluster: offsets must be nondecreasing");
        ++counts[static_cast<std::size_t>(o)];
        prev = o;
        ++nonspecial;
    }
    if (nonspecial == 0) throw std::invalid_argument("cluster: no non-special tokens");
    if (k > nonspecial) throw std::invalid_argument("cluster: k exceeds token count");
    for (int c : counts) {
        if (c == 0) throw std::invalid_argument("cluster: empty cluster");
    }
}

ClusterAssignment compute_offsets(const std::vector<int>& word_ids) {
    ClusterAssignment a;
    a.offsets.reserve(word_ids.size());
    int maxw = -1;
    for (int w : word_ids) {
        a.offsets.push_back(w < 0 ? -1 : w);
        maxw = std::max(maxw, w);
    }
    if (maxw < 0) throw std::invalid_argument("compute_offsets: no non-special tokens");
    a.k = maxw + 1;
    a.validate();
    return a;
}

ClusterAssignment chunk_offsets(const std::vector<int>& word_ids, int chunk_size) {
    if (chunk_size < 1) throw std::invalid_argument("chunk_offsets: chunk_size must be positive");
    ClusterAssignment a;
    a.offsets.reserve(word_ids.size());
    int seen = 0;
    for (int w : word_ids) {
        if (w < 0) {
            a.offsets.push_back(-1);
        } else {
            a.offsets.push_back(seen / chunk_size);
            ++seen;
        }
    }
    if (seen == 0) throw std::invalid_argument("chunk_offsets: no non-special tokens");
    a.k = (seen + chunk_size - 1) / chunk_size;
    a.validate();
    return a;
}

Tensor aggregate(const Tensor& token_feats, const ClusterAssignment& assignment) {
    assignment.validate();
    if (token_feats.ndim() != 2 ||
        token_feats.rows() != static_cast<int>(assignment.offsets.size())) {
        throw std::invalid_argument("aggregate: feature rows must match offsets");
    }
    const int t = token_feats.rows();
    const int k = assignment.k;
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int o : assignment.offsets) {
        if (o >= 0) ++counts[static_cast<std::size_t>(o)];
    }
    // Constant pooling matrix; matmul's backward yields the 1/|cluster| rule.
    Tensor pool = Tensor::zeros({k, t});
    for (int i = 0; i < t; ++i) {
        const int o = assignment.offsets[static_cast<std::size_t>(i)];
        if (o < 0) continue;
        pool.vec()[static_cast<std::size_t>(o) * t + i] = 1.0 / counts[static_cast<std::size_t>(o)];
    }
    return matmul(pool, token_feats);
}

}  // namespace slu
