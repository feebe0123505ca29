#pragma once

// Dense float64 tensors with reverse-mode autodiff on a single global tape.
// Row-major flat storage, value semantics with shared buffers. No implicit
// broadcasting; the few broadcast-style ops (add_channels, expand_to) are
// explicit.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace slu {

using Rng = std::mt19937_64;

// Finiteness and shape assertions on every op output. On by default; the
// trainer may switch it off for long runs.
bool& checked_mode();

// When false, no tape nodes are recorded and requires_grad does not propagate.
bool& grad_enabled();

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev_; }
    bool prev_;
};

class Tensor {
public:
    std::vector<int> shape;
    std::shared_ptr<std::vector<double>> data;
    // Grad buffer lives behind a shared slot so copies made before the buffer
    // is allocated still observe it. The buffer itself is allocated lazily.
    std::shared_ptr<std::shared_ptr<std::vector<double>>> grad;
    bool requires_grad = false;
    int node = -1;  // producing tape node, -1 for leaves

    Tensor() = default;

    static Tensor zeros(const std::vector<int>& shape, bool requires_grad = false);
    static Tensor full(const std::vector<int>& shape, double value, bool requires_grad = false);
    static Tensor ones(const std::vector<int>& shape, bool requires_grad = false);
    static Tensor from_data(const std::vector<int>& shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(const std::vector<int>& shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false);
    static Tensor uniform(const std::vector<int>& shape, Rng& rng, double lo, double hi,
                          bool requires_grad = false);

    bool defined() const { return static_cast<bool>(data); }
    std::int64_t numel() const;
    int dim(int i) const;
    int rows() const { return dim(0); }
    int cols() const { return dim(1); }
    int ndim() const { return static_cast<int>(shape.size()); }

    std::vector<double>& vec() { return *data; }
    const std::vector<double>& vec() const { return *data; }
    double value() const;  // scalar read, throws if numel != 1
    double at(std::initializer_list<int> idx) const;

    // Grad buffer helpers. ensure_grad allocates zeros if absent.
    void ensure_grad() const;
    void zero_grad() const;
    bool has_grad() const { return grad && *grad; }
    std::vector<double>& gradvec() const;
};

// ---------------------------------------------------------------------------
// Tape

struct TapeNode {
    const char* op;
    std::function<void()> backward;
};

class Tape {
public:
    int record(const char* op, std::function<void()> backward);
    // Seeds d(loss)/d(loss) = 1 and walks all nodes once, in reverse order.
    // Throws on non-scalar or detached loss, or if already consumed.
    void backward_from(const Tensor& loss);
    void reset();
    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    std::vector<TapeNode> nodes_;
    bool consumed_ = false;
};

Tape& tape();

// Convenience wrapper matching the usual call style.
inline void backward(const Tensor& loss) { tape().backward_from(loss); }

// ---------------------------------------------------------------------------
// Elementwise and scalar ops

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor reciprocal(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& x, const std::vector<int>& shape);
Tensor transpose2d(const Tensor& x);
Tensor slice_rows(const Tensor& x, int offset, int count);
Tensor slice_cols(const Tensor& x, int offset, int count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Packs scalar tensors into an [rows, cols] matrix, row-major order.
Tensor stack_scalars(const std::vector<Tensor>& scalars, int rows, int cols);
// Broadcasts a scalar tensor to an arbitrary shape (backward sums).
Tensor expand_to(const Tensor& s, const std::vector<int>& shape);

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor row_sum(const Tensor& x);                  // [r,c] -> [r]
Tensor row_mean(const Tensor& x);                 // [r,c] -> [r]
Tensor row_max(const Tensor& x);                  // [r,c] -> [r], grad to argmax
Tensor row_topk_mean(const Tensor& x, int k);     // mean of k largest per row
Tensor diag(const Tensor& x);                     // [n,n] -> [n]

// ---------------------------------------------------------------------------
// Linear algebra & NN primitives

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
// Row-wise L2 normalisation; zero rows map to zero rows.
Tensor l2_normalize_rows(const Tensor& x);

// Boolean attention mask, true = attend allowed.
struct AttnMask {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> allow;
    static AttnMask causal(int n);
    bool allowed(int i, int j) const { return allow[static_cast<std::size_t>(i) * cols + j] != 0; }
};

// softmax(q k^T / sqrt(d)) v with optional mask; fully masked rows yield zeros.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::optional<AttnMask>& mask = std::nullopt);

// ---------------------------------------------------------------------------
// 3-D helpers for the skeleton frontend

Tensor batched_adj_mul(const Tensor& adj, const Tensor& x);   // [N,N] x [L,N,C] -> [L,N,C]
Tensor shift_frames(const Tensor& x, int offset);             // zero-padded shift along axis 0
Tensor mul_channels(const Tensor& x, const Tensor& k);        // x[...,C] * k[C]
Tensor add_channels(const Tensor& x, const Tensor& b);        // x[...,C] + b[C]
Tensor mean_axis1_3d(const Tensor& x);                        // [L,N,C] -> [L,C]
Tensor repeat_axis1_3d(const Tensor& x, int n);               // [L,C] -> [L,n,C]

// ---------------------------------------------------------------------------
// Gradient checking

// Central-difference check of d f / d inputs. f must rebuild the loss from the
// current contents of `inputs` on every call. Returns the max over all
// coordinates of |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor>& inputs, double eps);

// ---------------------------------------------------------------------------
// Misc helpers

void check_finite(const Tensor& t, const char* where);
std::int64_t shape_numel(const std::vector<int>& shape);
bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace slu
