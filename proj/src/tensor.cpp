#include "slu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace slu {

bool& checked_mode() {
    static bool on = true;
    return on;
}

bool& grad_enabled() {
    static bool on = true;
    return on;
}

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
        n *= d;
    }
    return n;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void check_finite(const Tensor& t, const char* where) {
    if (!checked_mode()) return;
    for (double v : t.vec()) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(where) + ": non-finite value");
        }
    }
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    t.grad = std::make_shared<std::shared_ptr<std::vector<double>>>();
    t.requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(const std::vector<int>& shape, double value, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    std::fill(t.vec().begin(), t.vec().end(), value);
    return t;
}

Tensor Tensor::ones(const std::vector<int>& shape, bool requires_grad) {
    return full(shape, 1.0, requires_grad);
}

Tensor Tensor::from_data(const std::vector<int>& shape, std::vector<double> values,
                         bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw std::invalid_argument("tensor: shape does not match value count");
    }
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.grad = std::make_shared<std::shared_ptr<std::vector<double>>>();
    t.requires_grad = requires_grad;
    check_finite(t, "from_data");
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(const std::vector<int>& shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.vec()) v = dist(rng);
    return t;
}

Tensor Tensor::uniform(const std::vector<int>& shape, Rng& rng, double lo, double hi,
                       bool requires_grad) {
    Tensor t = zeros(shape, requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.vec()) v = dist(rng);
    return t;
}

std::int64_t Tensor::numel() const { return data ? static_cast<std::int64_t>(data->size()) : 0; }

int Tensor::dim(int i) const {
    if (i < 0 || i >= ndim()) throw std::out_of_range("tensor: dim index");
    return shape[static_cast<std::size_t>(i)];
}

double Tensor::value() const {
    if (numel() != 1) throw std::runtime_error("tensor: value() on non-scalar");
    return (*data)[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) throw std::invalid_argument("tensor: at() rank");
    std::size_t flat = 0;
    int d = 0;
    for (int i : idx) {
        if (i < 0 || i >= shape[static_cast<std::size_t>(d)]) throw std::out_of_range("tensor: at()");
        flat = flat * static_cast<std::size_t>(shape[static_cast<std::size_t>(d)]) + static_cast<std::size_t>(i);
        ++d;
    }
    return (*data)[flat];
}

void Tensor::ensure_grad() const {
    if (!data || !grad) throw std::runtime_error("tensor: undefined");
    if (!*grad) *grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
}

void Tensor::zero_grad() const {
    if (grad && *grad) std::fill((*grad)->begin(), (*grad)->end(), 0.0);
}

std::vector<double>& Tensor::gradvec() const {
    ensure_grad();
    return **grad;
}

// ---------------------------------------------------------------------------
// Tape

Tape& tape() {
    static Tape t;
    return t;
}

int Tape::record(const char* op, std::function<void()> backward) {
    nodes_.push_back(TapeNode{op, std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward_from(const Tensor& loss) {
    if (loss.numel() != 1) throw std::runtime_error("backward: loss must be scalar");
    if (loss.node < 0) throw std::runtime_error("backward: loss is detached from the tape");
    if (consumed_) throw std::runtime_error("backward: tape already consumed; reset first");
    loss.gradvec()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
    consumed_ = true;
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

namespace {

bool track_grad(std::initializer_list<const Tensor*> ins) {
    if (!grad_enabled()) return false;
    for (const Tensor* t : ins) {
        if (t->requires_grad) return true;
    }
    return false;
}

// Records a node when tracking applies and marks the output accordingly.
void finish(Tensor& out, const char* op, std::initializer_list<const Tensor*> ins,
            std::function<void()> backward) {
    if (track_grad(ins)) {
        out.requires_grad = true;
        out.node = tape().record(op, std::move(backward));
    }
    check_finite(out, op);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.vec().size();
    for (std::size_t i = 0; i < n; ++i) out.vec()[i] = a.vec()[i] + b.vec()[i];
    finish(out, "add", {&a, &b}, [a, b, out]() {
        const auto& g = out.gradvec();
        if (a.requires_grad) {
            auto& ga = a.gradvec();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad) {
            auto& gb = b.gradvec();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.vec().size();
    for (std::size_t i = 0; i < n; ++i) out.vec()[i] = a.vec()[i] - b.vec()[i];
    finish(out, "sub", {&a, &b}, [a, b, out]() {
        const auto& g = out.gradvec();
        if (a.requires_grad) {
            auto& ga = a.gradvec();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad) {
            auto& gb = b.gradvec();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = Tensor::zeros(a.shape);
    const std::size_t n = a.vec().size();
    for (std::size_t i = 0; i < n; ++i) out.vec()[i] = a.vec()[i] * b.vec()[i];
    finish(out, "mul", {&a, &b}, [a, b, out]() {
        const auto& g = out.gradvec();
        if (a.requires_grad) {
            auto& ga = a.gradvec();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.vec()[i];
        }
        if (b.requires_grad) {
            auto& gb = b.gradvec();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.vec()[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.vec().size();
    for (std::size_t i = 0; i < n; ++i) out.vec()[i] = x.vec()[i] * c;
    finish(out, "scale", {&x}, [x, out, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
    });
    return out;
}

Tensor add_scalar(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.vec().size();
    for (std::size_t i = 0; i < n; ++i) out.vec()[i] = x.vec()[i] + c;
    finish(out, "add_scalar", {&x}, [x, out]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    return out;
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

namespace {

// Shared skeleton for y = f(x) elementwise with dy/dx derived from (x, y).
Tensor unary_op(const Tensor& x, const char* name, double (*fwd)(double),
                double (*dydx)(double x, double y)) {
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.vec().size();
    for (std::size_t i = 0; i < n; ++i) out.vec()[i] = fwd(x.vec()[i]);
    finish(out, name, {&x}, [x, out, dydx]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * dydx(x.vec()[i], out.vec()[i]);
        }
    });
    return out;
}

}  // namespace

Tensor exp(const Tensor& x) {
    return unary_op(x, "exp", [](double v) { return std::exp(v); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_op(x, "log", [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
    return unary_op(x, "tanh", [](double v) { return std::tanh(v); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
    return unary_op(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                    [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    return unary_op(
        x, "gelu",
        [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
            return cdf + v * pdf;
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, "sigmoid",
        [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
    return unary_op(
        x, "softplus",
        [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
        [](double v, double) {
            return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        });
}

Tensor reciprocal(const Tensor& x) {
    return unary_op(x, "reciprocal", [](double v) { return 1.0 / v; },
                    [](double, double y) { return -y * y; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    Tensor out = Tensor::zeros(x.shape);
    const std::size_t n = x.vec().size();
    for (std::size_t i = 0; i < n; ++i) out.vec()[i] = std::min(std::max(x.vec()[i], lo), hi);
    finish(out, "clamp", {&x}, [x, out, lo, hi]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x.vec()[i] > lo && x.vec()[i] < hi) gx[i] += g[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& x, const std::vector<int>& shape) {
    if (shape_numel(shape) != x.numel()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor out = Tensor::zeros(shape);
    out.vec() = x.vec();
    finish(out, "reshape", {&x}, [x, out]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    return out;
}

Tensor transpose2d(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("transpose2d: rank must be 2");
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out.vec()[static_cast<std::size_t>(j) * r + i] = x.vec()[static_cast<std::size_t>(i) * c + j];
    finish(out, "transpose2d", {&x}, [x, out, r, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                gx[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
    });
    return out;
}

Tensor slice_rows(const Tensor& x, int offset, int count) {
    if (x.ndim() < 2) throw std::invalid_argument("slice_rows: rank must be >= 2");
    const int r = x.dim(0);
    if (offset < 0 || count <= 0 || offset + count > r) throw std::out_of_range("slice_rows: range");
    const std::size_t stride = static_cast<std::size_t>(x.numel() / r);
    std::vector<int> shp = x.shape;
    shp[0] = count;
    Tensor out = Tensor::zeros(shp);
    std::copy(x.vec().begin() + offset * stride, x.vec().begin() + (offset + count) * stride,
              out.vec().begin());
    finish(out, "slice_rows", {&x}, [x, out, offset, stride]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (std::size_t i = 0; i < g.size(); ++i) gx[offset * stride + i] += g[i];
    });
    return out;
}

Tensor slice_cols(const Tensor& x, int offset, int count) {
    if (x.ndim() != 2) throw std::invalid_argument("slice_cols: rank must be 2");
    const int r = x.rows(), c = x.cols();
    if (offset < 0 || count <= 0 || offset + count > c) throw std::out_of_range("slice_cols: range");
    Tensor out = Tensor::zeros({r, count});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < count; ++j)
            out.vec()[static_cast<std::size_t>(i) * count + j] =
                x.vec()[static_cast<std::size_t>(i) * c + offset + j];
    finish(out, "slice_cols", {&x}, [x, out, offset, count, r, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < count; ++j)
                gx[static_cast<std::size_t>(i) * c + offset + j] +=
                    g[static_cast<std::size_t>(i) * count + j];
    });
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    std::vector<int> shp = parts[0].shape;
    if (shp.size() < 2) throw std::invalid_argument("concat_rows: rank must be >= 2");
    int total = 0;
    const std::size_t stride = static_cast<std::size_t>(parts[0].numel() / parts[0].dim(0));
    for (const Tensor& p : parts) {
        std::vector<int> tail_a(p.shape.begin() + 1, p.shape.end());
        std::vector<int> tail_b(shp.begin() + 1, shp.end());
        if (tail_a != tail_b) throw std::invalid_argument("concat_rows: trailing shape mismatch");
        total += p.dim(0);
    }
    shp[0] = total;
    Tensor out = Tensor::zeros(shp);
    std::size_t pos = 0;
    for (const Tensor& p : parts) {
        std::copy(p.vec().begin(), p.vec().end(), out.vec().begin() + pos);
        pos += p.vec().size();
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.requires_grad;
    if (grad_enabled() && any) {
        out.requires_grad = true;
        std::vector<Tensor> ps = parts;
        Tensor oc = out;
        out.node = tape().record("concat_rows", [ps, oc]() {
            const auto& g = oc.gradvec();
            std::size_t pos2 = 0;
            for (const Tensor& p : ps) {
                if (p.requires_grad) {
                    auto& gp = p.gradvec();
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[pos2 + i];
                }
                pos2 += p.vec().size();
            }
        });
    }
    (void)stride;
    check_finite(out, "concat_rows");
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int r = parts[0].dim(0);
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != r) throw std::invalid_argument("concat_cols: row mismatch");
        total += p.cols();
    }
    Tensor out = Tensor::zeros({r, total});
    int off = 0;
    for (const Tensor& p : parts) {
        const int c = p.cols();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                out.vec()[static_cast<std::size_t>(i) * total + off + j] =
                    p.vec()[static_cast<std::size_t>(i) * c + j];
        off += c;
    }
    bool any = false;
    for (const Tensor& p : parts) any = any || p.requires_grad;
    if (grad_enabled() && any) {
        out.requires_grad = true;
        std::vector<Tensor> ps = parts;
        Tensor oc = out;
        out.node = tape().record("concat_cols", [ps, oc, r, total]() {
            const auto& g = oc.gradvec();
            int off2 = 0;
            for (const Tensor& p : ps) {
                const int c = p.cols();
                if (p.requires_grad) {
                    auto& gp = p.gradvec();
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j)
                            gp[static_cast<std::size_t>(i) * c + j] +=
                                g[static_cast<std::size_t>(i) * total + off2 + j];
                }
                off2 += c;
            }
        });
    }
    check_finite(out, "concat_cols");
    return out;
}

Tensor stack_scalars(const std::vector<Tensor>& scalars, int rows, int cols) {
    if (static_cast<int>(scalars.size()) != rows * cols) {
        throw std::invalid_argument("stack_scalars: count mismatch");
    }
    Tensor out = Tensor::zeros({rows, cols});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].numel() != 1) throw std::invalid_argument("stack_scalars: non-scalar entry");
        out.vec()[i] = scalars[i].vec()[0];
    }
    bool any = false;
    for (const Tensor& s : scalars) any = any || s.requires_grad;
    if (grad_enabled() && any) {
        out.requires_grad = true;
        std::vector<Tensor> ss = scalars;
        Tensor oc = out;
        out.node = tape().record("stack_scalars", [ss, oc]() {
            const auto& g = oc.gradvec();
            for (std::size_t i = 0; i < ss.size(); ++i) {
                if (ss[i].requires_grad) ss[i].gradvec()[0] += g[i];
            }
        });
    }
    check_finite(out, "stack_scalars");
    return out;
}

Tensor expand_to(const Tensor& s, const std::vector<int>& shape) {
    if (s.numel() != 1) throw std::invalid_argument("expand_to: source must be scalar");
    Tensor out = Tensor::full(shape, s.vec()[0]);
    finish(out, "expand_to", {&s}, [s, out]() {
        const auto& g = out.gradvec();
        double acc = 0.0;
        for (double v : g) acc += v;
        s.gradvec()[0] += acc;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.vec()) acc += v;
    Tensor out = Tensor::from_data({1}, {acc});
    finish(out, "sum_all", {&x}, [x, out]() {
        const double g = out.gradvec()[0];
        auto& gx = x.gradvec();
        for (double& v : gx) v += g;
    });
    return out;
}

Tensor mean_all(const Tensor& x) {
    const double n = static_cast<double>(x.numel());
    double acc = 0.0;
    for (double v : x.vec()) acc += v;
    Tensor out = Tensor::from_data({1}, {acc / n});
    finish(out, "mean_all", {&x}, [x, out, n]() {
        const double g = out.gradvec()[0] / n;
        auto& gx = x.gradvec();
        for (double& v : gx) v += g;
    });
    return out;
}

Tensor row_sum(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("row_sum: rank must be 2");
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({r});
    for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += x.vec()[static_cast<std::size_t>(i) * c + j];
        out.vec()[i] = acc;
    }
    finish(out, "row_sum", {&x}, [x, out, r, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(i) * c + j] += g[i];
    });
    return out;
}

Tensor row_mean(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("row_mean: rank must be 2");
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({r});
    for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += x.vec()[static_cast<std::size_t>(i) * c + j];
        out.vec()[i] = acc / c;
    }
    finish(out, "row_mean", {&x}, [x, out, r, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(i) * c + j] += g[i] / c;
    });
    return out;
}

Tensor row_max(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("row_max: rank must be 2");
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({r});
    std::vector<int> arg(static_cast<std::size_t>(r), 0);
    for (int i = 0; i < r; ++i) {
        int best = 0;
        double bv = x.vec()[static_cast<std::size_t>(i) * c];
        for (int j = 1; j < c; ++j) {
            const double v = x.vec()[static_cast<std::size_t>(i) * c + j];
            if (v > bv) {
                bv = v;
                best = j;
            }
        }
        out.vec()[i] = bv;
        arg[static_cast<std::size_t>(i)] = best;
    }
    finish(out, "row_max", {&x}, [x, out, arg, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (std::size_t i = 0; i < arg.size(); ++i)
            gx[i * c + static_cast<std::size_t>(arg[i])] += g[i];
    });
    return out;
}

Tensor row_topk_mean(const Tensor& x, int k) {
    if (x.ndim() != 2) throw std::invalid_argument("row_topk_mean: rank must be 2");
    const int r = x.rows(), c = x.cols();
    if (k < 1 || k > c) throw std::invalid_argument("row_topk_mean: k out of range");
    Tensor out = Tensor::zeros({r});
    std::vector<int> picks(static_cast<std::size_t>(r) * k);
    std::vector<int> order(static_cast<std::size_t>(c));
    for (int i = 0; i < r; ++i) {
        std::iota(order.begin(), order.end(), 0);
        const double* row = x.vec().data() + static_cast<std::size_t>(i) * c;
        // Ties resolved by lower index for a deterministic selection.
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [row](int a, int b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b;
        });
        double acc = 0.0;
        for (int t = 0; t < k; ++t) {
            picks[static_cast<std::size_t>(i) * k + t] = order[static_cast<std::size_t>(t)];
            acc += row[order[static_cast<std::size_t>(t)]];
        }
        out.vec()[i] = acc / k;
    }
    finish(out, "row_topk_mean", {&x}, [x, out, picks, k, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        const std::size_t r2 = g.size();
        for (std::size_t i = 0; i < r2; ++i)
            for (int t = 0; t < k; ++t)
                gx[i * c + static_cast<std::size_t>(picks[i * k + t])] += g[i] / k;
    });
    return out;
}

Tensor diag(const Tensor& x) {
    if (x.ndim() != 2 || x.rows() != x.cols()) throw std::invalid_argument("diag: square matrix required");
    const int n = x.rows();
    Tensor out = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) out.vec()[i] = x.vec()[static_cast<std::size_t>(i) * n + i];
    finish(out, "diag", {&x}, [x, out, n]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (int i = 0; i < n; ++i) gx[static_cast<std::size_t>(i) * n + i] += g[i];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra & NN primitives

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw std::invalid_argument("matmul: rank must be 2");
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    const double* pa = a.vec().data();
    const double* pb = b.vec().data();
    double* po = out.vec().data();
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const double av = pa[static_cast<std::size_t>(i) * k + kk];
            const double* brow = pb + static_cast<std::size_t>(kk) * n;
            double* orow = po + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    finish(out, "matmul", {&a, &b}, [a, b, out, m, k, n]() {
        const double* g = out.gradvec().data();
        if (a.requires_grad) {
            double* ga = a.gradvec().data();
            const double* pb2 = b.vec().data();
            // dA = G B^T
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double gv = g[static_cast<std::size_t>(i) * n + j];
                    if (gv == 0.0) continue;
                    const double* brow = pb2;
                    for (int kk = 0; kk < k; ++kk)
                        ga[static_cast<std::size_t>(i) * k + kk] +=
                            gv * brow[static_cast<std::size_t>(kk) * n + j];
                }
        }
        if (b.requires_grad) {
            double* gb = b.gradvec().data();
            const double* pa2 = a.vec().data();
            // dB = A^T G
            for (int kk = 0; kk < k; ++kk)
                for (int i = 0; i < m; ++i) {
                    const double av = pa2[static_cast<std::size_t>(i) * k + kk];
                    if (av == 0.0) continue;
                    const double* grow = g + static_cast<std::size_t>(i) * n;
                    double* brow = gb + static_cast<std::size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
    return out;
}

namespace {

std::pair<std::size_t, int> lastdim_slices(const Tensor& x, const char* who) {
    if (x.ndim() < 1) throw std::invalid_argument(std::string(who) + ": rank must be >= 1");
    const int n = x.shape.back();
    return {static_cast<std::size_t>(x.numel() / n), n};
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x) {
    auto [slices, n] = lastdim_slices(x, "softmax_lastdim");
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t s = 0; s < slices; ++s) {
        const double* in = x.vec().data() + s * n;
        double* o = out.vec().data() + s * n;
        double mx = in[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            denom += o[j];
        }
        for (int j = 0; j < n; ++j) o[j] /= denom;
    }
    finish(out, "softmax_lastdim", {&x}, [x, out, slices = slices, n = n]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (std::size_t s = 0; s < slices; ++s) {
            const double* y = out.vec().data() + s * n;
            const double* go = g.data() + s * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += go[j] * y[j];
            for (int j = 0; j < n; ++j) gx[s * n + j] += y[j] * (go[j] - dot);
        }
    });
    return out;
}

Tensor log_softmax_lastdim(const Tensor& x) {
    auto [slices, n] = lastdim_slices(x, "log_softmax_lastdim");
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t s = 0; s < slices; ++s) {
        const double* in = x.vec().data() + s * n;
        double* o = out.vec().data() + s * n;
        double mx = in[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) denom += std::exp(in[j] - mx);
        const double lse = mx + std::log(denom);
        for (int j = 0; j < n; ++j) o[j] = in[j] - lse;
    }
    finish(out, "log_softmax_lastdim", {&x}, [x, out, slices = slices, n = n]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (std::size_t s = 0; s < slices; ++s) {
            const double* y = out.vec().data() + s * n;
            const double* go = g.data() + s * n;
            double gsum = 0.0;
            for (int j = 0; j < n; ++j) gsum += go[j];
            for (int j = 0; j < n; ++j) gx[s * n + j] += go[j] - std::exp(y[j]) * gsum;
        }
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    auto [slices, n] = lastdim_slices(x, "layer_norm");
    if (gamma.numel() != n || beta.numel() != n) throw std::invalid_argument("layer_norm: affine size mismatch");
    Tensor out = Tensor::zeros(x.shape);
    // Cache normalised values and inverse stddev for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(x.vec().size());
    auto inv = std::make_shared<std::vector<double>>(slices);
    for (std::size_t s = 0; s < slices; ++s) {
        const double* in = x.vec().data() + s * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += in[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = in[j] - mean;
            var += d * d;
        }
        var /= n;
        const double iv = 1.0 / std::sqrt(var + eps);
        (*inv)[s] = iv;
        for (int j = 0; j < n; ++j) {
            const double h = (in[j] - mean) * iv;
            (*xhat)[s * n + j] = h;
            out.vec()[s * n + j] = h * gamma.vec()[j] + beta.vec()[j];
        }
    }
    finish(out, "layer_norm", {&x, &gamma, &beta},
           [x, gamma, beta, out, xhat, inv, slices = slices, n = n]() {
               const auto& g = out.gradvec();
               for (std::size_t s = 0; s < slices; ++s) {
                   const double* go = g.data() + s * n;
                   const double* h = xhat->data() + s * n;
                   if (x.requires_grad) {
                       auto& gx = x.gradvec();
                       double mean_dh = 0.0, mean_dh_h = 0.0;
                       for (int j = 0; j < n; ++j) {
                           const double dh = go[j] * gamma.vec()[j];
                           mean_dh += dh;
                           mean_dh_h += dh * h[j];
                       }
                       mean_dh /= n;
                       mean_dh_h /= n;
                       for (int j = 0; j < n; ++j) {
                           const double dh = go[j] * gamma.vec()[j];
                           gx[s * n + j] += (*inv)[s] * (dh - mean_dh - h[j] * mean_dh_h);
                       }
                   }
                   if (gamma.requires_grad) {
                       auto& gg = gamma.gradvec();
                       for (int j = 0; j < n; ++j) gg[j] += go[j] * h[j];
                   }
                   if (beta.requires_grad) {
                       auto& gb = beta.gradvec();
                       for (int j = 0; j < n; ++j) gb[j] += go[j];
                   }
               }
           });
    return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw std::invalid_argument("embedding_lookup: table rank must be 2");
    const int v = table.rows(), d = table.cols();
    for (int id : ids) {
        if (id < 0 || id >= v) throw std::out_of_range("embedding_lookup: id out of range");
    }
    const int t = static_cast<int>(ids.size());
    if (t == 0) throw std::invalid_argument("embedding_lookup: empty id list");
    Tensor out = Tensor::zeros({t, d});
    for (int i = 0; i < t; ++i)
        std::copy(table.vec().begin() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d,
                  table.vec().begin() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)] + 1) * d,
                  out.vec().begin() + static_cast<std::size_t>(i) * d);
    finish(out, "embedding_lookup", {&table}, [table, out, ids, d]() {
        const auto& g = out.gradvec();
        auto& gt = table.gradvec();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (int j = 0; j < d; ++j)
                gt[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
    });
    return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
    if (x.ndim() != 2) throw std::invalid_argument("l2_normalize_rows: rank must be 2");
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({r, c});
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const double* in = x.vec().data() + static_cast<std::size_t>(i) * c;
        double sq = 0.0;
        for (int j = 0; j < c; ++j) sq += in[j] * in[j];
        const double nrm = std::sqrt(sq);
        (*norms)[static_cast<std::size_t>(i)] = nrm;
        if (nrm > 0.0)
            for (int j = 0; j < c; ++j) out.vec()[static_cast<std::size_t>(i) * c + j] = in[j] / nrm;
    }
    finish(out, "l2_normalize_rows", {&x}, [x, out, norms, r, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (int i = 0; i < r; ++i) {
            const double nrm = (*norms)[static_cast<std::size_t>(i)];
            if (nrm == 0.0) continue;
            const double* y = out.vec().data() + static_cast<std::size_t>(i) * c;
            const double* go = g.data() + static_cast<std::size_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += y[j] * go[j];
            for (int j = 0; j < c; ++j)
                gx[static_cast<std::size_t>(i) * c + j] += (go[j] - y[j] * dot) / nrm;
        }
    });
    return out;
}

AttnMask AttnMask::causal(int n) {
    AttnMask m;
    m.rows = n;
    m.cols = n;
    m.allow.assign(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) m.allow[static_cast<std::size_t>(i) * n + j] = 1;
    return m;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const std::optional<AttnMask>& mask) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) {
        throw std::invalid_argument("attention: rank must be 2");
    }
    if (q.cols() != k.cols() || k.rows() != v.rows()) {
        throw std::invalid_argument("attention: shape mismatch");
    }
    const int lq = q.rows(), lk = k.rows(), d = q.cols();
    if (mask && (mask->rows != lq || mask->cols != lk)) {
        throw std::invalid_argument("attention: mask shape mismatch");
    }
    Tensor scores = scale(matmul(q, transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    if (mask) {
        // Large negative bias on blocked entries; underflows to zero weight.
        Tensor bias = Tensor::zeros({lq, lk});
        std::vector<double> rowkeep(static_cast<std::size_t>(lq) * v.cols(), 1.0);
        bool any_dead = false;
        for (int i = 0; i < lq; ++i) {
            bool alive = false;
            for (int j = 0; j < lk; ++j) {
                if (mask->allowed(i, j)) {
                    alive = true;
                } else {
                    bias.vec()[static_cast<std::size_t>(i) * lk + j] = -1e30;
                }
            }
            if (!alive) {
                any_dead = true;
                for (int j = 0; j < v.cols(); ++j)
                    rowkeep[static_cast<std::size_t>(i) * v.cols() + j] = 0.0;
            }
        }
        scores = add(scores, bias);
        Tensor w = softmax_lastdim(scores);
        Tensor out = matmul(w, v);
        if (any_dead) out = mul(out, Tensor::from_data({lq, v.cols()}, rowkeep));
        return out;
    }
    return matmul(softmax_lastdim(scores), v);
}

// ---------------------------------------------------------------------------
// 3-D helpers

Tensor batched_adj_mul(const Tensor& adj, const Tensor& x) {
    if (adj.ndim() != 2 || x.ndim() != 3) throw std::invalid_argument("batched_adj_mul: rank");
    const int n = adj.rows();
    if (adj.cols() != n || x.dim(1) != n) throw std::invalid_argument("batched_adj_mul: size mismatch");
    const int l = x.dim(0), c = x.dim(2);
    Tensor out = Tensor::zeros({l, n, c});
    const double* pa = adj.vec().data();
    for (int f = 0; f < l; ++f) {
        const double* xf = x.vec().data() + static_cast<std::size_t>(f) * n * c;
        double* of = out.vec().data() + static_cast<std::size_t>(f) * n * c;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double a = pa[static_cast<std::size_t>(i) * n + j];
                if (a == 0.0) continue;
                for (int ch = 0; ch < c; ++ch)
                    of[static_cast<std::size_t>(i) * c + ch] += a * xf[static_cast<std::size_t>(j) * c + ch];
            }
    }
    finish(out, "batched_adj_mul", {&adj, &x}, [adj, x, out, l, n, c]() {
        const auto& g = out.gradvec();
        const double* pa2 = adj.vec().data();
        if (x.requires_grad) {
            auto& gx = x.gradvec();
            for (int f = 0; f < l; ++f) {
                const double* gf = g.data() + static_cast<std::size_t>(f) * n * c;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double a = pa2[static_cast<std::size_t>(i) * n + j];
                        if (a == 0.0) continue;
                        for (int ch = 0; ch < c; ++ch)
                            gx[(static_cast<std::size_t>(f) * n + j) * c + ch] +=
                                a * gf[static_cast<std::size_t>(i) * c + ch];
                    }
            }
        }
        if (adj.requires_grad) {
            auto& ga = adj.gradvec();
            for (int f = 0; f < l; ++f) {
                const double* gf = g.data() + static_cast<std::size_t>(f) * n * c;
                const double* xf = x.vec().data() + static_cast<std::size_t>(f) * n * c;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int ch = 0; ch < c; ++ch)
                            acc += gf[static_cast<std::size_t>(i) * c + ch] *
                                   xf[static_cast<std::size_t>(j) * c + ch];
                        ga[static_cast<std::size_t>(i) * n + j] += acc;
                    }
            }
        }
    });
    return out;
}

Tensor shift_frames(const Tensor& x, int offset) {
    if (x.ndim() != 3) throw std::invalid_argument("shift_frames: rank must be 3");
    const int l = x.dim(0);
    const std::size_t stride = static_cast<std::size_t>(x.numel() / l);
    Tensor out = Tensor::zeros(x.shape);
    for (int t = 0; t < l; ++t) {
        const int src = t + offset;
        if (src < 0 || src >= l) continue;
        std::copy(x.vec().begin() + src * stride, x.vec().begin() + (src + 1) * stride,
                  out.vec().begin() + t * stride);
    }
    finish(out, "shift_frames", {&x}, [x, out, l, stride, offset]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (int t = 0; t < l; ++t) {
            const int src = t + offset;
            if (src < 0 || src >= l) continue;
            for (std::size_t i = 0; i < stride; ++i) gx[src * stride + i] += g[t * stride + i];
        }
    });
    return out;
}

Tensor mul_channels(const Tensor& x, const Tensor& k) {
    if (x.ndim() < 1 || k.ndim() != 1) throw std::invalid_argument("mul_channels: rank");
    const int c = x.shape.back();
    if (k.numel() != c) throw std::invalid_argument("mul_channels: channel mismatch");
    const std::size_t outer = static_cast<std::size_t>(x.numel() / c);
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (int j = 0; j < c; ++j) out.vec()[o * c + j] = x.vec()[o * c + j] * k.vec()[j];
    finish(out, "mul_channels", {&x, &k}, [x, k, out, outer, c]() {
        const auto& g = out.gradvec();
        if (x.requires_grad) {
            auto& gx = x.gradvec();
            for (std::size_t o = 0; o < outer; ++o)
                for (int j = 0; j < c; ++j) gx[o * c + j] += g[o * c + j] * k.vec()[j];
        }
        if (k.requires_grad) {
            auto& gk = k.gradvec();
            for (std::size_t o = 0; o < outer; ++o)
                for (int j = 0; j < c; ++j) gk[j] += g[o * c + j] * x.vec()[o * c + j];
        }
    });
    return out;
}

Tensor add_channels(const Tensor& x, const Tensor& b) {
    if (x.ndim() < 1 || b.ndim() != 1) throw std::invalid_argument("add_channels: rank");
    const int c = x.shape.back();
    if (b.numel() != c) throw std::invalid_argument("add_channels: channel mismatch");
    const std::size_t outer = static_cast<std::size_t>(x.numel() / c);
    Tensor out = Tensor::zeros(x.shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (int j = 0; j < c; ++j) out.vec()[o * c + j] = x.vec()[o * c + j] + b.vec()[j];
    finish(out, "add_channels", {&x, &b}, [x, b, out, outer, c]() {
        const auto& g = out.gradvec();
        if (x.requires_grad) {
            auto& gx = x.gradvec();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (b.requires_grad) {
            auto& gb = b.gradvec();
            for (std::size_t o = 0; o < outer; ++o)
                for (int j = 0; j < c; ++j) gb[j] += g[o * c + j];
        }
    });
    return out;
}

Tensor mean_axis1_3d(const Tensor& x) {
    if (x.ndim() != 3) throw std::invalid_argument("mean_axis1_3d: rank must be 3");
    const int l = x.dim(0), n = x.dim(1), c = x.dim(2);
    Tensor out = Tensor::zeros({l, c});
    for (int f = 0; f < l; ++f)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                out.vec()[static_cast<std::size_t>(f) * c + j] +=
                    x.vec()[(static_cast<std::size_t>(f) * n + i) * c + j] / n;
    finish(out, "mean_axis1_3d", {&x}, [x, out, l, n, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (int f = 0; f < l; ++f)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    gx[(static_cast<std::size_t>(f) * n + i) * c + j] +=
                        g[static_cast<std::size_t>(f) * c + j] / n;
    });
    return out;
}

Tensor repeat_axis1_3d(const Tensor& x, int n) {
    if (x.ndim() != 2) throw std::invalid_argument("repeat_axis1_3d: rank must be 2");
    if (n <= 0) throw std::invalid_argument("repeat_axis1_3d: n must be positive");
    const int l = x.dim(0), c = x.dim(1);
    Tensor out = Tensor::zeros({l, n, c});
    for (int f = 0; f < l; ++f)
        for (int i = 0; i < n; ++i)
            std::copy(x.vec().begin() + static_cast<std::size_t>(f) * c,
                      x.vec().begin() + static_cast<std::size_t>(f + 1) * c,
                      out.vec().begin() + (static_cast<std::size_t>(f) * n + i) * c);
    finish(out, "repeat_axis1_3d", {&x}, [x, out, l, n, c]() {
        const auto& g = out.gradvec();
        auto& gx = x.gradvec();
        for (int f = 0; f < l; ++f)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j)
                    gx[static_cast<std::size_t>(f) * c + j] +=
                        g[(static_cast<std::size_t>(f) * n + i) * c + j];
    });
    return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor>& inputs, double eps) {
    if (eps < 1e-8 || eps > 1e-4) throw std::invalid_argument("grad_check: eps out of range");
    tape().reset();
    for (Tensor& t : inputs) t.zero_grad();
    Tensor loss = f();
    if (loss.numel() != 1) throw std::runtime_error("grad_check: f must be scalar-valued");
    tape().backward_from(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (Tensor& t : inputs) analytic.push_back(t.gradvec());
    tape().reset();

    double max_err = 0.0;
    NoGradGuard ng;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& vals = inputs[ti].vec();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + eps;
            const double fp = f().value();
            vals[i] = orig - eps;
            const double fm = f().value();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double err = std::abs(analytic[ti][i] - numeric) / std::max(1.0, std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace slu
