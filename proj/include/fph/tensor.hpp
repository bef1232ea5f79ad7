#pragma once

// Minimal reverse-mode automatic differentiation over row-major arrays of
// doubles. A Tensor is a shared handle to a graph node; every op records its
// inputs and a closure that pushes the output gradient back to them. The graph
// is implicit in the parent links and is topologically sorted on backward().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fph/errors.hpp"

#if !defined(NDEBUG) && !defined(FPH_CHECK_FINITE)
#define FPH_CHECK_FINITE 1
#endif

namespace fph {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads self.grad and accumulates into parents' grads.
    std::function<void(Node& self)> backward;

    bool is_leaf() const { return parents.empty(); }

    std::vector<double>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

// Tracks how close the current forward pass came to a nonsmooth point
// (relu input at 0). Used by gradient checks to reject samples near kinks.
struct KinkMonitor {
    bool active = false;
    double min_distance = std::numeric_limits<double>::infinity();
};

inline KinkMonitor& kink_monitor() {
    thread_local KinkMonitor monitor;
    return monitor;
}

inline bool& grad_disabled() {
    thread_local bool disabled = false;
    return disabled;
}

inline void check_finite([[maybe_unused]] const Node& node, [[maybe_unused]] const char* op) {
#if FPH_CHECK_FINITE
    for (double v : node.data) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
#endif
}

} // namespace detail

/// Inside this scope ops record no graph edges (inference only).
class NoGradScope {
public:
    NoGradScope() : saved_(detail::grad_disabled()) { detail::grad_disabled() = true; }
    ~NoGradScope() { detail::grad_disabled() = saved_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    bool saved_;
};

/// RAII scope that records the smallest |relu input| seen on this thread.
class KinkScope {
public:
    KinkScope() {
        auto& m = detail::kink_monitor();
        saved_ = m;
        m.active = true;
        m.min_distance = std::numeric_limits<double>::infinity();
    }
    ~KinkScope() { detail::kink_monitor() = saved_; }
    KinkScope(const KinkScope&) = delete;
    KinkScope& operator=(const KinkScope&) = delete;

    double min_distance() const { return detail::kink_monitor().min_distance; }
    void reset() { detail::kink_monitor().min_distance = std::numeric_limits<double>::infinity(); }

private:
    detail::KinkMonitor saved_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> data(shape_size(shape), 0.0);
        return from(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
        }
        if (shape_size(shape) != data.size()) {
            throw DimensionError("shape " + shape_string(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        }
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor vector(std::vector<double> data, bool requires_grad = false) {
        Shape shape{data.size()};
        return from(std::move(shape), std::move(data), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    std::span<const double> data() const { return node_->data; }
    /// Writable view; only meaningful for leaves (parameters, inputs).
    std::span<double> mutable_data() { return node_->data; }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
    void clear_grad() { node_->grad.clear(); }

    /// True when both handles refer to the same graph node.
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

    detail::Node& node() const { return *node_; }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

// Creates an op output wired to its inputs. The output requires grad iff any
// input does; the backward closure is dropped otherwise.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward, const char* op) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool any = false;
    if (!grad_disabled()) {
        for (const auto& in : inputs) any = any || in.requires_grad();
    }
    node->requires_grad = any;
    if (any) {
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
        node->backward = std::move(backward);
    }
    check_finite(*node, op);
    return Tensor(std::move(node));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

/// out[i] = sum_j W[i,j] * x[j] + b[i]
inline Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
    if (x.rank() != 1 || W.rank() != 2 || b.rank() != 1 || W.dim(1) != x.dim(0) || W.dim(0) != b.dim(0)) {
        throw DimensionError("affine: incompatible shapes x" + shape_string(x.shape()) + ", W" +
                             shape_string(W.shape()) + ", b" + shape_string(b.shape()));
    }
    const std::size_t m = W.dim(0), n = W.dim(1);
    std::vector<double> out(b.data().begin(), b.data().end());
    const double* w = W.data().data();
    const double* xv = x.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += w[i * n + j] * xv[j];
        out[i] += acc;
    }
    return detail::make_result({m}, std::move(out), {x, W, b}, [m, n](detail::Node& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        const double* g = self.grad.data();
        if (bn.requires_grad) {
            auto& gb = bn.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) gb[i] += g[i];
        }
        if (wn.requires_grad) {
            auto& gw = wn.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double gi = g[i];
                for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += gi * xn.data[j];
            }
        }
        if (xn.requires_grad) {
            auto& gx = xn.ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double gi = g[i];
                for (std::size_t j = 0; j < n; ++j) gx[j] += gi * wn.data[i * n + j];
            }
        }
    }, "affine");
}

/// Cross-correlation of a C_in x H x W input with C_out x C_in x k x k kernels.
inline Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t padding) {
    if (x.rank() != 3 || kernels.rank() != 4 || kernels.dim(1) != x.dim(0) || kernels.dim(2) != kernels.dim(3)) {
        throw DimensionError("conv2d: incompatible shapes x" + shape_string(x.shape()) + ", kernels" +
                             shape_string(kernels.shape()));
    }
    if (stride == 0) throw ContractError("conv2d: stride must be positive");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t O = kernels.dim(0), k = kernels.dim(2);
    if (H + 2 * padding < k || W + 2 * padding < k) {
        throw DimensionError("conv2d: non-positive output size for input" + shape_string(x.shape()) +
                             " with kernel " + std::to_string(k) + " and padding " + std::to_string(padding));
    }
    const std::size_t Ho = (H + 2 * padding - k) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - k) / stride + 1;
    const std::size_t R = C * k * k, J = Ho * Wo;

    // im2col: cols[r][j] with r = (c, ky, kx), j = (oy, ox)
    auto cols = std::make_shared<std::vector<double>>(R * J, 0.0);
    const double* xv = x.data().data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                double* row = cols->data() + ((c * k + ky) * k + kx) * J;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                              static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        row[oy * Wo + ox] = xv[(c * H + iy) * W + ix];
                    }
                }
            }
        }
    }

    std::vector<double> out(O * J, 0.0);
    const double* kv = kernels.data().data();
    for (std::size_t o = 0; o < O; ++o) {
        double* orow = out.data() + o * J;
        for (std::size_t r = 0; r < R; ++r) {
            const double w = kv[o * R + r];
            const double* crow = cols->data() + r * J;
            for (std::size_t j = 0; j < J; ++j) orow[j] += w * crow[j];
        }
    }

    return detail::make_result({O, Ho, Wo}, std::move(out), {x, kernels},
        [=](detail::Node& self) {
            auto& xn = *self.parents[0];
            auto& kn = *self.parents[1];
            const double* g = self.grad.data();
            if (kn.requires_grad) {
                auto& gk = kn.ensure_grad();
                for (std::size_t o = 0; o < O; ++o) {
                    const double* grow = g + o * J;
                    for (std::size_t r = 0; r < R; ++r) {
                        const double* crow = cols->data() + r * J;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < J; ++j) acc += grow[j] * crow[j];
                        gk[o * R + r] += acc;
                    }
                }
            }
            if (xn.requires_grad) {
                std::vector<double> dcols(R * J, 0.0);
                for (std::size_t o = 0; o < O; ++o) {
                    const double* grow = g + o * J;
                    for (std::size_t r = 0; r < R; ++r) {
                        const double w = kn.data[o * R + r];
                        double* drow = dcols.data() + r * J;
                        for (std::size_t j = 0; j < J; ++j) drow[j] += w * grow[j];
                    }
                }
                auto& gx = xn.ensure_grad();
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const double* drow = dcols.data() + ((c * k + ky) * k + kx) * J;
                            for (std::size_t oy = 0; oy < Ho; ++oy) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                          static_cast<std::ptrdiff_t>(padding);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t ox = 0; ox < Wo; ++ox) {
                                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                              static_cast<std::ptrdiff_t>(padding);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                    gx[(c * H + iy) * W + ix] += drow[oy * Wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }, "conv2d");
}

/// Adaptive average pooling restricted to exact tiling of the spatial dims.
inline Tensor avgpool2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 3) throw DimensionError("avgpool2d: expected C x H x W input, got " + shape_string(x.shape()));
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (out_h == 0 || out_w == 0 || H % out_h != 0 || W % out_w != 0) {
        throw DimensionError("avgpool2d: input" + shape_string(x.shape()) + " does not tile target " +
                             std::to_string(out_h) + "x" + std::to_string(out_w));
    }
    const std::size_t th = H / out_h, tw = W / out_w;
    const double inv = 1.0 / static_cast<double>(th * tw);
    std::vector<double> out(C * out_h * out_w, 0.0);
    const double* xv = x.data().data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t xx = 0; xx < W; ++xx) {
                out[(c * out_h + y / th) * out_w + xx / tw] += xv[(c * H + y) * W + xx];
            }
        }
    }
    for (auto& v : out) v *= inv;
    return detail::make_result({C, out_h, out_w}, std::move(out), {x}, [=](detail::Node& self) {
        auto& gx = self.parents[0]->ensure_grad();
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t y = 0; y < H; ++y) {
                for (std::size_t xx = 0; xx < W; ++xx) {
                    gx[(c * H + y) * W + xx] += inv * self.grad[(c * out_h + y / th) * out_w + xx / tw];
                }
            }
        }
    }, "avgpool2d");
}

/// out[j] = (x[2j] + x[2j+1]) / 2 on a vector of even length.
inline Tensor avgpool1d_pairs(const Tensor& x) {
    if (x.rank() != 1 || x.size() % 2 != 0) {
        throw DimensionError("avgpool1d_pairs: expected even-length vector, got " + shape_string(x.shape()));
    }
    const std::size_t n = x.size() / 2;
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = 0.5 * (x[2 * j] + x[2 * j + 1]);
    return detail::make_result({n}, std::move(out), {x}, [n](detail::Node& self) {
        auto& gx = self.parents[0]->ensure_grad();
        for (std::size_t j = 0; j < n; ++j) {
            gx[2 * j] += 0.5 * self.grad[j];
            gx[2 * j + 1] += 0.5 * self.grad[j];
        }
    }, "avgpool1d_pairs");
}

enum class Activation { sigmoid, relu };

/// Logistic sigmoid, clamped so outputs stay strictly inside (0, 1).
inline double sigmoid_value(double v) {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
    double s;
    if (v >= 0) {
        s = 1.0 / (1.0 + std::exp(-v));
    } else {
        const double e = std::exp(v);
        s = e / (1.0 + e);
    }
    return std::clamp(s, lo, hi);
}

inline Tensor elementwise(const Tensor& x, Activation kind) {
    std::vector<double> out(x.size());
    if (kind == Activation::sigmoid) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(x[i]);
        return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
            auto& gx = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < self.data.size(); ++i) {
                const double s = self.data[i];
                gx[i] += self.grad[i] * s * (1.0 - s);
            }
        }, "sigmoid");
    }
    auto& monitor = detail::kink_monitor();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] > 0 ? x[i] : 0.0;
        if (monitor.active) monitor.min_distance = std::min(monitor.min_distance, std::abs(x[i]));
    }
    // relu'(0) = 0
    return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        auto& in = *self.parents[0];
        auto& gx = in.ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            if (in.data[i] > 0) gx[i] += self.grad[i];
        }
    }, "relu");
}

inline Tensor sigmoid(const Tensor& x) { return elementwise(x, Activation::sigmoid); }
inline Tensor relu(const Tensor& x) { return elementwise(x, Activation::relu); }

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    }, "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        const double sign[2] = {1.0, -1.0};
        for (std::size_t p = 0; p < 2; ++p) {
            if (!self.parents[p]->requires_grad) continue;
            auto& g = self.parents[p]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[p] * self.grad[i];
        }
    }, "sub");
}

inline Tensor add_scalar(const Tensor& x, double c) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v += c;
    return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }, "add_scalar");
}

inline Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= c;
    return detail::make_result(x.shape(), std::move(out), {x}, [c](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    }, "scale");
}

/// Same data, new shape. Used to flatten pooled maps before a fully connected layer.
inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return detail::make_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }, "reshape");
}

inline Tensor flatten(const Tensor& x) { return reshape(x, {x.size()}); }

/// Scalar sum of all elements.
inline Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return detail::make_result({1}, {acc}, {x}, [](detail::Node& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    }, "sum");
}

/// Scalar ||a - b||^2.
inline Tensor squared_distance(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "squared_distance");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return detail::make_result({1}, {acc}, {a, b}, [](detail::Node& self) {
        auto& an = *self.parents[0];
        auto& bn = *self.parents[1];
        const double g = 2.0 * self.grad[0];
        if (an.requires_grad) {
            auto& ga = an.ensure_grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * (an.data[i] - bn.data[i]);
        }
        if (bn.requires_grad) {
            auto& gb = bn.ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * (an.data[i] - bn.data[i]);
        }
    }, "squared_distance");
}

/// Sum of a list of same-shaped tensors, accumulated in list order.
inline Tensor add_n(std::span<const Tensor> xs) {
    if (xs.empty()) throw ContractError("add_n: empty input list");
    std::vector<double> out(xs[0].size(), 0.0);
    for (const auto& x : xs) {
        detail::require_same_shape(xs[0], x, "add_n");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
    }
    return detail::make_result(xs[0].shape(), std::move(out), {xs.begin(), xs.end()}, [](detail::Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    }, "add_n");
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace detail {

// Reverse-postorder DFS over nodes that require grad; result is topological
// (inputs before outputs).
inline std::vector<Node*> topological_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

} // namespace detail

/// Back-propagates d(loss)/d(.) into every reachable tensor with requires_grad.
/// Leaf gradients accumulate across calls until zero_grad(); intermediate
/// gradients are recomputed from scratch on each call.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward: loss must be a scalar tensor");
    }
    if (!loss.requires_grad()) return;
    auto order = detail::topological_order(&loss.node());
    for (auto* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    }
    loss.node().grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

/// Max relative error between the analytic gradient of scalar f at x and a
/// central difference with step eps. Relative error uses the denominator
/// max(1, |analytic|, |numeric|). x must be a leaf with requires_grad.
template <class F>
double grad_check(F&& f, Tensor x, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
    if (!x.requires_grad() || !x.node().is_leaf()) {
        throw ContractError("grad_check: x must be a leaf tensor with requires_grad");
    }
    x.zero_grad();
    Tensor y = f(x);
    if (y.size() != 1) throw ContractError("grad_check: f must be scalar-valued");
    backward(y);
    std::vector<double> analytic(x.grad().begin(), x.grad().end());
    x.zero_grad();

    auto data = x.mutable_data();
    double worst = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + eps;
        const double fp = f(x).item();
        data[i] = saved - eps;
        const double fm = f(x).item();
        data[i] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

} // namespace fph
