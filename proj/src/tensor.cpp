#include "diffsos/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace diffsos {

namespace {

thread_local bool t_grad_enabled = true;
thread_local bool t_checked_mode = false;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

using detail::Node;
using detail::Buffer;
using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
    throw ShapeError(std::string(op) + ": " + what);
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) shape_fail(op, "undefined tensor operand");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    require_defined(t, op);
    if (t.rank() != rank) {
        shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
    }
}

// Builds the output node and, when recording, wires it into the tape.
Tensor make_result(const char* op, Shape shape, Buffer data,
                   std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool record = false;
    if (t_grad_enabled) {
        for (const Tensor* in : inputs) {
            if (in->defined() && in->requires_grad()) record = true;
        }
    }
    if (record) {
        node->requires_grad = true;
        for (const Tensor* in : inputs) node->parents.push_back(in->defined() ? in->node() : nullptr);
        node->backward_fn = std::move(backward_fn);
    }
    Tensor out(std::move(node));
    if (t_checked_mode) check_finite(out, op);
    return out;
}

// Grad buffer of parent i if it participates in backward, otherwise nullptr.
double* parent_grad(Node& out, std::size_t i) {
    Node* p = out.parents[i].get();
    if (p == nullptr || !p->requires_grad) return nullptr;
    p->ensure_grad();
    return p->grad.data();
}

const Buffer& parent_data(Node& out, std::size_t i) { return out.parents[i]->data; }

} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void detail::Node::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t e : shape) {
        if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
    }
    if (values.size() != shape_numel(shape)) {
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data.assign(values.begin(), values.end());
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::dim(std::size_t i) const {
    if (i >= rank()) throw ShapeError("tensor: axis " + std::to_string(i) + " out of range for " + shape_str(shape()));
    return node_->shape[i];
}
std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() {
    if (node_->requires_grad) node_->ensure_grad();
    return node_->grad;
}
void Tensor::zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const { return clone(false); }
Tensor Tensor::clone(bool requires_grad) const {
    auto node = std::make_shared<Node>();
    node->shape = shape();
    node->data = node_->data;
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
}
const char* Tensor::op_name() const { return node_->op; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

CheckedModeGuard::CheckedModeGuard(bool enabled) : previous_(t_checked_mode) { t_checked_mode = enabled; }
CheckedModeGuard::~CheckedModeGuard() { t_checked_mode = previous_; }

bool grad_enabled() { return t_grad_enabled; }
bool checked_mode() { return t_checked_mode; }

void check_finite(const Tensor& t, const std::string& what) {
    const auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!std::isfinite(d[i])) {
            throw NumericError(what + ": non-finite value " + std::to_string(d[i]) + " at flat index " +
                               std::to_string(i) + " of " + shape_str(t.shape()));
        }
    }
}

void backward(const Tensor& loss) {
    require_defined(loss, "backward");
    if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs before outputs).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p != nullptr && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->is_leaf()) {
            n->ensure_grad();
        } else {
            n->grad.assign(n->data.size(), 0.0);
        }
    }
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
    }
}

// ---- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
    Buffer out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& o) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (double* g = parent_grad(o, k)) {
                for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    if (a.shape() != b.shape()) shape_fail("sub", a.shape(), b.shape());
    Buffer out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& o) {
        if (double* g = parent_grad(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        }
        if (double* g = parent_grad(o, 1)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
    Buffer out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_result("mul", a.shape(), std::move(out), {&a, &b}, [](Node& o) {
        const auto& x = parent_data(o, 0);
        const auto& y = parent_data(o, 1);
        if (double* g = parent_grad(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * y[i];
        }
        if (double* g = parent_grad(o, 1)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * x[i];
        }
    });
}

Tensor mul(const Tensor& a, double s) {
    require_defined(a, "mul");
    Buffer out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
    return make_result("mul_scalar", a.shape(), std::move(out), {&a}, [s](Node& o) {
        if (double* g = parent_grad(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * s;
        }
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    require_defined(a, "add_scalar");
    Buffer out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
    return make_result("add_scalar", a.shape(), std::move(out), {&a}, [](Node& o) {
        if (double* g = parent_grad(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        }
    });
}

Tensor silu(const Tensor& x) {
    require_defined(x, "silu");
    Buffer out(x.numel());
    const auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] / (1.0 + std::exp(-v[i]));
    return make_result("silu", x.shape(), std::move(out), {&x}, [](Node& o) {
        double* g = parent_grad(o, 0);
        if (g == nullptr) return;
        const auto& v = parent_data(o, 0);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-v[i]));
            g[i] += o.grad[i] * s * (1.0 + v[i] * (1.0 - s));
        }
    });
}

Tensor abs(const Tensor& x) {
    require_defined(x, "abs");
    Buffer out(x.numel());
    const auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(v[i]);
    return make_result("abs", x.shape(), std::move(out), {&x}, [](Node& o) {
        double* g = parent_grad(o, 0);
        if (g == nullptr) return;
        const auto& v = parent_data(o, 0);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double sgn = v[i] > 0.0 ? 1.0 : (v[i] < 0.0 ? -1.0 : 0.0);
            g[i] += o.grad[i] * sgn;
        }
    });
}

Tensor square(const Tensor& x) {
    require_defined(x, "square");
    Buffer out(x.numel());
    const auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * v[i];
    return make_result("square", x.shape(), std::move(out), {&x}, [](Node& o) {
        double* g = parent_grad(o, 0);
        if (g == nullptr) return;
        const auto& v = parent_data(o, 0);
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * 2.0 * v[i];
    });
}

Tensor sqrt(const Tensor& x) {
    require_defined(x, "sqrt");
    Buffer out(x.numel());
    const auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(v[i]);
    return make_result("sqrt", x.shape(), std::move(out), {&x}, [](Node& o) {
        double* g = parent_grad(o, 0);
        if (g == nullptr) return;
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * 0.5 / o.data[i];
    });
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result("sum", {}, {s}, {&x}, [](Node& o) {
        double* g = parent_grad(o, 0);
        if (g == nullptr) return;
        const std::size_t n = o.parents[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    require_defined(x, "mean");
    double s = 0.0;
    for (double v : x.data()) s += v;
    const double n = static_cast<double>(x.numel());
    return make_result("mean", {}, {s / n}, {&x}, [n](Node& o) {
        double* g = parent_grad(o, 0);
        if (g == nullptr) return;
        const std::size_t count = o.parents[0]->data.size();
        for (std::size_t i = 0; i < count; ++i) g[i] += o.grad[0] / n;
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    require_defined(x, "reshape");
    if (shape_numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
    Buffer out(x.data().begin(), x.data().end());
    return make_result("reshape", std::move(shape), std::move(out), {&x}, [](Node& o) {
        if (double* g = parent_grad(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        }
    });
}

// ---- dense algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Buffer out(m * n);
    MapMat(out.data(), m, n).noalias() = MapConstMat(a.data().data(), m, k) * MapConstMat(b.data().data(), k, n);
    return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& o) {
        MapConstMat go(o.grad.data(), m, n);
        if (double* g = parent_grad(o, 0)) {
            MapMat(g, m, k).noalias() += go * MapConstMat(parent_data(o, 1).data(), k, n).transpose();
        }
        if (double* g = parent_grad(o, 1)) {
            MapMat(g, k, n).noalias() += MapConstMat(parent_data(o, 0).data(), m, k).transpose() * go;
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(x, 2, "linear");
    require_rank(weight, 2, "linear");
    if (x.dim(1) != weight.dim(1)) shape_fail("linear", x.shape(), weight.shape());
    const std::size_t batch = x.dim(0), in = x.dim(1), outf = weight.dim(0);
    if (bias.defined() && bias.shape() != Shape{outf}) shape_fail("linear", weight.shape(), bias.shape());
    // Plain dot products: a row's result must not depend on where it sits in the
    // batch (GEMM remainder paths would change the summation order).
    Buffer out(batch * outf);
    const double* xd = x.data().data();
    const double* wd = weight.data().data();
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < outf; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += xd[r * in + i] * wd[c * in + i];
            out[r * outf + c] = acc;
        }
    }
    if (bias.defined()) {
        const auto bv = bias.data();
        for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t c = 0; c < outf; ++c) out[r * outf + c] += bv[c];
        }
    }
    const bool has_bias = bias.defined();
    return make_result("linear", {batch, outf}, std::move(out), {&x, &weight, &bias},
                       [batch, in, outf, has_bias](Node& o) {
                           MapConstMat go(o.grad.data(), batch, outf);
                           if (double* g = parent_grad(o, 0)) {
                               MapMat(g, batch, in).noalias() +=
                                   go * MapConstMat(parent_data(o, 1).data(), outf, in);
                           }
                           if (double* g = parent_grad(o, 1)) {
                               MapMat(g, outf, in).noalias() +=
                                   go.transpose() * MapConstMat(parent_data(o, 0).data(), batch, in);
                           }
                           if (has_bias) {
                               if (double* g = parent_grad(o, 2)) {
                                   for (std::size_t r = 0; r < batch; ++r) {
                                       for (std::size_t c = 0; c < outf; ++c) g[c] += o.grad[r * outf + c];
                                   }
                               }
                           }
                       });
}

namespace {

struct ConvGeometry {
    std::size_t n, cin, h, w, cout, kh, kw, ho, wo;
    Conv2dOptions opt;
    std::size_t k() const { return cin * kh * kw; }
    std::size_t plane() const { return ho * wo; }
    bool pointwise() const {
        return kh == 1 && kw == 1 && opt.stride_h == 1 && opt.stride_w == 1 && opt.pad_h == 0 && opt.pad_w == 0;
    }
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.plane();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.opt.stride_h + ky) - static_cast<long>(g.opt.pad_h);
                    double* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.opt.stride_w + kx) - static_cast<long>(g.opt.pad_w);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, const ConvGeometry& g, double* dx) {
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = cols + ((c * g.kh + ky) * g.kw + kx) * g.plane();
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.opt.stride_h + ky) - static_cast<long>(g.opt.pad_h);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const double* src = row + oy * g.wo;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.opt.stride_w + kx) - static_cast<long>(g.opt.pad_w);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
    require_rank(x, 4, "conv2d");
    require_rank(weight, 4, "conv2d");
    if (opt.stride_h == 0 || opt.stride_w == 0) shape_fail("conv2d", "stride must be positive");
    if (x.dim(1) != weight.dim(1)) shape_fail("conv2d", x.shape(), weight.shape());
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0, opt};
    if (g.h + 2 * opt.pad_h < g.kh || g.w + 2 * opt.pad_w < g.kw) shape_fail("conv2d", x.shape(), weight.shape());
    if (bias.defined() && bias.shape() != Shape{g.cout}) shape_fail("conv2d", weight.shape(), bias.shape());
    g.ho = (g.h + 2 * opt.pad_h - g.kh) / opt.stride_h + 1;
    g.wo = (g.w + 2 * opt.pad_w - g.kw) / opt.stride_w + 1;

    Buffer out(g.n * g.cout * g.plane());
    Buffer cols(g.pointwise() ? 0 : g.k() * g.plane());
    MapConstMat wm(weight.data().data(), g.cout, g.k());
    for (std::size_t s = 0; s < g.n; ++s) {
        const double* xs = x.data().data() + s * g.cin * g.h * g.w;
        const double* cp = xs;
        if (!g.pointwise()) {
            im2col(xs, g, cols.data());
            cp = cols.data();
        }
        MapMat ys(out.data() + s * g.cout * g.plane(), g.cout, g.plane());
        ys.noalias() = wm * MapConstMat(cp, g.k(), g.plane());
        if (bias.defined()) {
            const auto bv = bias.data();
            for (std::size_t c = 0; c < g.cout; ++c) ys.row(c).array() += bv[c];
        }
    }
    const bool has_bias = bias.defined();
    return make_result("conv2d", {g.n, g.cout, g.ho, g.wo}, std::move(out), {&x, &weight, &bias},
                       [g, has_bias](Node& o) {
                           double* gx = parent_grad(o, 0);
                           double* gw = parent_grad(o, 1);
                           double* gb = has_bias ? parent_grad(o, 2) : nullptr;
                           const auto& xd = parent_data(o, 0);
                           MapConstMat wm(parent_data(o, 1).data(), g.cout, g.k());
                           Buffer cols(g.pointwise() ? 0 : g.k() * g.plane());
                           for (std::size_t s = 0; s < g.n; ++s) {
                               MapConstMat gy(o.grad.data() + s * g.cout * g.plane(), g.cout, g.plane());
                               const double* xs = xd.data() + s * g.cin * g.h * g.w;
                               if (gw != nullptr) {
                                   const double* cp = xs;
                                   if (!g.pointwise()) {
                                       im2col(xs, g, cols.data());
                                       cp = cols.data();
                                   }
                                   MapMat(gw, g.cout, g.k()).noalias() +=
                                       gy * MapConstMat(cp, g.k(), g.plane()).transpose();
                               }
                               if (gb != nullptr) {
                                   for (std::size_t c = 0; c < g.cout; ++c) gb[c] += gy.row(c).sum();
                               }
                               if (gx != nullptr) {
                                   double* gxs = gx + s * g.cin * g.h * g.w;
                                   if (g.pointwise()) {
                                       MapMat(gxs, g.k(), g.plane()).noalias() += wm.transpose() * gy;
                                   } else {
                                       MapMat(cols.data(), g.k(), g.plane()).noalias() = wm.transpose() * gy;
                                       col2im(cols.data(), g, gxs);
                                   }
                               }
                           }
                       });
}

// ---- normalization and resampling --------------------------------------

Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta, double eps) {
    require_defined(x, "group_norm");
    if (x.rank() < 2) shape_fail("group_norm", "expected [N,C,...], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (groups == 0 || c % groups != 0) {
        shape_fail("group_norm", "group count " + std::to_string(groups) + " does not divide " + std::to_string(c) +
                                     " channels");
    }
    if (gamma.shape() != Shape{c}) shape_fail("group_norm", x.shape(), gamma.shape());
    if (beta.shape() != Shape{c}) shape_fail("group_norm", x.shape(), beta.shape());
    const std::size_t spatial = x.numel() / (n * c);
    const std::size_t cpg = c / groups;
    const std::size_t gsize = cpg * spatial;

    Buffer out(x.numel());
    Buffer xhat(x.numel());
    Buffer inv_std(n * groups);
    const auto xd = x.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
            const std::size_t base = (s * c + gi * cpg) * spatial;
            double mu = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) mu += xd[base + i];
            mu /= static_cast<double>(gsize);
            double var = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) var += (xd[base + i] - mu) * (xd[base + i] - mu);
            var /= static_cast<double>(gsize);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[s * groups + gi] = is;
            for (std::size_t i = 0; i < gsize; ++i) {
                const std::size_t ch = gi * cpg + i / spatial;
                const double h = (xd[base + i] - mu) * is;
                xhat[base + i] = h;
                out[base + i] = gd[ch] * h + bd[ch];
            }
        }
    }
    return make_result("group_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                       [n, c, groups, cpg, spatial, gsize, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](Node& o) {
                           double* gx = parent_grad(o, 0);
                           double* gg = parent_grad(o, 1);
                           double* gb = parent_grad(o, 2);
                           const auto& gamma = parent_data(o, 1);
                           for (std::size_t s = 0; s < n; ++s) {
                               for (std::size_t gi = 0; gi < groups; ++gi) {
                                   const std::size_t base = (s * c + gi * cpg) * spatial;
                                   double m1 = 0.0, m2 = 0.0;
                                   for (std::size_t i = 0; i < gsize; ++i) {
                                       const std::size_t ch = gi * cpg + i / spatial;
                                       const double dy = o.grad[base + i];
                                       if (gg != nullptr) gg[ch] += dy * xhat[base + i];
                                       if (gb != nullptr) gb[ch] += dy;
                                       const double dh = dy * gamma[ch];
                                       m1 += dh;
                                       m2 += dh * xhat[base + i];
                                   }
                                   if (gx == nullptr) continue;
                                   m1 /= static_cast<double>(gsize);
                                   m2 /= static_cast<double>(gsize);
                                   const double is = inv_std[s * groups + gi];
                                   for (std::size_t i = 0; i < gsize; ++i) {
                                       const std::size_t ch = gi * cpg + i / spatial;
                                       const double dh = o.grad[base + i] * gamma[ch];
                                       gx[base + i] += is * (dh - m1 - xhat[base + i] * m2);
                                   }
                               }
                           }
                       });
}

Tensor upsample_nearest2x(const Tensor& x) {
    require_rank(x, 4, "upsample_nearest2x");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    Buffer out(planes * 4 * h * w);
    const auto xd = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t oy = 0; oy < 2 * h; ++oy) {
            for (std::size_t ox = 0; ox < 2 * w; ++ox) {
                out[(p * 2 * h + oy) * 2 * w + ox] = xd[(p * h + oy / 2) * w + ox / 2];
            }
        }
    }
    return make_result("upsample_nearest2x", {x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), {&x},
                       [planes, h, w](Node& o) {
                           double* g = parent_grad(o, 0);
                           if (g == nullptr) return;
                           for (std::size_t p = 0; p < planes; ++p) {
                               for (std::size_t oy = 0; oy < 2 * h; ++oy) {
                                   for (std::size_t ox = 0; ox < 2 * w; ++ox) {
                                       g[(p * h + oy / 2) * w + ox / 2] += o.grad[(p * 2 * h + oy) * 2 * w + ox];
                                   }
                               }
                           }
                       });
}

Tensor downsample_strided2x(const Tensor& x) {
    require_rank(x, 4, "downsample_strided2x");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
    Buffer out(planes * ho * wo);
    const auto xd = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) out[(p * ho + oy) * wo + ox] = xd[(p * h + 2 * oy) * w + 2 * ox];
        }
    }
    return make_result("downsample_strided2x", {x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x},
                       [planes, h, w, ho, wo](Node& o) {
                           double* g = parent_grad(o, 0);
                           if (g == nullptr) return;
                           for (std::size_t p = 0; p < planes; ++p) {
                               for (std::size_t oy = 0; oy < ho; ++oy) {
                                   for (std::size_t ox = 0; ox < wo; ++ox) {
                                       g[(p * h + 2 * oy) * w + 2 * ox] += o.grad[(p * ho + oy) * wo + ox];
                                   }
                               }
                           }
                       });
}

Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    require_rank(x, 4, "adaptive_avg_pool2d");
    if (out_h == 0 || out_w == 0) shape_fail("adaptive_avg_pool2d", "output extents must be positive");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    auto bins = [](std::size_t in, std::size_t outn) {
        std::vector<std::pair<std::size_t, std::size_t>> b(outn);
        for (std::size_t i = 0; i < outn; ++i) b[i] = {(i * in) / outn, ((i + 1) * in + outn - 1) / outn};
        return b;
    };
    const auto by = bins(h, out_h);
    const auto bx = bins(w, out_w);
    Buffer out(planes * out_h * out_w);
    const auto xd = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                double s = 0.0;
                for (std::size_t iy = by[oy].first; iy < by[oy].second; ++iy) {
                    for (std::size_t ix = bx[ox].first; ix < bx[ox].second; ++ix) s += xd[(p * h + iy) * w + ix];
                }
                const double cnt = static_cast<double>((by[oy].second - by[oy].first) * (bx[ox].second - bx[ox].first));
                out[(p * out_h + oy) * out_w + ox] = s / cnt;
            }
        }
    }
    return make_result("adaptive_avg_pool2d", {x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {&x},
                       [planes, h, w, out_h, out_w, by, bx](Node& o) {
                           double* g = parent_grad(o, 0);
                           if (g == nullptr) return;
                           for (std::size_t p = 0; p < planes; ++p) {
                               for (std::size_t oy = 0; oy < out_h; ++oy) {
                                   for (std::size_t ox = 0; ox < out_w; ++ox) {
                                       const double cnt = static_cast<double>((by[oy].second - by[oy].first) *
                                                                              (bx[ox].second - bx[ox].first));
                                       const double gv = o.grad[(p * out_h + oy) * out_w + ox] / cnt;
                                       for (std::size_t iy = by[oy].first; iy < by[oy].second; ++iy) {
                                           for (std::size_t ix = bx[ox].first; ix < bx[ox].second; ++ix) {
                                               g[(p * h + iy) * w + ix] += gv;
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank(a, 4, "concat_channels");
    require_rank(b, 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        shape_fail("concat_channels", a.shape(), b.shape());
    }
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
    Buffer out(n * (ca + cb) * plane);
    const auto ad = a.data(), bd = b.data();
    for (std::size_t s = 0; s < n; ++s) {
        std::copy_n(ad.begin() + s * ca * plane, ca * plane, out.begin() + s * (ca + cb) * plane);
        std::copy_n(bd.begin() + s * cb * plane, cb * plane, out.begin() + (s * (ca + cb) + ca) * plane);
    }
    return make_result("concat_channels", {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), {&a, &b},
                       [n, ca, cb, plane](Node& o) {
                           double* ga = parent_grad(o, 0);
                           double* gb = parent_grad(o, 1);
                           for (std::size_t s = 0; s < n; ++s) {
                               const double* src = o.grad.data() + s * (ca + cb) * plane;
                               if (ga != nullptr) {
                                   for (std::size_t i = 0; i < ca * plane; ++i) ga[s * ca * plane + i] += src[i];
                               }
                               if (gb != nullptr) {
                                   for (std::size_t i = 0; i < cb * plane; ++i) {
                                       gb[s * cb * plane + i] += src[ca * plane + i];
                                   }
                               }
                           }
                       });
}

Tensor add_channelwise(const Tensor& x, const Tensor& v) {
    require_rank(x, 4, "add_channelwise");
    require_rank(v, 2, "add_channelwise");
    if (x.dim(0) != v.dim(0) || x.dim(1) != v.dim(1)) shape_fail("add_channelwise", x.shape(), v.shape());
    const std::size_t nc = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
    Buffer out(x.data().begin(), x.data().end());
    const auto vd = v.data();
    for (std::size_t p = 0; p < nc; ++p) {
        for (std::size_t i = 0; i < plane; ++i) out[p * plane + i] += vd[p];
    }
    return make_result("add_channelwise", x.shape(), std::move(out), {&x, &v}, [nc, plane](Node& o) {
        if (double* g = parent_grad(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        }
        if (double* g = parent_grad(o, 1)) {
            for (std::size_t p = 0; p < nc; ++p) {
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += o.grad[p * plane + i];
                g[p] += s;
            }
        }
    });
}

// ---- spectral -----------------------------------------------------------

namespace {

using cplx = std::complex<double>;

std::vector<cplx> twiddles(std::size_t n, double sign) {
    std::vector<cplx> t(n * n);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t m = 0; m < n; ++m) {
            // Reduce the exponent mod n so large products keep full precision.
            const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * m) % n) / static_cast<double>(n);
            t[k * n + m] = cplx(std::cos(ang), std::sin(ang));
        }
    }
    return t;
}

// Separable 2D DFT of one h x w plane: out(k,l) = sum_{m,n} in(m,n) tw_h(k,m) tw_w(l,n).
void dft2_plane(const cplx* in, cplx* out, std::size_t h, std::size_t w, const std::vector<cplx>& tw_h,
                const std::vector<cplx>& tw_w, std::vector<cplx>& scratch) {
    scratch.assign(h * w, cplx{});
    for (std::size_t m = 0; m < h; ++m) {
        for (std::size_t l = 0; l < w; ++l) {
            cplx acc{};
            for (std::size_t n = 0; n < w; ++n) acc += in[m * w + n] * tw_w[l * w + n];
            scratch[m * w + l] = acc;
        }
    }
    for (std::size_t k = 0; k < h; ++k) {
        for (std::size_t l = 0; l < w; ++l) {
            cplx acc{};
            for (std::size_t m = 0; m < h; ++m) acc += scratch[m * w + l] * tw_h[k * h + m];
            out[k * w + l] = acc;
        }
    }
}

} // namespace

Tensor dft2_modulus(const Tensor& x) {
    require_defined(x, "dft2_modulus");
    if (x.rank() < 2) shape_fail("dft2_modulus", "expected at least 2 axes, got " + shape_str(x.shape()));
    const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
    const std::size_t planes = x.numel() / (h * w);
    const auto fwd_h = twiddles(h, -1.0), fwd_w = twiddles(w, -1.0);

    std::vector<cplx> spectrum(x.numel());
    std::vector<cplx> in(h * w), scratch;
    Buffer out(x.numel());
    const auto xd = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < h * w; ++i) in[i] = cplx(xd[p * h * w + i], 0.0);
        dft2_plane(in.data(), spectrum.data() + p * h * w, h, w, fwd_h, fwd_w, scratch);
        for (std::size_t i = 0; i < h * w; ++i) out[p * h * w + i] = std::abs(spectrum[p * h * w + i]);
    }
    return make_result("dft2_modulus", x.shape(), std::move(out), {&x},
                       [h, w, planes, spectrum = std::move(spectrum)](Node& o) {
                           double* g = parent_grad(o, 0);
                           if (g == nullptr) return;
                           const auto inv_h = twiddles(h, 1.0), inv_w = twiddles(w, 1.0);
                           std::vector<cplx> weighted(h * w), back(h * w), scratch;
                           for (std::size_t p = 0; p < planes; ++p) {
                               for (std::size_t i = 0; i < h * w; ++i) {
                                   const double mod = o.data[p * h * w + i];
                                   weighted[i] = mod == 0.0 ? cplx{} : spectrum[p * h * w + i] * (o.grad[p * h * w + i] / mod);
                               }
                               dft2_plane(weighted.data(), back.data(), h, w, inv_h, inv_w, scratch);
                               for (std::size_t i = 0; i < h * w; ++i) g[p * h * w + i] += back[i].real();
                           }
                       });
}

} // namespace diffsos
