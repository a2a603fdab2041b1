#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "diffsos/error.hpp"

namespace diffsos {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// Fixed 64-byte alignment keeps vectorized kernels on the same code path no
// matter where the allocator puts a buffer, so results do not depend on heap history.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct Node {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    void ensure_grad();
};

} // namespace detail

/// Dense row-major array of doubles with reverse-mode autodiff.
///
/// A Tensor is a shared handle: copies alias the same storage. Operations that
/// take at least one requires_grad input record a node on the implicit tape;
/// `backward` walks that tape in reverse topological order. A tape and its
/// tensors belong to one thread.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    /// Mutable access; only meaningful for leaves (parameters, inputs).
    std::span<double> mutable_data();
    double item() const;
    double operator[](std::size_t i) const { return data()[i]; }

    bool requires_grad() const;
    /// Grad accumulator; empty span when the tensor does not require grad.
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// Same values, no history, requires_grad = false.
    Tensor detach() const;
    /// Deep copy of values into a fresh leaf.
    Tensor clone(bool requires_grad = false) const;

    const char* op_name() const;

    // Internal: used by primitive implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Makes every primitive verify its output is finite (throws NumericError).
class CheckedModeGuard {
public:
    explicit CheckedModeGuard(bool enabled = true);
    ~CheckedModeGuard();
    CheckedModeGuard(const CheckedModeGuard&) = delete;
    CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();
bool checked_mode();

/// Throws NumericError naming `what` and the first offending index.
void check_finite(const Tensor& t, const std::string& what);

/// Accumulates d(loss)/d(leaf) into every reachable requires_grad leaf.
/// Repeated calls accumulate.
void backward(const Tensor& loss);

// ---- primitives ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [N,in], weight [out,in], bias [out] (may be undefined) -> [N,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dOptions {
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
};

/// x [N,Cin,H,W], weight [Cout,Cin,Kh,Kw], bias [Cout] (may be undefined).
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions opt = {});

Tensor silu(const Tensor& x);
/// x [N,C,...]; gamma/beta [C].
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
/// [N,C,H,W] -> [N,C,2H,2W]
Tensor upsample_nearest2x(const Tensor& x);
/// [N,C,H,W] -> [N,C,ceil(H/2),ceil(W/2)], keeps every other pixel.
Tensor downsample_strided2x(const Tensor& x);
/// [N,C,H,W] -> [N,C,out_h,out_w] with PyTorch-style bin boundaries.
Tensor adaptive_avg_pool2d(const Tensor& x, std::size_t out_h, std::size_t out_w);
/// Concatenate along dim 1 of two [N,*,H,W] tensors.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// x [N,C,H,W] + v [N,C] broadcast over H,W.
Tensor add_channelwise(const Tensor& x, const Tensor& v);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);

/// Modulus of the unnormalized 2D DFT over the last two axes; leading axes are batch.
/// The subgradient at an exactly-zero modulus is 0.
Tensor dft2_modulus(const Tensor& x);

} // namespace diffsos
