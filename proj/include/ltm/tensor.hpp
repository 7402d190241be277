#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ltm/util.hpp"

namespace ltm {

// Thrown when a value that must be finite is NaN or Inf.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown on shape/contract violations.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// When enabled (thread-local), every op validates its output for NaN/Inf and
// throws NumericError on violation. Off by default; the trainer instead
// checks loss and gradient values explicitly and skips bad updates.
void set_check_finite(bool enabled);
bool check_finite_enabled();

// ============================================================================
// MAC accounting
// ============================================================================

// Compute categories used by the flops oracle. Ops attribute their
// multiply-accumulate counts to the innermost active scope.
enum class MacScopeId : int { Other = 0, SelfAttn, CrossAttn, Ffn, Embed };
constexpr int kMacScopeCount = 5;

struct MacCounts {
    std::array<uint64_t, kMacScopeCount> macs{};
    uint64_t total() const {
        uint64_t t = 0;
        for (uint64_t m : macs) {
            t += m;
        }
        return t;
    }
    uint64_t operator[](MacScopeId id) const { return macs[static_cast<int>(id)]; }
};

void mac_counting_start();
MacCounts mac_counting_stop();
bool mac_counting_enabled();
void mac_record(uint64_t n);

// RAII scope selecting the category charged while alive.
class MacScope {
  public:
    explicit MacScope(MacScopeId id);
    ~MacScope();
    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

  private:
    MacScopeId prev_;
};

// ============================================================================
// Tensor
// ============================================================================

// All value and gradient buffers share one fixed alignment so that
// vectorized traversals split at shape-determined offsets; results are then
// bit-identical across runs regardless of heap state.
template <class T>
struct AlignedAlloc {
    using value_type = T;
    static constexpr size_t alignment = 64;

    AlignedAlloc() = default;
    template <class U>
    AlignedAlloc(const AlignedAlloc<U>&) {}

    T* allocate(size_t n) {
        void* p = ::operator new(n * sizeof(T), std::align_val_t(alignment));
        return static_cast<T*>(p);
    }
    void deallocate(T* p, size_t) noexcept {
        ::operator delete(p, std::align_val_t(alignment));
    }
    template <class U>
    bool operator==(const AlignedAlloc<U>&) const {
        return true;
    }
};

template <class S>
using AlignedBuf = std::vector<S, AlignedAlloc<S>>;

template <class S>
struct NodeT {
    std::vector<int64_t> shape;
    std::shared_ptr<AlignedBuf<S>> data;
    AlignedBuf<S> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    bool leaf = true;
    // 0 = fresh, 1 = backward consumed, 2 = graph released
    int8_t state = 0;
    std::vector<std::shared_ptr<NodeT<S>>> inputs;
    std::function<void(NodeT<S>&)> backward_fn;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) {
            n *= d;
        }
        return n;
    }
};

// Dense row-major tensor with reverse-mode autodiff over a dynamically built
// graph. Copying a Tensor copies a handle to the same node; graphs are
// confined to one thread during construction and backward.
template <class S>
class TensorT {
  public:
    using Scalar = S;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<NodeT<S>> n) : n_(std::move(n)) {}

    // ---- leaf factories ----
    static TensorT zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static TensorT full(std::vector<int64_t> shape, S value, bool requires_grad = false);
    static TensorT from_data(std::vector<int64_t> shape, std::vector<S> data,
                             bool requires_grad = false);
    static TensorT randn(std::vector<int64_t> shape, Rng& rng, S stddev = S(1),
                         bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const std::vector<int64_t>& shape() const { return n_->shape; }
    int64_t numel() const { return n_->numel(); }
    int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }

    std::span<const S> data() const { return {n_->data->data(), static_cast<size_t>(numel())}; }
    // Mutating a tensor that already feeds a graph invalidates saved
    // activations; only leaves should be written through this.
    std::span<S> data_mut() { return {n_->data->data(), static_cast<size_t>(numel())}; }

    S item() const;
    S at(std::initializer_list<int64_t> idx) const;

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }
    bool has_grad() const { return !n_->grad.empty(); }
    std::span<const S> grad() const { return {n_->grad.data(), n_->grad.size()}; }
    std::span<S> grad_mut() { return {n_->grad.data(), n_->grad.size()}; }
    void zero_grad();

    // New leaf sharing this tensor's value buffer. Used for read-only
    // parameter replicas across threads; gradients stay per-replica.
    TensorT shared_leaf(bool requires_grad) const;
    // New leaf with a copy of the values, detached from this graph.
    TensorT detach_copy() const;

    bool all_finite() const;

    std::shared_ptr<NodeT<S>>& node() { return n_; }
    const std::shared_ptr<NodeT<S>>& node() const { return n_; }

  private:
    std::shared_ptr<NodeT<S>> n_;
};

// ---- elementwise ----
template <class S> TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b);
template <class S> TensorT<S> scale(const TensorT<S>& a, S c);
template <class S> TensorT<S> add_scalar(const TensorT<S>& a, S c);
template <class S> TensorT<S> exp(const TensorT<S>& a);
template <class S> TensorT<S> square(const TensorT<S>& a);
template <class S> TensorT<S> silu(const TensorT<S>& a);

// ---- reductions ----
template <class S> TensorT<S> sum(const TensorT<S>& a);
template <class S> TensorT<S> mean(const TensorT<S>& a);

// ---- linear algebra ----
template <class S> TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b);

// ---- shape ----
template <class S> TensorT<S> reshape(const TensorT<S>& a, std::vector<int64_t> shape);
// Rows [r0, r0+rows) of a tensor viewed as [R, numel/R]; backward scatters.
template <class S> TensorT<S> row_block(const TensorT<S>& a, int64_t r0, int64_t rows);

// ---- softmax family ----
template <class S> TensorT<S> softmax(const TensorT<S>& a, int axis);
// Mean over rows of -log softmax(logits)[target], in nats.
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int32_t>& targets);
// Per-row log softmax(logits)[target]; sum(token_log_probs) == -N*cross_entropy.
template <class S>
TensorT<S> token_log_probs(const TensorT<S>& logits, const std::vector<int32_t>& targets);

// ---- lookup ----
template <class S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int32_t>& ids);

// ---- fused neural-net kernels ----
// y = x / sqrt(mean(x^2, last axis) + eps) * gain
template <class S>
TensorT<S> rmsnorm(const TensorT<S>& x, const TensorT<S>& gain, S eps = S(1e-6));
// Rotary embedding over [T, n_heads, head_dim]; rotates pair (2i, 2i+1) of
// each head by angle pos * base^(-2i/head_dim).
template <class S>
TensorT<S> rope(const TensorT<S>& x, const std::vector<int64_t>& positions, double base);
// Multi-head attention over [Tq, n_heads, hd] queries and [Tk, n_heads, hd]
// keys/values. window >= 1 restricts query i to keys [i-window+1, i]
// (requires Tq == Tk); window == 0 attends to all keys.
template <class S>
TensorT<S> attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                     int64_t window);

// ---- autodiff driver ----
// Reverse-mode pass from a scalar loss; accumulates into .grad of every
// requires_grad leaf reachable from it. A graph may be consumed once.
template <class S> void backward(const TensorT<S>& loss);
// Drops the graph behind t; a later backward through it throws.
template <class S> void release_graph(const TensorT<S>& t);

// Max over coordinates of the relative error between the autodiff gradient
// of f at x and central finite differences with step eps. Relative error
// uses denominator max(|a|, |b|, 1e-8).
template <class S>
S grad_check(const std::function<TensorT<S>(const TensorT<S>&)>& f, const TensorT<S>& x, S eps);

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace ltm
