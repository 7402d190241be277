#include "ltm/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace ltm {

namespace {

thread_local bool g_check_finite = false;

struct MacState {
    bool enabled = false;
    MacCounts counts;
    MacScopeId scope = MacScopeId::Other;
};
thread_local MacState g_mac;

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<Mat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const Mat<S>>;

std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        os << s[i] << (i + 1 < s.size() ? "x" : "");
    }
    os << "]";
    return os.str();
}

template <class S>
void check_output_finite(const NodeT<S>& n, const char* op) {
    if (!g_check_finite) {
        return;
    }
    for (S v : *n.data) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError(std::string(op) + ": non-finite value in output");
        }
    }
}

template <class S>
std::shared_ptr<NodeT<S>> make_leaf(std::vector<int64_t> shape, bool requires_grad) {
    auto n = std::make_shared<NodeT<S>>();
    n->shape = std::move(shape);
    n->data = std::make_shared<AlignedBuf<S>>(static_cast<size_t>(n->numel()), S(0));
    n->requires_grad = requires_grad;
    n->leaf = true;
    return n;
}

template <class S>
std::shared_ptr<NodeT<S>> make_op(std::vector<int64_t> shape,
                                  std::vector<std::shared_ptr<NodeT<S>>> inputs) {
    auto n = std::make_shared<NodeT<S>>();
    n->shape = std::move(shape);
    n->data = std::make_shared<AlignedBuf<S>>(static_cast<size_t>(n->numel()), S(0));
    n->leaf = false;
    for (const auto& in : inputs) {
        if (in->requires_grad) {
            n->requires_grad = true;
        }
    }
    n->inputs = std::move(inputs);
    return n;
}

template <class S>
void ensure_grad(NodeT<S>& n) {
    if (n.grad.empty()) {
        n.grad.assign(static_cast<size_t>(n.numel()), S(0));
    }
}

template <class S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// Unary elementwise: out[i] = fwd(a[i]); da[i] += dfn(a[i], out[i]) * g[i].
template <class S, class Fwd, class Dfn>
TensorT<S> unary_op(const TensorT<S>& a, const char* name, Fwd fwd, Dfn dfn) {
    auto out = make_op<S>(a.shape(), {a.node()});
    const auto& ad = *a.node()->data;
    auto& od = *out->data;
    for (size_t i = 0; i < ad.size(); ++i) {
        od[i] = fwd(ad[i]);
    }
    if (out->requires_grad) {
        out->backward_fn = [dfn](NodeT<S>& o) {
            auto& in = *o.inputs[0];
            if (!in.requires_grad) {
                return;
            }
            ensure_grad(in);
            const auto& id = *in.data;
            const auto& od2 = *o.data;
            for (size_t i = 0; i < id.size(); ++i) {
                in.grad[i] += dfn(id[i], od2[i]) * o.grad[i];
            }
        };
    }
    check_output_finite(*out, name);
    return TensorT<S>(out);
}

}  // namespace

void set_check_finite(bool enabled) { g_check_finite = enabled; }
bool check_finite_enabled() { return g_check_finite; }

void mac_counting_start() {
    g_mac.enabled = true;
    g_mac.counts = MacCounts{};
    g_mac.scope = MacScopeId::Other;
}

MacCounts mac_counting_stop() {
    g_mac.enabled = false;
    return g_mac.counts;
}

bool mac_counting_enabled() { return g_mac.enabled; }

void mac_record(uint64_t n) {
    if (g_mac.enabled) {
        g_mac.counts.macs[static_cast<int>(g_mac.scope)] += n;
    }
}

MacScope::MacScope(MacScopeId id) : prev_(g_mac.scope) { g_mac.scope = id; }
MacScope::~MacScope() { g_mac.scope = prev_; }

// ============================================================================
// Leaf factories and accessors
// ============================================================================

template <class S>
TensorT<S> TensorT<S>::zeros(std::vector<int64_t> shape, bool requires_grad) {
    return TensorT<S>(make_leaf<S>(std::move(shape), requires_grad));
}

template <class S>
TensorT<S> TensorT<S>::full(std::vector<int64_t> shape, S value, bool requires_grad) {
    auto n = make_leaf<S>(std::move(shape), requires_grad);
    std::fill(n->data->begin(), n->data->end(), value);
    return TensorT<S>(n);
}

template <class S>
TensorT<S> TensorT<S>::from_data(std::vector<int64_t> shape, std::vector<S> data,
                                 bool requires_grad) {
    auto n = std::make_shared<NodeT<S>>();
    n->shape = std::move(shape);
    if (static_cast<int64_t>(data.size()) != n->numel()) {
        throw ShapeError("from_data: buffer size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(n->shape));
    }
    n->data = std::make_shared<AlignedBuf<S>>(data.begin(), data.end());
    n->requires_grad = requires_grad;
    n->leaf = true;
    return TensorT<S>(n);
}

template <class S>
TensorT<S> TensorT<S>::randn(std::vector<int64_t> shape, Rng& rng, S stddev, bool requires_grad) {
    auto n = make_leaf<S>(std::move(shape), requires_grad);
    for (S& v : *n->data) {
        v = static_cast<S>(rng.normal()) * stddev;
    }
    return TensorT<S>(n);
}

template <class S>
S TensorT<S>::item() const {
    if (numel() != 1) {
        throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
    }
    return (*n_->data)[0];
}

template <class S>
S TensorT<S>::at(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
        throw ShapeError("at: index rank mismatch");
    }
    int64_t off = 0;
    int i = 0;
    for (int64_t v : idx) {
        off = off * n_->shape[static_cast<size_t>(i)] + v;
        ++i;
    }
    return (*n_->data)[static_cast<size_t>(off)];
}

template <class S>
void TensorT<S>::zero_grad() {
    std::fill(n_->grad.begin(), n_->grad.end(), S(0));
}

template <class S>
TensorT<S> TensorT<S>::shared_leaf(bool requires_grad) const {
    auto n = std::make_shared<NodeT<S>>();
    n->shape = n_->shape;
    n->data = n_->data;
    n->requires_grad = requires_grad;
    n->leaf = true;
    return TensorT<S>(n);
}

template <class S>
TensorT<S> TensorT<S>::detach_copy() const {
    auto n = make_leaf<S>(n_->shape, false);
    *n->data = *n_->data;
    return TensorT<S>(n);
}

template <class S>
bool TensorT<S>::all_finite() const {
    for (S v : *n_->data) {
        if (!std::isfinite(static_cast<double>(v))) {
            return false;
        }
    }
    return true;
}

// ============================================================================
// Elementwise ops
// ============================================================================

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    check_same_shape(a, b, "add");
    auto out = make_op<S>(a.shape(), {a.node(), b.node()});
    const auto& ad = *a.node()->data;
    const auto& bd = *b.node()->data;
    auto& od = *out->data;
    for (size_t i = 0; i < ad.size(); ++i) {
        od[i] = ad[i] + bd[i];
    }
    if (out->requires_grad) {
        out->backward_fn = [](NodeT<S>& o) {
            for (int side = 0; side < 2; ++side) {
                auto& in = *o.inputs[static_cast<size_t>(side)];
                if (!in.requires_grad) {
                    continue;
                }
                ensure_grad(in);
                for (size_t i = 0; i < in.grad.size(); ++i) {
                    in.grad[i] += o.grad[i];
                }
            }
        };
    }
    check_output_finite(*out, "add");
    return TensorT<S>(out);
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    check_same_shape(a, b, "sub");
    auto out = make_op<S>(a.shape(), {a.node(), b.node()});
    const auto& ad = *a.node()->data;
    const auto& bd = *b.node()->data;
    auto& od = *out->data;
    for (size_t i = 0; i < ad.size(); ++i) {
        od[i] = ad[i] - bd[i];
    }
    if (out->requires_grad) {
        out->backward_fn = [](NodeT<S>& o) {
            auto& a2 = *o.inputs[0];
            auto& b2 = *o.inputs[1];
            if (a2.requires_grad) {
                ensure_grad(a2);
                for (size_t i = 0; i < a2.grad.size(); ++i) {
                    a2.grad[i] += o.grad[i];
                }
            }
            if (b2.requires_grad) {
                ensure_grad(b2);
                for (size_t i = 0; i < b2.grad.size(); ++i) {
                    b2.grad[i] -= o.grad[i];
                }
            }
        };
    }
    check_output_finite(*out, "sub");
    return TensorT<S>(out);
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    check_same_shape(a, b, "mul");
    auto out = make_op<S>(a.shape(), {a.node(), b.node()});
    const auto& ad = *a.node()->data;
    const auto& bd = *b.node()->data;
    auto& od = *out->data;
    for (size_t i = 0; i < ad.size(); ++i) {
        od[i] = ad[i] * bd[i];
    }
    if (out->requires_grad) {
        out->backward_fn = [](NodeT<S>& o) {
            auto& a2 = *o.inputs[0];
            auto& b2 = *o.inputs[1];
            const auto& ad2 = *a2.data;
            const auto& bd2 = *b2.data;
            if (a2.requires_grad) {
                ensure_grad(a2);
                for (size_t i = 0; i < a2.grad.size(); ++i) {
                    a2.grad[i] += bd2[i] * o.grad[i];
                }
            }
            if (b2.requires_grad) {
                ensure_grad(b2);
                for (size_t i = 0; i < b2.grad.size(); ++i) {
                    b2.grad[i] += ad2[i] * o.grad[i];
                }
            }
        };
    }
    check_output_finite(*out, "mul");
    return TensorT<S>(out);
}

template <class S>
TensorT<S> scale(const TensorT<S>& a, S c) {
    return unary_op(
        a, "scale", [c](S x) { return x * c; }, [c](S, S) { return c; });
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
    return unary_op(
        a, "add_scalar", [c](S x) { return x + c; }, [](S, S) { return S(1); });
}

template <class S>
TensorT<S> exp(const TensorT<S>& a) {
    return unary_op(
        a, "exp", [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
TensorT<S> square(const TensorT<S>& a) {
    return unary_op(
        a, "square", [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

template <class S>
TensorT<S> silu(const TensorT<S>& a) {
    using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;
    auto out = make_op<S>(a.shape(), {a.node()});
    {
        Eigen::Map<const Arr> x(a.node()->data->data(), a.numel());
        Eigen::Map<Arr> y(out->data->data(), a.numel());
        y = x / (S(1) + (-x).exp());
    }
    if (out->requires_grad) {
        out->backward_fn = [](NodeT<S>& o) {
            auto& in = *o.inputs[0];
            if (!in.requires_grad) {
                return;
            }
            ensure_grad(in);
            const int64_t n = in.numel();
            Eigen::Map<const Arr> x(in.data->data(), n);
            Eigen::Map<const Arr> g(o.grad.data(), n);
            Eigen::Map<Arr> dx(in.grad.data(), n);
            const Arr sig = S(1) / (S(1) + (-x).exp());
            dx += g * sig * (S(1) + x * (S(1) - sig));
        };
    }
    check_output_finite(*out, "silu");
    return TensorT<S>(out);
}

// ============================================================================
// Reductions
// ============================================================================

template <class S>
TensorT<S> sum(const TensorT<S>& a) {
    auto out = make_op<S>({1}, {a.node()});
    S acc = 0;
    for (S v : *a.node()->data) {
        acc += v;
    }
    (*out->data)[0] = acc;
    if (out->requires_grad) {
        out->backward_fn = [](NodeT<S>& o) {
            auto& in = *o.inputs[0];
            if (!in.requires_grad) {
                return;
            }
            ensure_grad(in);
            const S g = o.grad[0];
            for (size_t i = 0; i < in.grad.size(); ++i) {
                in.grad[i] += g;
            }
        };
    }
    check_output_finite(*out, "sum");
    return TensorT<S>(out);
}

template <class S>
TensorT<S> mean(const TensorT<S>& a) {
    const S inv = S(1) / static_cast<S>(a.numel());
    return scale(sum(a), inv);
}

// ============================================================================
// Matmul
// ============================================================================

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_op<S>({m, n}, {a.node(), b.node()});
    ConstMatMap<S> A(a.node()->data->data(), m, k);
    ConstMatMap<S> B(b.node()->data->data(), k, n);
    MatMap<S> O(out->data->data(), m, n);
    O.noalias() = A * B;
    mac_record(static_cast<uint64_t>(m) * static_cast<uint64_t>(k) * static_cast<uint64_t>(n));
    if (out->requires_grad) {
        out->backward_fn = [m, k, n](NodeT<S>& o) {
            auto& an = *o.inputs[0];
            auto& bn = *o.inputs[1];
            ConstMatMap<S> G(o.grad.data(), m, n);
            ConstMatMap<S> A2(an.data->data(), m, k);
            ConstMatMap<S> B2(bn.data->data(), k, n);
            if (an.requires_grad) {
                ensure_grad(an);
                MatMap<S> GA(an.grad.data(), m, k);
                GA.noalias() += G * B2.transpose();
            }
            if (bn.requires_grad) {
                ensure_grad(bn);
                MatMap<S> GB(bn.grad.data(), k, n);
                GB.noalias() += A2.transpose() * G;
            }
        };
    }
    check_output_finite(*out, "matmul");
    return TensorT<S>(out);
}

// ============================================================================
// Shape ops
// ============================================================================

template <class S>
TensorT<S> reshape(const TensorT<S>& a, std::vector<int64_t> shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        n *= d;
    }
    if (n != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    }
    auto out = std::make_shared<NodeT<S>>();
    out->shape = std::move(shape);
    out->data = a.node()->data;  // view, no copy
    out->leaf = false;
    out->inputs = {a.node()};
    out->requires_grad = a.node()->requires_grad;
    if (out->requires_grad) {
        out->backward_fn = [](NodeT<S>& o) {
            auto& in = *o.inputs[0];
            if (!in.requires_grad) {
                return;
            }
            ensure_grad(in);
            for (size_t i = 0; i < in.grad.size(); ++i) {
                in.grad[i] += o.grad[i];
            }
        };
    }
    return TensorT<S>(out);
}

template <class S>
TensorT<S> row_block(const TensorT<S>& a, int64_t r0, int64_t rows) {
    if (a.rank() < 1) {
        throw ShapeError("row_block: rank-0 input");
    }
    const int64_t total_rows = a.dim(0);
    if (r0 < 0 || rows < 0 || r0 + rows > total_rows) {
        throw ShapeError("row_block: rows [" + std::to_string(r0) + ", " +
                         std::to_string(r0 + rows) + ") out of range for " +
                         shape_str(a.shape()));
    }
    std::vector<int64_t> out_shape = a.shape();
    out_shape[0] = rows;
    const int64_t row_elems = a.numel() / total_rows;
    auto out = make_op<S>(out_shape, {a.node()});
    const auto& ad = *a.node()->data;
    auto& od = *out->data;
    std::copy(ad.begin() + r0 * row_elems, ad.begin() + (r0 + rows) * row_elems, od.begin());
    if (out->requires_grad) {
        out->backward_fn = [r0, row_elems](NodeT<S>& o) {
            auto& in = *o.inputs[0];
            if (!in.requires_grad) {
                return;
            }
            ensure_grad(in);
            const size_t base = static_cast<size_t>(r0 * row_elems);
            for (size_t i = 0; i < o.grad.size(); ++i) {
                in.grad[base + i] += o.grad[i];
            }
        };
    }
    return TensorT<S>(out);
}

// ============================================================================
// Softmax family
// ============================================================================

template <class S>
TensorT<S> softmax(const TensorT<S>& a, int axis) {
    if (axis < 0 || axis >= a.rank()) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(a.shape()));
    }
    const int64_t dim_ax = a.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) {
        outer *= a.dim(i);
    }
    for (int i = axis + 1; i < a.rank(); ++i) {
        inner *= a.dim(i);
    }
    auto out = make_op<S>(a.shape(), {a.node()});
    const auto& ad = *a.node()->data;
    auto& od = *out->data;
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * dim_ax * inner + in;
            S mx = -std::numeric_limits<S>::infinity();
            for (int64_t j = 0; j < dim_ax; ++j) {
                mx = std::max(mx, ad[static_cast<size_t>(base + j * inner)]);
            }
            if (mx == -std::numeric_limits<S>::infinity()) {
                throw NumericError("softmax: all entries along axis are -inf");
            }
            S total = 0;
            for (int64_t j = 0; j < dim_ax; ++j) {
                const S e = std::exp(ad[static_cast<size_t>(base + j * inner)] - mx);
                od[static_cast<size_t>(base + j * inner)] = e;
                total += e;
            }
            const S inv = S(1) / total;
            for (int64_t j = 0; j < dim_ax; ++j) {
                od[static_cast<size_t>(base + j * inner)] *= inv;
            }
        }
    }
    if (out->requires_grad) {
        out->backward_fn = [outer, inner, dim_ax](NodeT<S>& o) {
            auto& in = *o.inputs[0];
            if (!in.requires_grad) {
                return;
            }
            ensure_grad(in);
            const auto& p = *o.data;
            for (int64_t ou = 0; ou < outer; ++ou) {
                for (int64_t ix = 0; ix < inner; ++ix) {
                    const int64_t base = ou * dim_ax * inner + ix;
                    S dot = 0;
                    for (int64_t j = 0; j < dim_ax; ++j) {
                        const size_t t = static_cast<size_t>(base + j * inner);
                        dot += p[t] * o.grad[t];
                    }
                    for (int64_t j = 0; j < dim_ax; ++j) {
                        const size_t t = static_cast<size_t>(base + j * inner);
                        in.grad[t] += p[t] * (o.grad[t] - dot);
                    }
                }
            }
        };
    }
    check_output_finite(*out, "softmax");
    return TensorT<S>(out);
}

namespace {

template <class S>
void check_targets(const TensorT<S>& logits, const std::vector<int32_t>& targets,
                   const char* op) {
    if (logits.rank() != 2) {
        throw ShapeError(std::string(op) + ": logits must be [N, V], got " +
                         shape_str(logits.shape()));
    }
    if (static_cast<int64_t>(targets.size()) != logits.dim(0)) {
        throw ShapeError(std::string(op) + ": " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(logits.dim(0)) + " rows");
    }
    const int64_t v = logits.dim(1);
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] < 0 || targets[i] >= v) {
            throw ShapeError(std::string(op) + ": target " + std::to_string(targets[i]) +
                             " at row " + std::to_string(i) + " out of range [0, " +
                             std::to_string(v) + ")");
        }
    }
}

// log softmax(row)[target] per row.
template <class S>
void row_log_probs(const AlignedBuf<S>& logits, int64_t n, int64_t v,
                   const std::vector<int32_t>& targets, AlignedBuf<S>& out) {
    using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;
    out.resize(static_cast<size_t>(n));
    for (int64_t r = 0; r < n; ++r) {
        Eigen::Map<const Arr> row(logits.data() + r * v, v);
        const S mx = row.maxCoeff();
        const S total = (row - mx).exp().sum();
        out[static_cast<size_t>(r)] =
            row[targets[static_cast<size_t>(r)]] - mx - std::log(total);
    }
}

// dlogits[r, c] += coeff[r] * (softmax(row)[c] - one_hot(target)).
template <class S, class Coeff>
void accumulate_softmax_grad(NodeT<S>& lg, int64_t n, int64_t v,
                             const std::vector<int32_t>& targets, Coeff coeff) {
    using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;
    ensure_grad(lg);
    const auto& ld = *lg.data;
    for (int64_t r = 0; r < n; ++r) {
        const S c_r = coeff(r);
        if (c_r == S(0)) {
            continue;
        }
        Eigen::Map<const Arr> row(ld.data() + r * v, v);
        Eigen::Map<Arr> g(lg.grad.data() + r * v, v);
        const S mx = row.maxCoeff();
        const Arr e = (row - mx).exp();
        g += e * (c_r / e.sum());
        g[targets[static_cast<size_t>(r)]] -= c_r;
    }
}

}  // namespace

template <class S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int32_t>& targets) {
    check_targets(logits, targets, "cross_entropy");
    const int64_t n = logits.dim(0), v = logits.dim(1);
    auto out = make_op<S>({1}, {logits.node()});
    AlignedBuf<S> lp;
    row_log_probs(*logits.node()->data, n, v, targets, lp);
    S acc = 0;
    for (S x : lp) {
        acc -= x;
    }
    (*out->data)[0] = acc / static_cast<S>(n);
    if (out->requires_grad) {
        auto tcopy = targets;
        out->backward_fn = [n, v, tcopy](NodeT<S>& o) {
            auto& lg = *o.inputs[0];
            if (!lg.requires_grad) {
                return;
            }
            const S g = o.grad[0] / static_cast<S>(n);
            accumulate_softmax_grad(lg, n, v, tcopy, [g](int64_t) { return g; });
        };
    }
    check_output_finite(*out, "cross_entropy");
    return TensorT<S>(out);
}

template <class S>
TensorT<S> token_log_probs(const TensorT<S>& logits, const std::vector<int32_t>& targets) {
    check_targets(logits, targets, "token_log_probs");
    const int64_t n = logits.dim(0), v = logits.dim(1);
    auto out = make_op<S>({n}, {logits.node()});
    row_log_probs(*logits.node()->data, n, v, targets, *out->data);
    if (out->requires_grad) {
        auto tcopy = targets;
        out->backward_fn = [n, v, tcopy](NodeT<S>& o) {
            auto& lg = *o.inputs[0];
            if (!lg.requires_grad) {
                return;
            }
            const auto& g = o.grad;
            accumulate_softmax_grad(lg, n, v, tcopy,
                                    [&g](int64_t r) { return -g[static_cast<size_t>(r)]; });
        };
    }
    check_output_finite(*out, "token_log_probs");
    return TensorT<S>(out);
}

// ============================================================================
// Embedding lookup
// ============================================================================

template <class S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int32_t>& ids) {
    if (table.rank() != 2) {
        throw ShapeError("embedding: table must be [V, H], got " + shape_str(table.shape()));
    }
    const int64_t v = table.dim(0), h = table.dim(1);
    for (int32_t id : ids) {
        if (id < 0 || id >= v) {
            throw ShapeError("embedding: id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(v) + ")");
        }
    }
    const int64_t t = static_cast<int64_t>(ids.size());
    auto out = make_op<S>({t, h}, {table.node()});
    const auto& td = *table.node()->data;
    auto& od = *out->data;
    for (int64_t i = 0; i < t; ++i) {
        std::copy(td.begin() + ids[static_cast<size_t>(i)] * h,
                  td.begin() + (ids[static_cast<size_t>(i)] + 1) * h, od.begin() + i * h);
    }
    if (out->requires_grad) {
        auto idcopy = ids;
        out->backward_fn = [h, idcopy](NodeT<S>& o) {
            auto& tab = *o.inputs[0];
            if (!tab.requires_grad) {
                return;
            }
            ensure_grad(tab);
            for (size_t i = 0; i < idcopy.size(); ++i) {
                S* dst = tab.grad.data() + static_cast<int64_t>(idcopy[i]) * h;
                const S* src = o.grad.data() + static_cast<int64_t>(i) * h;
                for (int64_t c = 0; c < h; ++c) {
                    dst[c] += src[c];
                }
            }
        };
    }
    check_output_finite(*out, "embedding");
    return TensorT<S>(out);
}

// ============================================================================
// RMS normalization
// ============================================================================

template <class S>
TensorT<S> rmsnorm(const TensorT<S>& x, const TensorT<S>& gain, S eps) {
    if (x.rank() < 1 || gain.rank() != 1 || gain.dim(0) != x.dim(x.rank() - 1)) {
        throw ShapeError("rmsnorm: gain " + shape_str(gain.shape()) +
                         " incompatible with input " + shape_str(x.shape()));
    }
    const int64_t h = gain.dim(0);
    const int64_t rows = x.numel() / h;
    auto out = make_op<S>(x.shape(), {x.node(), gain.node()});
    const auto& xd = *x.node()->data;
    const auto& gd = *gain.node()->data;
    auto& od = *out->data;
    auto inv_rms = std::make_shared<AlignedBuf<S>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const S* xr = xd.data() + r * h;
        S ms = 0;
        for (int64_t c = 0; c < h; ++c) {
            ms += xr[c] * xr[c];
        }
        ms = ms / static_cast<S>(h) + eps;
        const S inv = S(1) / std::sqrt(ms);
        (*inv_rms)[static_cast<size_t>(r)] = inv;
        S* orow = od.data() + r * h;
        for (int64_t c = 0; c < h; ++c) {
            orow[c] = xr[c] * inv * gd[static_cast<size_t>(c)];
        }
    }
    if (out->requires_grad) {
        out->backward_fn = [rows, h, inv_rms](NodeT<S>& o) {
            auto& xn = *o.inputs[0];
            auto& gn = *o.inputs[1];
            const auto& xd2 = *xn.data;
            const auto& gd2 = *gn.data;
            if (xn.requires_grad) {
                ensure_grad(xn);
            }
            if (gn.requires_grad) {
                ensure_grad(gn);
            }
            for (int64_t r = 0; r < rows; ++r) {
                const S inv = (*inv_rms)[static_cast<size_t>(r)];
                const S* xr = xd2.data() + r * h;
                const S* gr = o.grad.data() + r * h;
                if (xn.requires_grad) {
                    S dot = 0;
                    for (int64_t c = 0; c < h; ++c) {
                        dot += gr[c] * gd2[static_cast<size_t>(c)] * xr[c];
                    }
                    const S k = inv * inv * inv * dot / static_cast<S>(h);
                    S* dx = xn.grad.data() + r * h;
                    for (int64_t c = 0; c < h; ++c) {
                        dx[c] += gr[c] * gd2[static_cast<size_t>(c)] * inv - k * xr[c];
                    }
                }
                if (gn.requires_grad) {
                    for (int64_t c = 0; c < h; ++c) {
                        gn.grad[static_cast<size_t>(c)] += gr[c] * xr[c] * inv;
                    }
                }
            }
        };
    }
    check_output_finite(*out, "rmsnorm");
    return TensorT<S>(out);
}

// ============================================================================
// Rotary position embedding
// ============================================================================

template <class S>
TensorT<S> rope(const TensorT<S>& x, const std::vector<int64_t>& positions, double base) {
    if (x.rank() != 3) {
        throw ShapeError("rope: expected [T, n_heads, head_dim], got " + shape_str(x.shape()));
    }
    const int64_t t = x.dim(0), nh = x.dim(1), hd = x.dim(2);
    if (hd % 2 != 0) {
        throw ShapeError("rope: head_dim must be even, got " + std::to_string(hd));
    }
    if (static_cast<int64_t>(positions.size()) != t) {
        throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(t) + " rows");
    }
    const int64_t half = hd / 2;
    // Angles are computed in double regardless of S.
    auto cs = std::make_shared<AlignedBuf<S>>(static_cast<size_t>(t * half * 2));
    for (int64_t i = 0; i < t; ++i) {
        for (int64_t p = 0; p < half; ++p) {
            const double freq =
                std::pow(base, -2.0 * static_cast<double>(p) / static_cast<double>(hd));
            const double ang = static_cast<double>(positions[static_cast<size_t>(i)]) * freq;
            (*cs)[static_cast<size_t>((i * half + p) * 2)] = static_cast<S>(std::cos(ang));
            (*cs)[static_cast<size_t>((i * half + p) * 2 + 1)] = static_cast<S>(std::sin(ang));
        }
    }
    auto out = make_op<S>(x.shape(), {x.node()});
    const auto& xd = *x.node()->data;
    auto& od = *out->data;
    for (int64_t i = 0; i < t; ++i) {
        for (int64_t hh = 0; hh < nh; ++hh) {
            const S* xr = xd.data() + (i * nh + hh) * hd;
            S* orow = od.data() + (i * nh + hh) * hd;
            for (int64_t p = 0; p < half; ++p) {
                const S c = (*cs)[static_cast<size_t>((i * half + p) * 2)];
                const S s = (*cs)[static_cast<size_t>((i * half + p) * 2 + 1)];
                const S x0 = xr[2 * p], x1 = xr[2 * p + 1];
                orow[2 * p] = x0 * c - x1 * s;
                orow[2 * p + 1] = x0 * s + x1 * c;
            }
        }
    }
    if (out->requires_grad) {
        out->backward_fn = [t, nh, hd, half, cs](NodeT<S>& o) {
            auto& in = *o.inputs[0];
            if (!in.requires_grad) {
                return;
            }
            ensure_grad(in);
            for (int64_t i = 0; i < t; ++i) {
                for (int64_t hh = 0; hh < nh; ++hh) {
                    const S* gr = o.grad.data() + (i * nh + hh) * hd;
                    S* dx = in.grad.data() + (i * nh + hh) * hd;
                    for (int64_t p = 0; p < half; ++p) {
                        const S c = (*cs)[static_cast<size_t>((i * half + p) * 2)];
                        const S s = (*cs)[static_cast<size_t>((i * half + p) * 2 + 1)];
                        const S g0 = gr[2 * p], g1 = gr[2 * p + 1];
                        // inverse rotation
                        dx[2 * p] += g0 * c + g1 * s;
                        dx[2 * p + 1] += -g0 * s + g1 * c;
                    }
                }
            }
        };
    }
    check_output_finite(*out, "rope");
    return TensorT<S>(out);
}

// ============================================================================
// Attention
// ============================================================================

namespace {

inline int64_t window_start(int64_t i, int64_t window) {
    return window >= 1 ? std::max<int64_t>(0, i - window + 1) : 0;
}

}  // namespace

namespace {

// Head-major scratch layouts for the attention kernel. For each head the
// keys and values are kept both row-major [T, hd] and transposed [hd, T];
// the transposed form makes the per-query score and probe loops contiguous
// over the window span.
template <class S>
struct AttnScratch {
    int64_t t, hd;
    AlignedBuf<S> rows;  // [T, hd]
    AlignedBuf<S> cols;  // [hd, T]

    void load(const S* base, int64_t t_in, int64_t nh, int64_t hd_in, int64_t h,
              bool want_cols) {
        t = t_in;
        hd = hd_in;
        rows.resize(static_cast<size_t>(t * hd));
        for (int64_t i = 0; i < t; ++i) {
            const S* src = base + (i * nh + h) * hd;
            std::copy(src, src + hd, rows.data() + i * hd);
        }
        if (want_cols) {
            cols.resize(static_cast<size_t>(t * hd));
            for (int64_t i = 0; i < t; ++i) {
                for (int64_t d = 0; d < hd; ++d) {
                    cols[static_cast<size_t>(d * t + i)] =
                        rows[static_cast<size_t>(i * hd + d)];
                }
            }
        }
    }
};

// acc[0..n) += s * src[0..n)
template <class S>
inline void axpy(S* acc, const S* src, S s, int64_t n) {
    for (int64_t d = 0; d < n; ++d) {
        acc[d] += s * src[d];
    }
}

// Fixed eight-lane reduction tree; the summation order is a pure function
// of n, so results are bit-stable across calls.
template <class S>
inline S lane_reduce(S lanes[8]) {
    lanes[0] += lanes[4];
    lanes[1] += lanes[5];
    lanes[2] += lanes[6];
    lanes[3] += lanes[7];
    lanes[0] += lanes[2];
    lanes[1] += lanes[3];
    return lanes[0] + lanes[1];
}

template <class S>
inline S lane_dot(const S* a, const S* b, int64_t n) {
    S lanes[8] = {S(0), S(0), S(0), S(0), S(0), S(0), S(0), S(0)};
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int l = 0; l < 8; ++l) {
            lanes[l] += a[i + l] * b[i + l];
        }
    }
    for (int l = 0; i + l < n; ++l) {
        lanes[l] += a[i + l] * b[i + l];
    }
    return lane_reduce(lanes);
}

template <class S>
inline S lane_sum(const S* a, int64_t n) {
    S lanes[8] = {S(0), S(0), S(0), S(0), S(0), S(0), S(0), S(0)};
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int l = 0; l < 8; ++l) {
            lanes[l] += a[i + l];
        }
    }
    for (int l = 0; i + l < n; ++l) {
        lanes[l] += a[i + l];
    }
    return lane_reduce(lanes);
}

}  // namespace

template <class S>
TensorT<S> attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                     int64_t window) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
        throw ShapeError("attention: q/k/v must be [T, n_heads, head_dim]");
    }
    const int64_t tq = q.dim(0), nh = q.dim(1), hd = q.dim(2);
    const int64_t tk = k.dim(0);
    if (k.dim(1) != nh || k.dim(2) != hd || v.dim(0) != tk || v.dim(1) != nh || v.dim(2) != hd) {
        throw ShapeError("attention: shape mismatch q=" + shape_str(q.shape()) +
                         " k=" + shape_str(k.shape()) + " v=" + shape_str(v.shape()));
    }
    if (window >= 1 && tq != tk) {
        throw ShapeError("attention: sliding window requires matching q/k lengths");
    }
    if (tk == 0) {
        throw ShapeError("attention: empty key set");
    }

    // Offsets into the ragged probability buffer (per query, shared by heads).
    std::vector<int64_t> offs(static_cast<size_t>(tq) + 1, 0);
    for (int64_t i = 0; i < tq; ++i) {
        const int64_t lo = window >= 1 ? window_start(i, window) : 0;
        const int64_t hi = window >= 1 ? i + 1 : tk;
        offs[static_cast<size_t>(i) + 1] = offs[static_cast<size_t>(i)] + (hi - lo);
    }
    const int64_t span_total = offs[static_cast<size_t>(tq)];
    auto probs = std::make_shared<AlignedBuf<S>>(static_cast<size_t>(nh * span_total));
    auto offs_sh = std::make_shared<std::vector<int64_t>>(std::move(offs));

    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(hd));
    auto out = make_op<S>({tq, nh, hd}, {q.node(), k.node(), v.node()});
    const auto& qd = *q.node()->data;
    const auto& kd = *k.node()->data;
    const auto& vd = *v.node()->data;
    auto& od = *out->data;

    AttnScratch<S> kh, vh;
    AlignedBuf<S> scores(static_cast<size_t>(tk));
    for (int64_t h = 0; h < nh; ++h) {
        kh.load(kd.data(), tk, nh, hd, h, /*want_cols=*/true);
        vh.load(vd.data(), tk, nh, hd, h, /*want_cols=*/true);
        for (int64_t i = 0; i < tq; ++i) {
            const int64_t lo = window >= 1 ? window_start(i, window) : 0;
            const int64_t hi = window >= 1 ? i + 1 : tk;
            const int64_t span = hi - lo;
            const S* qr = qd.data() + (i * nh + h) * hd;
            S* sc = scores.data();
            std::fill(sc, sc + span, S(0));
            for (int64_t d = 0; d < hd; ++d) {
                axpy(sc, kh.cols.data() + d * tk + lo, qr[d], span);
            }
            Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> arr(sc, span);
            arr *= inv_sqrt;
            const S mx = arr.maxCoeff();
            arr = (arr - mx).exp();
            arr *= S(1) / lane_sum(sc, span);
            S* prow = probs->data() + h * span_total + (*offs_sh)[static_cast<size_t>(i)];
            std::copy(sc, sc + span, prow);
            S* orow = od.data() + (i * nh + h) * hd;
            for (int64_t d = 0; d < hd; ++d) {
                orow[d] = lane_dot(prow, vh.cols.data() + d * tk + lo, span);
            }
        }
    }
    // scores + weighted values, per head
    mac_record(2 * static_cast<uint64_t>(nh) * static_cast<uint64_t>(span_total) *
               static_cast<uint64_t>(hd));

    if (out->requires_grad) {
        out->backward_fn = [tq, tk, nh, hd, window, inv_sqrt, probs, offs_sh, span_total](
                               NodeT<S>& o) {
            auto& qn = *o.inputs[0];
            auto& kn = *o.inputs[1];
            auto& vn = *o.inputs[2];
            const auto& qd2 = *qn.data;
            const auto& kd2 = *kn.data;
            const auto& vd2 = *vn.data;
            if (qn.requires_grad) {
                ensure_grad(qn);
            }
            if (kn.requires_grad) {
                ensure_grad(kn);
            }
            if (vn.requires_grad) {
                ensure_grad(vn);
            }
            AttnScratch<S> kh, vh;
            AlignedBuf<S> dk_cols, dv_cols;  // [hd, tk] accumulators
            AlignedBuf<S> dprobs(static_cast<size_t>(tk));
            AlignedBuf<S> dscores(static_cast<size_t>(tk));
            for (int64_t h = 0; h < nh; ++h) {
                kh.load(kd2.data(), tk, nh, hd, h, /*want_cols=*/true);
                vh.load(vd2.data(), tk, nh, hd, h, /*want_cols=*/true);
                dk_cols.assign(static_cast<size_t>(tk * hd), S(0));
                dv_cols.assign(static_cast<size_t>(tk * hd), S(0));
                for (int64_t i = 0; i < tq; ++i) {
                    const int64_t lo = window >= 1 ? window_start(i, window) : 0;
                    const int64_t hi = window >= 1 ? i + 1 : tk;
                    const int64_t span = hi - lo;
                    const S* prow =
                        probs->data() + h * span_total + (*offs_sh)[static_cast<size_t>(i)];
                    const S* gr = o.grad.data() + (i * nh + h) * hd;
                    // dL/dprobs over the window, contiguous in j
                    S* dp = dprobs.data();
                    std::fill(dp, dp + span, S(0));
                    for (int64_t d = 0; d < hd; ++d) {
                        axpy(dp, vh.cols.data() + d * tk + lo, gr[d], span);
                    }
                    const S pdot = lane_dot(prow, dp, span);
                    if (vn.requires_grad) {
                        for (int64_t d = 0; d < hd; ++d) {
                            axpy(dv_cols.data() + d * tk + lo, prow, gr[d], span);
                        }
                    }
                    if (!qn.requires_grad && !kn.requires_grad) {
                        continue;
                    }
                    S* ds = dscores.data();
                    for (int64_t j = 0; j < span; ++j) {
                        ds[j] = prow[j] * (dp[j] - pdot) * inv_sqrt;
                    }
                    if (qn.requires_grad) {
                        S* dq = qn.grad.data() + (i * nh + h) * hd;
                        for (int64_t d = 0; d < hd; ++d) {
                            dq[d] += lane_dot(ds, kh.cols.data() + d * tk + lo, span);
                        }
                    }
                    if (kn.requires_grad) {
                        const S* qr = qd2.data() + (i * nh + h) * hd;
                        for (int64_t d = 0; d < hd; ++d) {
                            axpy(dk_cols.data() + d * tk + lo, ds, qr[d], span);
                        }
                    }
                }
                // scatter the head-major accumulators back
                if (kn.requires_grad) {
                    for (int64_t j = 0; j < tk; ++j) {
                        S* dk = kn.grad.data() + (j * nh + h) * hd;
                        for (int64_t d = 0; d < hd; ++d) {
                            dk[d] += dk_cols[static_cast<size_t>(d * tk + j)];
                        }
                    }
                }
                if (vn.requires_grad) {
                    for (int64_t j = 0; j < tk; ++j) {
                        S* dv = vn.grad.data() + (j * nh + h) * hd;
                        for (int64_t d = 0; d < hd; ++d) {
                            dv[d] += dv_cols[static_cast<size_t>(d * tk + j)];
                        }
                    }
                }
            }
        };
    }
    check_output_finite(*out, "attention");
    return TensorT<S>(out);
}

// ============================================================================
// Backward driver
// ============================================================================

namespace {

template <class S>
std::vector<NodeT<S>*> topo_order(NodeT<S>* root) {
    std::vector<NodeT<S>*> order;
    std::unordered_set<NodeT<S>*> visited;
    // Iterative post-order DFS; creation order is not available from a root
    // handle alone, so the order is recovered from the input edges.
    std::vector<std::pair<NodeT<S>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            NodeT<S>* child = node->inputs[next].get();
            ++next;
            if (visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

template <class S>
void backward(const TensorT<S>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward: seed must be a defined scalar tensor");
    }
    NodeT<S>* root = loss.node().get();
    if (root->state == 2) {
        throw std::logic_error("backward: graph has been released");
    }
    if (root->state == 1) {
        throw std::logic_error("backward: graph already consumed; rebuild before calling again");
    }
    auto order = topo_order(root);
    for (NodeT<S>* n : order) {
        if (n->state == 2) {
            throw std::logic_error("backward: graph contains released nodes");
        }
    }
    ensure_grad(*root);
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<S>* n = *it;
        if (!n->leaf) {
            n->state = 1;
        }
        if (n->backward_fn && n->requires_grad && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
}

template <class S>
void release_graph(const TensorT<S>& t) {
    if (!t.defined()) {
        return;
    }
    auto order = topo_order(t.node().get());
    for (NodeT<S>* n : order) {
        if (!n->leaf) {
            n->state = 2;
            n->backward_fn = nullptr;
            n->inputs.clear();
        }
    }
}

// ============================================================================
// Gradient checking
// ============================================================================

template <class S>
S grad_check(const std::function<TensorT<S>(const TensorT<S>&)>& f, const TensorT<S>& x, S eps) {
    TensorT<S> x0 = TensorT<S>::from_data(x.shape(), {x.data().begin(), x.data().end()}, true);
    TensorT<S> y = f(x0);
    if (y.numel() != 1) {
        throw ShapeError("grad_check: f must return a scalar");
    }
    backward(y);
    std::vector<S> analytic(static_cast<size_t>(x.numel()), S(0));
    if (x0.has_grad()) {
        std::copy(x0.grad().begin(), x0.grad().end(), analytic.begin());
    }

    std::vector<S> base(x.data().begin(), x.data().end());
    S max_rel = 0;
    for (size_t i = 0; i < base.size(); ++i) {
        auto eval = [&](S delta) {
            std::vector<S> pert = base;
            pert[i] += delta;
            TensorT<S> xp = TensorT<S>::from_data(x.shape(), std::move(pert), false);
            const S val = f(xp).item();
            if (!std::isfinite(static_cast<double>(val))) {
                throw NumericError("grad_check: non-finite function value");
            }
            return val;
        };
        const S numeric = (eval(eps) - eval(-eps)) / (S(2) * eps);
        const S a = analytic[i];
        const S denom = std::max({std::abs(a), std::abs(numeric), S(1e-8)});
        max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
    return max_rel;
}

// ============================================================================
// Explicit instantiations
// ============================================================================

#define LTM_INSTANTIATE_TENSOR(S)                                                          \
    template class TensorT<S>;                                                             \
    template TensorT<S> add<S>(const TensorT<S>&, const TensorT<S>&);                      \
    template TensorT<S> sub<S>(const TensorT<S>&, const TensorT<S>&);                      \
    template TensorT<S> mul<S>(const TensorT<S>&, const TensorT<S>&);                      \
    template TensorT<S> scale<S>(const TensorT<S>&, S);                                    \
    template TensorT<S> add_scalar<S>(const TensorT<S>&, S);                               \
    template TensorT<S> exp<S>(const TensorT<S>&);                                         \
    template TensorT<S> square<S>(const TensorT<S>&);                                      \
    template TensorT<S> silu<S>(const TensorT<S>&);                                        \
    template TensorT<S> sum<S>(const TensorT<S>&);                                         \
    template TensorT<S> mean<S>(const TensorT<S>&);                                        \
    template TensorT<S> matmul<S>(const TensorT<S>&, const TensorT<S>&);                   \
    template TensorT<S> reshape<S>(const TensorT<S>&, std::vector<int64_t>);               \
    template TensorT<S> row_block<S>(const TensorT<S>&, int64_t, int64_t);                 \
    template TensorT<S> softmax<S>(const TensorT<S>&, int);                                \
    template TensorT<S> cross_entropy<S>(const TensorT<S>&, const std::vector<int32_t>&); \
    template TensorT<S> token_log_probs<S>(const TensorT<S>&,                              \
                                           const std::vector<int32_t>&);                   \
    template TensorT<S> embedding<S>(const TensorT<S>&, const std::vector<int32_t>&);      \
    template TensorT<S> rmsnorm<S>(const TensorT<S>&, const TensorT<S>&, S);               \
    template TensorT<S> rope<S>(const TensorT<S>&, const std::vector<int64_t>&, double);   \
    template TensorT<S> attention<S>(const TensorT<S>&, const TensorT<S>&,                 \
                                     const TensorT<S>&, int64_t);                          \
    template void backward<S>(const TensorT<S>&);                                          \
    template void release_graph<S>(const TensorT<S>&);                                     \
    template S grad_check<S>(const std::function<TensorT<S>(const TensorT<S>&)>&,          \
                             const TensorT<S>&, S);

LTM_INSTANTIATE_TENSOR(float)
LTM_INSTANTIATE_TENSOR(double)

#undef LTM_INSTANTIATE_TENSOR

}  // namespace ltm
