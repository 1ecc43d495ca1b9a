#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cadenceforge/common.hpp"
#include "cadenceforge/rng.hpp"

namespace cforge {

// ---- recording switch ------------------------------------------------------

inline thread_local int g_no_grad_depth = 0;

struct NoGradGuard {
    NoGradGuard() { ++g_no_grad_depth; }
    ~NoGradGuard() { --g_no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_recording() { return g_no_grad_depth == 0; }

// ---- graph node ------------------------------------------------------------

template <class S>
struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<S> value;
    std::vector<S> grad;  // persistent accumulator, lazily sized
    std::vector<S> tmp;   // scratch for the pass in flight
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this->tmp, accumulates into parents' tmp (which backward() has
    // zero-initialized beforehand).
    std::function<void(TensorNode&)> backprop;
};

// Dynamic-tape tensor: every op builds a fresh node, backward() walks the
// DAG in reverse topological order. Copying a Tensor aliases the node.
template <class S = float>
class Tensor {
public:
    using Node = TensorNode<S>;

    Tensor() : n_(std::make_shared<Node>()) {}

    explicit Tensor(std::vector<std::size_t> shape, S fill = S(0), bool requires_grad = false)
        : n_(std::make_shared<Node>()) {
        n_->shape = std::move(shape);
        n_->value.assign(count(n_->shape), fill);
        n_->requires_grad = requires_grad;
    }

    static Tensor from(std::vector<std::size_t> shape, std::vector<S> data,
                       bool requires_grad = false) {
        Tensor t;
        require(count(shape) == data.size(), "tensor data does not match shape");
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(data);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(S v) { return from({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return n_->shape; }
    std::size_t dim(std::size_t i) const { return n_->shape[i]; }
    std::size_t rank() const { return n_->shape.size(); }
    std::size_t numel() const { return n_->value.size(); }

    std::vector<S>& value() { return n_->value; }
    const std::vector<S>& value() const { return n_->value; }
    S item() const {
        require(n_->value.size() == 1, "item() on non-scalar tensor");
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) {
        require(n_->parents.empty(), "requires_grad is only settable on leaves");
        n_->requires_grad = rg;
    }

    std::vector<S>& grad() {
        if (n_->grad.size() != n_->value.size()) n_->grad.assign(n_->value.size(), S(0));
        return n_->grad;
    }
    const std::vector<S>& grad() const { return const_cast<Tensor*>(this)->grad(); }
    void zero_grad() { n_->grad.assign(n_->value.size(), S(0)); }

    // Accumulates d(self)/d(leaf) into every requires_grad node reachable
    // from here. Repeat calls accumulate (two backwards = doubled grads).
    void backward() {
        require(n_->value.size() == 1, "backward() expects a scalar loss");
        require(n_->requires_grad, "backward() on a non-recorded tensor");
        std::vector<Node*> order;
        topo_sort(order);
        for (Node* nd : order) nd->tmp.assign(nd->value.size(), S(0));
        n_->tmp[0] = S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* nd = *it;
            if (nd->backprop) nd->backprop(*nd);
        }
        for (Node* nd : order) {
            if (!nd->requires_grad) continue;
            if (nd->grad.size() != nd->value.size()) nd->grad.assign(nd->value.size(), S(0));
            for (std::size_t i = 0; i < nd->tmp.size(); ++i) nd->grad[i] += nd->tmp[i];
            nd->tmp.clear();
            nd->tmp.shrink_to_fit();
        }
    }

    Tensor detach() const { return from(n_->shape, n_->value, false); }

    std::shared_ptr<Node> node() const { return n_; }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }

private:
    void topo_sort(std::vector<Node*>& order) const {
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack{{n_.get(), 0}};
        seen.insert(n_.get());
        while (!stack.empty()) {
            auto& [nd, idx] = stack.back();
            if (idx < nd->parents.size()) {
                Node* p = nd->parents[idx++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(nd);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> n_;
};

namespace detail {

// Wires up parents + backprop on a freshly computed output, honouring the
// global recording switch. `fn` must only touch parents that require grad.
template <class S>
void attach(Tensor<S>& out, std::vector<std::shared_ptr<TensorNode<S>>> parents,
            std::function<void(TensorNode<S>&)> fn) {
    if (!grad_recording()) return;
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (!any) return;
    auto node = out.node();
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backprop = std::move(fn);
}

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::attach<S>(out, {a.node(), b.node()}, [an, bn](TensorNode<S>& self) {
        if (an->requires_grad)
            for (std::size_t i = 0; i < self.tmp.size(); ++i) an->tmp[i] += self.tmp[i];
        if (bn->requires_grad)
            for (std::size_t i = 0; i < self.tmp.size(); ++i) bn->tmp[i] += self.tmp[i];
    });
    return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::attach<S>(out, {a.node(), b.node()}, [an, bn](TensorNode<S>& self) {
        if (an->requires_grad)
            for (std::size_t i = 0; i < self.tmp.size(); ++i) an->tmp[i] += self.tmp[i];
        if (bn->requires_grad)
            for (std::size_t i = 0; i < self.tmp.size(); ++i) bn->tmp[i] -= self.tmp[i];
    });
    return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::attach<S>(out, {a.node(), b.node()}, [an, bn, av, bv](TensorNode<S>& self) {
        if (an->requires_grad)
            for (std::size_t i = 0; i < self.tmp.size(); ++i) an->tmp[i] += self.tmp[i] * bv[i];
        if (bn->requires_grad)
            for (std::size_t i = 0; i < self.tmp.size(); ++i) bn->tmp[i] += self.tmp[i] * av[i];
    });
    return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S k) {
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * k;
    auto an = a.node().get();
    detail::attach<S>(out, {a.node()}, [an, k](TensorNode<S>& self) {
        for (std::size_t i = 0; i < self.tmp.size(); ++i) an->tmp[i] += self.tmp[i] * k;
    });
    return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > S(0) ? av[i] : S(0);
    auto an = a.node().get();
    detail::attach<S>(out, {a.node()}, [an, av](TensorNode<S>& self) {
        for (std::size_t i = 0; i < self.tmp.size(); ++i)
            if (av[i] > S(0)) an->tmp[i] += self.tmp[i];
    });
    return out;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = S(1) / (S(1) + std::exp(-double(av[i])));
    auto an = a.node().get();
    const auto sv = out.value();
    detail::attach<S>(out, {a.node()}, [an, sv](TensorNode<S>& self) {
        for (std::size_t i = 0; i < self.tmp.size(); ++i)
            an->tmp[i] += self.tmp[i] * sv[i] * (S(1) - sv[i]);
    });
    return out;
}

// Exact GELU, x * Phi(x) with the gaussian CDF via erf.
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const double x = double(av[i]);
        ov[i] = static_cast<S>(x * 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)));
    }
    auto an = a.node().get();
    detail::attach<S>(out, {a.node()}, [an, av](TensorNode<S>& self) {
        for (std::size_t i = 0; i < self.tmp.size(); ++i) {
            const double x = double(av[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
            an->tmp[i] += self.tmp[i] * static_cast<S>(cdf + x * pdf);
        }
    });
    return out;
}

// Inverted dropout; scaling happens at train time so eval is a no-op.
template <class S>
Tensor<S> dropout(const Tensor<S>& a, double p, Rng& rng) {
    require(p >= 0.0 && p < 1.0, "dropout p must be in [0, 1)");
    if (p == 0.0) return a;
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    std::vector<S> mask(av.size());
    const S keep_inv = static_cast<S>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < ov.size(); ++i) {
        mask[i] = rng.bernoulli(p) ? S(0) : keep_inv;
        ov[i] = av[i] * mask[i];
    }
    auto an = a.node().get();
    detail::attach<S>(out, {a.node()}, [an, mask = std::move(mask)](TensorNode<S>& self) {
        for (std::size_t i = 0; i < self.tmp.size(); ++i) an->tmp[i] += self.tmp[i] * mask[i];
    });
    return out;
}

// ---- shape plumbing ---------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, std::vector<std::size_t> shape) {
    require(Tensor<S>::count(shape) == a.numel(), "reshape: element count mismatch");
    Tensor<S> out = Tensor<S>::from(std::move(shape), a.value());
    auto an = a.node().get();
    detail::attach<S>(out, {a.node()}, [an](TensorNode<S>& self) {
        for (std::size_t i = 0; i < self.tmp.size(); ++i) an->tmp[i] += self.tmp[i];
    });
    return out;
}

template <class S>
Tensor<S> concat_lastdim(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.rank() >= 1 && a.rank() == b.rank(), "concat: rank mismatch");
    for (std::size_t i = 0; i + 1 < a.rank(); ++i)
        require(a.dim(i) == b.dim(i), "concat: leading dims differ");
    const std::size_t da = a.shape().back(), db = b.shape().back();
    const std::size_t rows = a.numel() / da;
    auto shape = a.shape();
    shape.back() = da + db;
    Tensor<S> out(shape);
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < da; ++i) ov[r * (da + db) + i] = av[r * da + i];
        for (std::size_t i = 0; i < db; ++i) ov[r * (da + db) + da + i] = bv[r * db + i];
    }
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::attach<S>(out, {a.node(), b.node()}, [an, bn, rows, da, db](TensorNode<S>& self) {
        for (std::size_t r = 0; r < rows; ++r) {
            if (an->requires_grad)
                for (std::size_t i = 0; i < da; ++i)
                    an->tmp[r * da + i] += self.tmp[r * (da + db) + i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < db; ++i)
                    bn->tmp[r * db + i] += self.tmp[r * (da + db) + da + i];
        }
    });
    return out;
}

// Stack N same-shape [B, D] tensors into [B, N, D].
template <class S>
Tensor<S> stack_tokens(const std::vector<Tensor<S>>& xs) {
    require(!xs.empty(), "stack_tokens: empty input");
    const std::size_t B = xs[0].dim(0), D = xs[0].dim(1), N = xs.size();
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    for (const auto& x : xs) {
        require(x.rank() == 2 && x.dim(0) == B && x.dim(1) == D, "stack_tokens: shape mismatch");
        parents.push_back(x.node());
    }
    Tensor<S> out({B, N, D});
    auto& ov = out.value();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t d = 0; d < D; ++d)
                ov[(b * N + n) * D + d] = xs[n].value()[b * D + d];
    std::vector<TensorNode<S>*> raw;
    for (auto& p : parents) raw.push_back(p.get());
    detail::attach<S>(out, parents, [raw, B, D](TensorNode<S>& self) {
        const std::size_t N = raw.size();
        for (std::size_t n = 0; n < N; ++n) {
            if (!raw[n]->requires_grad) continue;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t d = 0; d < D; ++d)
                    raw[n]->tmp[b * D + d] += self.tmp[(b * N + n) * D + d];
        }
    });
    return out;
}

// [B, N, D] with h heads -> [B*h, N, D/h]
template <class S>
Tensor<S> split_heads(const Tensor<S>& x, std::size_t heads) {
    require(x.rank() == 3, "split_heads: expect [B, N, D]");
    const std::size_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
    require(D % heads == 0, "split_heads: D not divisible by head count");
    const std::size_t dh = D / heads;
    Tensor<S> out({B * heads, N, dh});
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t j = 0; j < dh; ++j)
                    ov[((b * heads + h) * N + n) * dh + j] = xv[(b * N + n) * D + h * dh + j];
    auto xn = x.node().get();
    detail::attach<S>(out, {x.node()}, [xn, B, N, D, heads, dh](TensorNode<S>& self) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t j = 0; j < dh; ++j)
                        xn->tmp[(b * N + n) * D + h * dh + j] +=
                            self.tmp[((b * heads + h) * N + n) * dh + j];
    });
    return out;
}

// [B*h, N, dh] -> [B, N, h*dh]
template <class S>
Tensor<S> merge_heads(const Tensor<S>& x, std::size_t heads) {
    require(x.rank() == 3 && x.dim(0) % heads == 0, "merge_heads: bad shape");
    const std::size_t B = x.dim(0) / heads, N = x.dim(1), dh = x.dim(2);
    const std::size_t D = heads * dh;
    Tensor<S> out({B, N, D});
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t j = 0; j < dh; ++j)
                    ov[(b * N + n) * D + h * dh + j] = xv[((b * heads + h) * N + n) * dh + j];
    auto xn = x.node().get();
    detail::attach<S>(out, {x.node()}, [xn, B, N, D, heads, dh](TensorNode<S>& self) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t j = 0; j < dh; ++j)
                        xn->tmp[((b * heads + h) * N + n) * dh + j] +=
                            self.tmp[(b * N + n) * D + h * dh + j];
    });
    return out;
}

// ---- dense algebra -----------------------------------------------------------

// x: [..., I], w: [O, I], b: [O] (optional) -> [..., O]
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>* b = nullptr) {
    require(x.rank() >= 1 && w.rank() == 2, "linear: bad ranks");
    const std::size_t I = x.shape().back();
    require(w.dim(1) == I, "linear: inner dim mismatch");
    const std::size_t O = w.dim(0);
    const std::size_t rows = x.numel() / I;
    if (b) require(b->rank() == 1 && b->dim(0) == O, "linear: bias shape");

    auto shape = x.shape();
    shape.back() = O;
    Tensor<S> out(shape);
    const auto& xv = x.value();
    const auto& wv = w.value();
    auto& ov = out.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = &xv[r * I];
        S* orow = &ov[r * O];
        for (std::size_t o = 0; o < O; ++o) {
            const S* wr = &wv[o * I];
            S acc = b ? b->value()[o] : S(0);
            for (std::size_t i = 0; i < I; ++i) acc += xr[i] * wr[i];
            orow[o] = acc;
        }
    }
    auto xn = x.node().get();
    auto wn = w.node().get();
    TensorNode<S>* bn = b ? b->node().get() : nullptr;
    std::vector<std::shared_ptr<TensorNode<S>>> parents{x.node(), w.node()};
    if (b) parents.push_back(b->node());
    detail::attach<S>(out, parents, [xn, wn, bn, xv, wv, rows, I, O](TensorNode<S>& self) {
        if (xn->requires_grad) {
            for (std::size_t r = 0; r < rows; ++r) {
                const S* g = &self.tmp[r * O];
                S* xg = &xn->tmp[r * I];
                for (std::size_t o = 0; o < O; ++o) {
                    const S go = g[o];
                    const S* wr = &wv[o * I];
                    for (std::size_t i = 0; i < I; ++i) xg[i] += go * wr[i];
                }
            }
        }
        if (wn->requires_grad) {
            for (std::size_t r = 0; r < rows; ++r) {
                const S* g = &self.tmp[r * O];
                const S* xr = &xv[r * I];
                for (std::size_t o = 0; o < O; ++o) {
                    const S go = g[o];
                    S* wg = &wn->tmp[o * I];
                    for (std::size_t i = 0; i < I; ++i) wg[i] += go * xr[i];
                }
            }
        }
        if (bn && bn->requires_grad) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < O; ++o) bn->tmp[o] += self.tmp[r * O + o];
        }
    });
    return out;
}

// batched a [B, M, K] x b [B, K, N] -> [B, M, N]
template <class S>
Tensor<S> bmm_nn(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
            "bmm_nn: shape mismatch");
    const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    Tensor<S> out({B, M, N});
    const auto& avv = a.value();
    const auto& bvv = b.value();
    auto& ov = out.value();
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = 0; k < K; ++k) {
                const S av = avv[(bb * M + m) * K + k];
                if (av == S(0)) continue;
                const S* brow = &bvv[(bb * K + k) * N];
                S* orow = &ov[(bb * M + m) * N];
                for (std::size_t n = 0; n < N; ++n) orow[n] += av * brow[n];
            }
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::attach<S>(out, {a.node(), b.node()},
                      [an, bn, avv, bvv, B, M, K, N](TensorNode<S>& self) {
        if (an->requires_grad) {
            // da = g . b^T
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t m = 0; m < M; ++m)
                    for (std::size_t k = 0; k < K; ++k) {
                        const S* g = &self.tmp[(bb * M + m) * N];
                        const S* brow = &bvv[(bb * K + k) * N];
                        S acc = S(0);
                        for (std::size_t n = 0; n < N; ++n) acc += g[n] * brow[n];
                        an->tmp[(bb * M + m) * K + k] += acc;
                    }
        }
        if (bn->requires_grad) {
            // db = a^T . g
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t k = 0; k < K; ++k)
                    for (std::size_t m = 0; m < M; ++m) {
                        const S av = avv[(bb * M + m) * K + k];
                        if (av == S(0)) continue;
                        const S* g = &self.tmp[(bb * M + m) * N];
                        S* bg = &bn->tmp[(bb * K + k) * N];
                        for (std::size_t n = 0; n < N; ++n) bg[n] += av * g[n];
                    }
        }
    });
    return out;
}

// batched a [B, M, K] x b [B, N, K] -> [B, M, N]  (i.e. a . b^T)
template <class S>
Tensor<S> bmm_nt(const Tensor<S>& a, const Tensor<S>& b) {
    require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
            "bmm_nt: shape mismatch");
    const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(1);
    Tensor<S> out({B, M, N});
    const auto& avv = a.value();
    const auto& bvv = b.value();
    auto& ov = out.value();
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t n = 0; n < N; ++n) {
                const S* ar = &avv[(bb * M + m) * K];
                const S* br = &bvv[(bb * N + n) * K];
                S acc = S(0);
                for (std::size_t k = 0; k < K; ++k) acc += ar[k] * br[k];
                ov[(bb * M + m) * N + n] = acc;
            }
    auto an = a.node().get();
    auto bn = b.node().get();
    detail::attach<S>(out, {a.node(), b.node()},
                      [an, bn, avv, bvv, B, M, K, N](TensorNode<S>& self) {
        for (std::size_t bb = 0; bb < B; ++bb)
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t n = 0; n < N; ++n) {
                    const S g = self.tmp[(bb * M + m) * N + n];
                    if (g == S(0)) continue;
                    if (an->requires_grad) {
                        const S* br = &bvv[(bb * N + n) * K];
                        S* ag = &an->tmp[(bb * M + m) * K];
                        for (std::size_t k = 0; k < K; ++k) ag[k] += g * br[k];
                    }
                    if (bn->requires_grad) {
                        const S* ar = &avv[(bb * M + m) * K];
                        S* bg = &bn->tmp[(bb * N + n) * K];
                        for (std::size_t k = 0; k < K; ++k) bg[k] += g * ar[k];
                    }
                }
    });
    return out;
}

// ---- reductions & normalizations ---------------------------------------------

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
    double acc = 0.0;
    for (S v : a.value()) acc += double(v);
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc));
    auto an = a.node().get();
    detail::attach<S>(out, {a.node()}, [an](TensorNode<S>& self) {
        for (auto& g : an->tmp) g += self.tmp[0];
    });
    return out;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return scale(sum_all(a), static_cast<S>(1.0 / double(a.numel())));
}

// softmax over the last axis, numerically shifted
template <class S>
Tensor<S> softmax_lastdim(const Tensor<S>& a) {
    const std::size_t D = a.shape().back();
    const std::size_t rows = a.numel() / D;
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* x = &av[r * D];
        S* y = &ov[r * D];
        double mx = -1e300;
        for (std::size_t i = 0; i < D; ++i) mx = std::max(mx, double(x[i]));
        double z = 0.0;
        for (std::size_t i = 0; i < D; ++i) z += std::exp(double(x[i]) - mx);
        for (std::size_t i = 0; i < D; ++i)
            y[i] = static_cast<S>(std::exp(double(x[i]) - mx) / z);
    }
    auto an = a.node().get();
    const auto sv = out.value();
    detail::attach<S>(out, {a.node()}, [an, sv, rows, D](TensorNode<S>& self) {
        for (std::size_t r = 0; r < rows; ++r) {
            const S* s = &sv[r * D];
            const S* g = &self.tmp[r * D];
            double dot = 0.0;
            for (std::size_t i = 0; i < D; ++i) dot += double(g[i]) * double(s[i]);
            S* xg = &an->tmp[r * D];
            for (std::size_t i = 0; i < D; ++i)
                xg[i] += static_cast<S>(double(s[i]) * (double(g[i]) - dot));
        }
    });
    return out;
}

template <class S>
Tensor<S> log_softmax_lastdim(const Tensor<S>& a) {
    const std::size_t D = a.shape().back();
    const std::size_t rows = a.numel() / D;
    Tensor<S> out(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    std::vector<S> soft(av.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const S* x = &av[r * D];
        double mx = -1e300;
        for (std::size_t i = 0; i < D; ++i) mx = std::max(mx, double(x[i]));
        double z = 0.0;
        for (std::size_t i = 0; i < D; ++i) z += std::exp(double(x[i]) - mx);
        const double logz = std::log(z) + mx;
        for (std::size_t i = 0; i < D; ++i) {
            ov[r * D + i] = static_cast<S>(double(x[i]) - logz);
            soft[r * D + i] = static_cast<S>(std::exp(double(x[i]) - logz));
        }
    }
    auto an = a.node().get();
    detail::attach<S>(out, {a.node()}, [an, soft = std::move(soft), rows, D](TensorNode<S>& self) {
        for (std::size_t r = 0; r < rows; ++r) {
            const S* g = &self.tmp[r * D];
            double gsum = 0.0;
            for (std::size_t i = 0; i < D; ++i) gsum += double(g[i]);
            S* xg = &an->tmp[r * D];
            for (std::size_t i = 0; i < D; ++i)
                xg[i] += static_cast<S>(double(g[i]) - gsum * double(soft[r * D + i]));
        }
    });
    return out;
}

// x: [..., D] normalized per row; gamma/beta: [D]
template <class S>
Tensor<S> layer_norm_lastdim(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                             double eps = 1e-5) {
    const std::size_t D = x.shape().back();
    require(gamma.numel() == D && beta.numel() == D, "layer_norm: affine shape mismatch");
    const std::size_t rows = x.numel() / D;
    Tensor<S> out(x.shape());
    const auto& xv = x.value();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    auto& ov = out.value();
    std::vector<S> xhat(xv.size());
    std::vector<S> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* xp = &xv[r * D];
        double mean = 0.0;
        for (std::size_t i = 0; i < D; ++i) mean += double(xp[i]);
        mean /= double(D);
        double var = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
            const double d = double(xp[i]) - mean;
            var += d * d;
        }
        var /= double(D);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[r] = static_cast<S>(istd);
        for (std::size_t i = 0; i < D; ++i) {
            const S xh = static_cast<S>((double(xp[i]) - mean) * istd);
            xhat[r * D + i] = xh;
            ov[r * D + i] = gv[i] * xh + bv[i];
        }
    }
    auto xn = x.node().get();
    auto gn = gamma.node().get();
    auto bn = beta.node().get();
    detail::attach<S>(out, {x.node(), gamma.node(), beta.node()},
                      [xn, gn, bn, gv, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                       D](TensorNode<S>& self) {
        for (std::size_t r = 0; r < rows; ++r) {
            const S* g = &self.tmp[r * D];
            const S* xh = &xhat[r * D];
            if (gn->requires_grad)
                for (std::size_t i = 0; i < D; ++i) gn->tmp[i] += g[i] * xh[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < D; ++i) bn->tmp[i] += g[i];
            if (xn->requires_grad) {
                double m1 = 0.0, m2 = 0.0;  // mean(dy*gamma), mean(dy*gamma*xhat)
                for (std::size_t i = 0; i < D; ++i) {
                    const double dg = double(g[i]) * double(gv[i]);
                    m1 += dg;
                    m2 += dg * double(xh[i]);
                }
                m1 /= double(D);
                m2 /= double(D);
                S* xg = &xn->tmp[r * D];
                for (std::size_t i = 0; i < D; ++i) {
                    const double dg = double(g[i]) * double(gv[i]);
                    xg[i] += static_cast<S>((dg - m1 - double(xh[i]) * m2) * double(inv_std[r]));
                }
            }
        }
    });
    return out;
}

// ---- misc helpers -----------------------------------------------------------

// Per-plane scaling used by the antenna gate: x [B, A, H*W...], alpha [B, A].
template <class S>
Tensor<S> scale_planes(const Tensor<S>& x, const Tensor<S>& alpha) {
    require(x.rank() >= 2 && alpha.rank() == 2 && x.dim(0) == alpha.dim(0) &&
                x.dim(1) == alpha.dim(1),
            "scale_planes: shape mismatch");
    const std::size_t B = x.dim(0), A = x.dim(1);
    const std::size_t P = x.numel() / (B * A);
    Tensor<S> out(x.shape());
    const auto& xv = x.value();
    const auto& av = alpha.value();
    auto& ov = out.value();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < A; ++a) {
            const S k = av[b * A + a];
            const S* xp = &xv[(b * A + a) * P];
            S* op = &ov[(b * A + a) * P];
            for (std::size_t i = 0; i < P; ++i) op[i] = xp[i] * k;
        }
    auto xn = x.node().get();
    auto an = alpha.node().get();
    detail::attach<S>(out, {x.node(), alpha.node()}, [xn, an, xv, av, B, A, P](TensorNode<S>& self) {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t a = 0; a < A; ++a) {
                const S* g = &self.tmp[(b * A + a) * P];
                if (xn->requires_grad) {
                    const S k = av[b * A + a];
                    S* xg = &xn->tmp[(b * A + a) * P];
                    for (std::size_t i = 0; i < P; ++i) xg[i] += g[i] * k;
                }
                if (an->requires_grad) {
                    const S* xp = &xv[(b * A + a) * P];
                    double acc = 0.0;
                    for (std::size_t i = 0; i < P; ++i) acc += double(g[i]) * double(xp[i]);
                    an->tmp[b * A + a] += static_cast<S>(acc);
                }
            }
    });
    return out;
}

// one-hot / soft-target cross entropy on logits [B, C], targets constant
template <class S>
Tensor<S> cross_entropy_soft(const Tensor<S>& logits, const Tensor<S>& targets) {
    detail::check_same_shape(logits, targets, "cross_entropy");
    const std::size_t B = logits.dim(0);
    auto logp = log_softmax_lastdim(logits);
    auto nll = mul(logp, targets);
    return scale(sum_all(nll), static_cast<S>(-1.0 / double(B)));
}

template <class S>
std::vector<std::size_t> argmax_rows(const Tensor<S>& x) {
    const std::size_t D = x.shape().back();
    const std::size_t rows = x.numel() / D;
    std::vector<std::size_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* p = &x.value()[r * D];
        std::size_t best = 0;
        for (std::size_t i = 1; i < D; ++i)
            if (p[i] > p[best]) best = i;
        out[r] = best;
    }
    return out;
}

}  // namespace cforge
