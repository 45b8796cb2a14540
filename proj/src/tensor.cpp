#include "hvox/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hvox {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + "]";
}

Shape strides_of(const Shape& s) {
    Shape st(s.size(), 1);
    for (int d = static_cast<int>(s.size()) - 2; d >= 0; --d)
        st[d] = st[d + 1] * s[d + 1];
    return st;
}

static void check_shape_valid(const Shape& s, const char* op) {
    for (size_t d = 0; d < s.size(); ++d)
        if (s[d] <= 0)
            throw ShapeError(strf("%s: extent %lld on axis %zu must be positive", op,
                                  static_cast<long long>(s[d]), d));
}

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape) : n_(std::make_shared<Node<T>>()) {
    check_shape_valid(shape, "tensor");
    n_->shape = std::move(shape);
    n_->value.assign(static_cast<size_t>(numel(n_->shape)), T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : n_(std::make_shared<Node<T>>()) {
    check_shape_valid(shape, "tensor");
    if (numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError(strf("tensor: shape %s expects %lld values, got %zu",
                              shape_str(shape).c_str(), static_cast<long long>(numel(shape)),
                              data.size()));
    n_->shape = std::move(shape);
    n_->value = std::move(data);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.n_->value.begin(), t.n_->value.end(), v);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, T stddev, T mean) {
    Tensor t(std::move(shape));
    for (auto& v : t.n_->value) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, Rng& rng, T lo, T hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.n_->value) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
T Tensor<T>::item() const {
    if (size() != 1)
        throw ValueError(strf("item: tensor has %lld elements, expected 1",
                              static_cast<long long>(size())));
    return n_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank())
        throw ShapeError(strf("at: %zu indices for rank-%d tensor", idx.size(), rank()));
    Shape st = strides_of(n_->shape);
    int64_t flat = 0;
    int d = 0;
    for (int64_t i : idx) {
        if (i < 0 || i >= n_->shape[d])
            throw ShapeError(strf("at: index %lld out of range on axis %d",
                                  static_cast<long long>(i), d));
        flat += i * st[d];
        ++d;
    }
    return n_->value[static_cast<size_t>(flat)];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return Tensor(n_->shape, n_->value);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(n_->shape, n_->value);
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
    if (n_->grad.empty()) return std::vector<T>(n_->value.size(), T(0));
    return n_->grad;
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : n_->value)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Tape

namespace {
template <typename T>
Tape<T>*& current_tape_slot() {
    static thread_local Tape<T>* t = nullptr;
    return t;
}
thread_local int g_no_grad_depth = 0;
}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_no_grad_depth) { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { g_no_grad_depth = prev_; }
bool NoGradGuard::active() { return g_no_grad_depth > 0; }

template <typename T>
bool recording_active() {
    return current_tape_slot<T>() != nullptr && !NoGradGuard::active();
}

template <typename T>
Tape<T>::Tape() : prev_(current_tape_slot<T>()) {
    current_tape_slot<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
    clear();
    current_tape_slot<T>() = prev_;
}

template <typename T>
Tape<T>* Tape<T>::current() {
    return current_tape_slot<T>();
}

template <typename T>
void Tape<T>::adopt(const std::shared_ptr<Node<T>>& n) {
    if (!n->in_tape) {
        n->in_tape = true;
        nodes_.push_back(n);
    }
}

template <typename T>
void Tape<T>::record(std::initializer_list<std::shared_ptr<Node<T>>> inputs,
                     const std::shared_ptr<Node<T>>& output, std::function<void()> fn) {
    for (const auto& in : inputs) adopt(in);
    adopt(output);
    output->tracked = true;
    output->produced = true;
    records_.push_back(Record{std::move(fn), output});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (records_.empty()) throw ValueError("backward: tape is empty");
    if (loss.size() != 1)
        throw ValueError(strf("backward: loss must be a single-element tensor, got %s",
                              shape_str(loss.shape()).c_str()));
    auto ln = loss.node();
    if (!ln->in_tape || !ln->produced)
        throw ValueError("backward: loss is not an output of this tape");

    for (auto& n : nodes_) n->adjoint.assign(n->value.size(), T(0));
    ln->adjoint[0] = T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->fn();
    for (auto& n : nodes_) {
        if (!n->requires_grad) continue;
        if (n->grad.empty()) n->grad.assign(n->value.size(), T(0));
        for (size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->adjoint[i];
    }
}

template <typename T>
void Tape<T>::clear() {
    records_.clear();
    for (auto& n : nodes_) {
        n->in_tape = false;
        n->tracked = false;
        n->produced = false;
        n->adjoint.clear();
    }
    nodes_.clear();
}

// ---------------------------------------------------------------------------
// Op helpers

namespace {

template <typename T>
bool want_record(std::initializer_list<const Tensor<T>*> ins) {
    if (!recording_active<T>()) return false;
    for (const Tensor<T>* t : ins)
        if (t->tracked()) return true;
    return false;
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() == b.shape()) return;
    if (a.rank() != b.rank())
        throw ShapeError(strf("%s: rank mismatch %s vs %s", op, shape_str(a.shape()).c_str(),
                              shape_str(b.shape()).c_str()));
    for (int d = 0; d < a.rank(); ++d)
        if (a.dim(d) != b.dim(d))
            throw ShapeError(strf("%s: shape mismatch %s vs %s (axis %d)", op,
                                  shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str(), d));
}

// Per-axis output stride for index remapping; 0 on reduced/broadcast axes.
std::vector<int64_t> reduced_axis_map(const Shape& full, const std::vector<int>& axes,
                                      Shape* reduced_shape_out) {
    std::vector<bool> is_reduced(full.size(), false);
    for (int a : axes) {
        if (a < 0 || a >= static_cast<int>(full.size()))
            throw ShapeError(strf("reduce: axis %d out of range for rank %zu", a, full.size()));
        if (is_reduced[a]) throw ValueError(strf("reduce: duplicate axis %d", a));
        is_reduced[a] = true;
    }
    Shape reduced;
    for (size_t d = 0; d < full.size(); ++d)
        if (!is_reduced[d]) reduced.push_back(full[d]);
    if (reduced.empty()) reduced.push_back(1);  // scalar result
    Shape rst = strides_of(reduced);
    std::vector<int64_t> map(full.size(), 0);
    size_t k = 0;
    for (size_t d = 0; d < full.size(); ++d)
        if (!is_reduced[d]) map[d] = (reduced == Shape{1}) ? 0 : rst[k++];
    if (reduced_shape_out) *reduced_shape_out = reduced;
    return map;
}

// Flat index in the reduced tensor for a flat index in the full tensor.
inline int64_t remap_flat(int64_t flat, const Shape& istrides, const std::vector<int64_t>& omap) {
    int64_t o = 0;
    for (size_t d = 0; d < istrides.size(); ++d) {
        int64_t q = flat / istrides[d];
        flat -= q * istrides[d];
        o += q * omap[d];
    }
    return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("add", a, b);
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] += pb[i];
    if (want_record<T>({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool na = a.tracked(), nb = b.tracked();
        Tape<T>::current()->record({an, bn}, on, [an, bn, on, na, nb] {
            const auto& g = on->adjoint;
            if (na)
                for (size_t i = 0; i < g.size(); ++i) an->adjoint[i] += g[i];
            if (nb)
                for (size_t i = 0; i < g.size(); ++i) bn->adjoint[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("sub", a, b);
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] -= pb[i];
    if (want_record<T>({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool na = a.tracked(), nb = b.tracked();
        Tape<T>::current()->record({an, bn}, on, [an, bn, on, na, nb] {
            const auto& g = on->adjoint;
            if (na)
                for (size_t i = 0; i < g.size(); ++i) an->adjoint[i] += g[i];
            if (nb)
                for (size_t i = 0; i < g.size(); ++i) bn->adjoint[i] -= g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("mul", a, b);
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] *= pb[i];
    if (want_record<T>({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool na = a.tracked(), nb = b.tracked();
        Tape<T>::current()->record({an, bn}, on, [an, bn, on, na, nb] {
            const auto& g = on->adjoint;
            if (na)
                for (size_t i = 0; i < g.size(); ++i) an->adjoint[i] += g[i] * bn->value[i];
            if (nb)
                for (size_t i = 0; i < g.size(); ++i) bn->adjoint[i] += g[i] * an->value[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("div", a, b);
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] /= pb[i];
    if (want_record<T>({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool na = a.tracked(), nb = b.tracked();
        Tape<T>::current()->record({an, bn}, on, [an, bn, on, na, nb] {
            const auto& g = on->adjoint;
            for (size_t i = 0; i < g.size(); ++i) {
                T inv = T(1) / bn->value[i];
                if (na) an->adjoint[i] += g[i] * inv;
                if (nb) bn->adjoint[i] -= g[i] * an->value[i] * inv * inv;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] += s;
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on] {
            for (size_t i = 0; i < on->adjoint.size(); ++i) an->adjoint[i] += on->adjoint[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] *= s;
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on, s] {
            for (size_t i = 0; i < on->adjoint.size(); ++i) an->adjoint[i] += s * on->adjoint[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    for (int64_t i = 0; i < out.size(); ++i)
        if (o[i] < T(0)) o[i] *= slope;
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on, slope] {
            for (size_t i = 0; i < on->adjoint.size(); ++i)
                an->adjoint[i] += on->adjoint[i] * (an->value[i] > T(0) ? T(1) : slope);
        });
    }
    return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] = std::tanh(o[i]);
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on] {
            for (size_t i = 0; i < on->adjoint.size(); ++i) {
                T y = on->value[i];
                an->adjoint[i] += on->adjoint[i] * (T(1) - y * y);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] = std::sqrt(o[i]);
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on] {
            for (size_t i = 0; i < on->adjoint.size(); ++i)
                an->adjoint[i] += on->adjoint[i] * (T(0.5) / on->value[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    for (int64_t i = 0; i < out.size(); ++i) {
        T x = o[i];
        o[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
    }
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on] {
            for (size_t i = 0; i < on->adjoint.size(); ++i) {
                T x = an->value[i];
                T sig = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                  : std::exp(x) / (T(1) + std::exp(x));
                an->adjoint[i] += on->adjoint[i] * sig;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
    Tensor<T> out(a.shape(), a.values());
    T* o = out.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] = std::max(o[i], lo);
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on, lo] {
            for (size_t i = 0; i < on->adjoint.size(); ++i)
                if (an->value[i] > lo) an->adjoint[i] += on->adjoint[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_by_scalar_tensor(const Tensor<T>& x, const Tensor<T>& s) {
    if (s.size() != 1)
        throw ShapeError(strf("mul_by_scalar_tensor: scale has shape %s, expected one element",
                              shape_str(s.shape()).c_str()));
    T sv = s.data()[0];
    Tensor<T> out(x.shape(), x.values());
    T* o = out.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] *= sv;
    if (want_record<T>({&x, &s})) {
        auto xn = x.node(), sn = s.node(), on = out.node();
        bool nx = x.tracked(), ns = s.tracked();
        Tape<T>::current()->record({xn, sn}, on, [xn, sn, on, nx, ns, sv] {
            const auto& g = on->adjoint;
            if (nx)
                for (size_t i = 0; i < g.size(); ++i) xn->adjoint[i] += g[i] * sv;
            if (ns) {
                T acc = 0;
                for (size_t i = 0; i < g.size(); ++i) acc += g[i] * xn->value[i];
                sn->adjoint[0] += acc;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& s) {
    if (s.size() != 1)
        throw ShapeError(strf("reciprocal: expected one element, got %s",
                              shape_str(s.shape()).c_str()));
    Tensor<T> out(s.shape(), {T(1) / s.data()[0]});
    if (want_record<T>({&s})) {
        auto sn = s.node(), on = out.node();
        Tape<T>::current()->record({sn}, on, [sn, on] {
            T v = sn->value[0];
            sn->adjoint[0] -= on->adjoint[0] / (v * v);
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structure ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        throw ShapeError(strf("reshape: %s (%lld values) to %s (%lld values)",
                              shape_str(a.shape()).c_str(), static_cast<long long>(a.size()),
                              shape_str(new_shape).c_str(),
                              static_cast<long long>(numel(new_shape))));
    Tensor<T> out(std::move(new_shape), a.values());
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on] {
            for (size_t i = 0; i < on->adjoint.size(); ++i) an->adjoint[i] += on->adjoint[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ValueError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    int rank = static_cast<int>(s0.size());
    if (axis < 0 || axis >= rank)
        throw ShapeError(strf("concat: axis %d out of range for rank %d", axis, rank));
    int64_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank)
            throw ShapeError(strf("concat: rank mismatch %s vs %s", shape_str(s0).c_str(),
                                  shape_str(p.shape()).c_str()));
        for (int d = 0; d < rank; ++d)
            if (d != axis && p.dim(d) != s0[d])
                throw ShapeError(strf("concat: shape mismatch %s vs %s (axis %d)",
                                      shape_str(s0).c_str(), shape_str(p.shape()).c_str(), d));
        axis_total += p.dim(axis);
    }
    Shape oshape = s0;
    oshape[axis] = axis_total;
    Tensor<T> out(oshape);

    int64_t inner = 1;
    for (int d = axis + 1; d < rank; ++d) inner *= s0[d];
    int64_t outer = 1;
    for (int d = 0; d < axis; ++d) outer *= s0[d];

    T* o = out.data();
    int64_t out_row = axis_total * inner;
    int64_t off = 0;
    std::vector<int64_t> part_off(parts.size());
    for (size_t p = 0; p < parts.size(); ++p) {
        part_off[p] = off;
        int64_t block = parts[p].dim(axis) * inner;
        const T* src = parts[p].data();
        for (int64_t r = 0; r < outer; ++r)
            std::memcpy(o + r * out_row + off, src + r * block, sizeof(T) * block);
        off += block;
    }

    bool rec = false;
    for (const auto& p : parts)
        if (want_record<T>({&p})) rec = true;
    if (rec) {
        std::vector<std::shared_ptr<Node<T>>> ins;
        std::vector<int64_t> blocks;
        std::vector<bool> need;
        for (const auto& p : parts) {
            ins.push_back(p.node());
            blocks.push_back(p.dim(axis) * inner);
            need.push_back(p.tracked());
        }
        auto on = out.node();
        auto* tape = Tape<T>::current();
        for (const auto& in : ins) tape->adopt_node(in);
        tape->record({}, on, [ins, on, blocks, need, outer, out_row, part_off] {
            const T* g = on->adjoint.data();
            for (size_t p = 0; p < ins.size(); ++p) {
                if (!need[p]) continue;
                T* dst = ins[p]->adjoint.data();
                for (int64_t r = 0; r < outer; ++r) {
                    const T* gs = g + r * out_row + part_off[p];
                    T* ds = dst + r * blocks[p];
                    for (int64_t i = 0; i < blocks[p]; ++i) ds[i] += gs[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError(strf("matmul: expects rank-2 inputs, got %s and %s",
                              shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
    int64_t M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
    if (K != K2)
        throw ShapeError(strf("matmul: inner extents differ, %s vs %s (axis 1 vs axis 0)",
                              shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
    Tensor<T> out(Shape{M, N});
    const T* pa = a.data();
    const T* pb = b.data();
    T* o = out.data();
    for (int64_t m = 0; m < M; ++m) {
        T* orow = o + m * N;
        for (int64_t k = 0; k < K; ++k) {
            T av = pa[m * K + k];
            const T* brow = pb + k * N;
            for (int64_t n = 0; n < N; ++n) orow[n] += av * brow[n];
        }
    }
    if (want_record<T>({&a, &b})) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool na = a.tracked(), nb = b.tracked();
        Tape<T>::current()->record({an, bn}, on, [an, bn, on, na, nb, M, K, N] {
            const T* g = on->adjoint.data();
            if (na) {
                T* da = an->adjoint.data();
                const T* pb2 = bn->value.data();
                for (int64_t m = 0; m < M; ++m)
                    for (int64_t k = 0; k < K; ++k) {
                        const T* grow = g + m * N;
                        const T* brow = pb2 + k * N;
                        T acc = 0;
                        for (int64_t n = 0; n < N; ++n) acc += grow[n] * brow[n];
                        da[m * K + k] += acc;
                    }
            }
            if (nb) {
                T* db = bn->adjoint.data();
                const T* pa2 = an->value.data();
                for (int64_t m = 0; m < M; ++m) {
                    const T* grow = g + m * N;
                    for (int64_t k = 0; k < K; ++k) {
                        T av = pa2[m * K + k];
                        T* drow = db + k * N;
                        for (int64_t n = 0; n < N; ++n) drow[n] += av * grow[n];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
    if (b.rank() != 1 || b.dim(0) != x.dim(x.rank() - 1))
        throw ShapeError(strf("add_bias: bias %s does not match last axis of %s",
                              shape_str(b.shape()).c_str(), shape_str(x.shape()).c_str()));
    int64_t M = b.dim(0);
    Tensor<T> out(x.shape(), x.values());
    T* o = out.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] += pb[i % M];
    if (want_record<T>({&x, &b})) {
        auto xn = x.node(), bn = b.node(), on = out.node();
        bool nx = x.tracked(), nb = b.tracked();
        Tape<T>::current()->record({xn, bn}, on, [xn, bn, on, nx, nb, M] {
            const auto& g = on->adjoint;
            if (nx)
                for (size_t i = 0; i < g.size(); ++i) xn->adjoint[i] += g[i];
            if (nb)
                for (size_t i = 0; i < g.size(); ++i) bn->adjoint[i % M] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_bias(matmul(x, w), b);
}

template <typename T>
Tensor<T> tile_batch(const Tensor<T>& t, int64_t n) {
    if (n < 1) throw ValueError(strf("tile_batch: count %lld < 1", static_cast<long long>(n)));
    Shape oshape;
    oshape.push_back(n);
    for (int64_t e : t.shape()) oshape.push_back(e);
    Tensor<T> out(oshape);
    int64_t block = t.size();
    T* o = out.data();
    for (int64_t i = 0; i < n; ++i) std::memcpy(o + i * block, t.data(), sizeof(T) * block);
    if (want_record<T>({&t})) {
        auto tn = t.node(), on = out.node();
        Tape<T>::current()->record({tn}, on, [tn, on, n, block] {
            const T* g = on->adjoint.data();
            T* d = tn->adjoint.data();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < block; ++j) d[j] += g[i * block + j];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T acc = 0;
    const T* p = a.data();
    for (int64_t i = 0; i < a.size(); ++i) acc += p[i];
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on] {
            T g = on->adjoint[0];
            for (auto& d : an->adjoint) d += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    T acc = 0;
    const T* p = a.data();
    for (int64_t i = 0; i < a.size(); ++i) acc += p[i];
    T inv = T(1) / static_cast<T>(a.size());
    Tensor<T> out = Tensor<T>::scalar(acc * inv);
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on, inv] {
            T g = on->adjoint[0] * inv;
            for (auto& d : an->adjoint) d += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, const std::vector<int>& axes) {
    Shape rshape;
    std::vector<int64_t> omap = reduced_axis_map(a.shape(), axes, &rshape);
    Shape ist = strides_of(a.shape());
    Tensor<T> out(rshape);
    T* o = out.data();
    const T* p = a.data();
    for (int64_t i = 0; i < a.size(); ++i) o[remap_flat(i, ist, omap)] += p[i];
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on, ist, omap] {
            const T* g = on->adjoint.data();
            T* d = an->adjoint.data();
            int64_t n = static_cast<int64_t>(an->value.size());
            for (int64_t i = 0; i < n; ++i) d[i] += g[remap_flat(i, ist, omap)];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, const std::vector<int>& axes) {
    Shape rshape;
    std::vector<int64_t> omap = reduced_axis_map(a.shape(), axes, &rshape);
    int64_t cnt = a.size() / numel(rshape);
    Shape ist = strides_of(a.shape());
    Tensor<T> out(rshape);
    T* o = out.data();
    const T* p = a.data();
    for (int64_t i = 0; i < a.size(); ++i) o[remap_flat(i, ist, omap)] += p[i];
    T inv = T(1) / static_cast<T>(cnt);
    for (int64_t i = 0; i < out.size(); ++i) o[i] *= inv;
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on, ist, omap, inv] {
            const T* g = on->adjoint.data();
            T* d = an->adjoint.data();
            int64_t n = static_cast<int64_t>(an->value.size());
            for (int64_t i = 0; i < n; ++i) d[i] += g[remap_flat(i, ist, omap)] * inv;
        });
    }
    return out;
}

template <typename T>
Tensor<T> broadcast_axes(const Tensor<T>& s, const Shape& target_shape, const std::vector<int>& axes) {
    Shape rshape;
    std::vector<int64_t> omap = reduced_axis_map(target_shape, axes, &rshape);
    if (rshape != s.shape())
        throw ShapeError(strf("broadcast_axes: source %s does not match target %s minus axes (%s)",
                              shape_str(s.shape()).c_str(), shape_str(target_shape).c_str(),
                              shape_str(rshape).c_str()));
    Shape ist = strides_of(target_shape);
    Tensor<T> out(target_shape);
    T* o = out.data();
    const T* p = s.data();
    for (int64_t i = 0; i < out.size(); ++i) o[i] = p[remap_flat(i, ist, omap)];
    if (want_record<T>({&s})) {
        auto sn = s.node(), on = out.node();
        Tape<T>::current()->record({sn}, on, [sn, on, ist, omap] {
            const T* g = on->adjoint.data();
            T* d = sn->adjoint.data();
            int64_t n = static_cast<int64_t>(on->value.size());
            for (int64_t i = 0; i < n; ++i) d[remap_flat(i, ist, omap)] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> std_dev(const Tensor<T>& a, const std::vector<int>& axes, T eps) {
    Tensor<T> m = reduce_mean(a, axes);
    Tensor<T> mb = broadcast_axes(m, a.shape(), axes);
    Tensor<T> d = sub(a, mb);
    Tensor<T> v = reduce_mean(mul(d, d), axes);
    return sqrt(add_scalar(v, eps));
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& a, int factor, const std::vector<int>& axes) {
    if (factor < 1) throw ValueError(strf("upsample_nearest: factor %d < 1", factor));
    std::vector<bool> up(a.rank(), false);
    for (int ax : axes) {
        if (ax < 0 || ax >= a.rank())
            throw ShapeError(strf("upsample_nearest: axis %d out of range for rank %d", ax, a.rank()));
        up[ax] = true;
    }
    Shape oshape = a.shape();
    for (int d = 0; d < a.rank(); ++d)
        if (up[d]) oshape[d] *= factor;
    if (factor == 1) return reshape(a, oshape);

    Shape ist = strides_of(a.shape());
    Shape ost = strides_of(oshape);
    Tensor<T> out(oshape);
    T* o = out.data();
    const T* p = a.data();
    int rank = a.rank();
    int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) {
        int64_t rem = i, src = 0;
        for (int d = 0; d < rank; ++d) {
            int64_t q = rem / ost[d];
            rem -= q * ost[d];
            src += (up[d] ? q / factor : q) * ist[d];
        }
        o[i] = p[src];
    }
    if (want_record<T>({&a})) {
        auto an = a.node(), on = out.node();
        Tape<T>::current()->record({an}, on, [an, on, ist, ost, up, factor, rank] {
            const T* g = on->adjoint.data();
            T* d = an->adjoint.data();
            int64_t total = static_cast<int64_t>(on->value.size());
            for (int64_t i = 0; i < total; ++i) {
                int64_t rem = i, src = 0;
                for (int dd = 0; dd < rank; ++dd) {
                    int64_t q = rem / ost[dd];
                    rem -= q * ost[dd];
                    src += (up[dd] ? q / factor : q) * ist[dd];
                }
                d[src] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sn_sigma(const Tensor<T>& w, const std::vector<T>& u, const std::vector<T>& v) {
    int64_t rows = w.dim(w.rank() - 1);
    int64_t cols = w.size() / rows;
    if (static_cast<int64_t>(u.size()) != rows || static_cast<int64_t>(v.size()) != cols)
        throw ShapeError(strf("sn_sigma: u (%zu) and v (%zu) do not match weight %s as (%lld x %lld)",
                              u.size(), v.size(), shape_str(w.shape()).c_str(),
                              static_cast<long long>(cols), static_cast<long long>(rows)));
    const T* pw = w.data();
    T acc = 0;
    for (int64_t j = 0; j < cols; ++j) {
        const T* row = pw + j * rows;
        T dot = 0;
        for (int64_t r = 0; r < rows; ++r) dot += u[static_cast<size_t>(r)] * row[r];
        acc += v[static_cast<size_t>(j)] * dot;
    }
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (want_record<T>({&w})) {
        auto wn = w.node(), on = out.node();
        Tape<T>::current()->record({wn}, on, [wn, on, u, v, rows, cols] {
            T g = on->adjoint[0];
            T* d = wn->adjoint.data();
            for (int64_t j = 0; j < cols; ++j) {
                T gv = g * v[static_cast<size_t>(j)];
                T* drow = d + j * rows;
                for (int64_t r = 0; r < rows; ++r) drow[r] += gv * u[static_cast<size_t>(r)];
            }
        });
    }
    return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
    auto* tape = Tape<T>::current();
    if (!tape) throw ValueError("backward: no active tape");
    tape->backward(loss);
}

// ---------------------------------------------------------------------------
// Gradient checking

template <typename T>
GradCheckResult<T> grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                              const Tensor<T>& x, T h, T retry_tol, T retry_h) {
    Tensor<T> xl(x.shape(), x.values());
    xl.set_requires_grad(true);
    std::vector<T> analytic;
    {
        Tape<T> tape;
        Tensor<T> y = f(xl);
        if (y.size() != 1)
            throw ValueError(strf("grad_check: f returned shape %s, expected one element",
                                  shape_str(y.shape()).c_str()));
        if (!std::isfinite(static_cast<double>(y.item()))) {
            GradCheckResult<T> res;
            res.finite = false;
            res.note = "non-finite value at base point";
            return res;
        }
        tape.backward(y);
        analytic = xl.grad();
    }
    GradCheckResult<T> res;
    auto numeric_at = [&](int64_t i, T step, bool* ok) {
        T orig = xl.data()[i];
        xl.data()[i] = orig + step;
        T yp = f(xl).item();
        xl.data()[i] = orig - step;
        T ym = f(xl).item();
        xl.data()[i] = orig;
        *ok = std::isfinite(static_cast<double>(yp)) && std::isfinite(static_cast<double>(ym));
        return (yp - ym) / (2 * step);
    };
    for (int64_t i = 0; i < xl.size(); ++i) {
        bool ok = true;
        T numeric = numeric_at(i, h, &ok);
        if (!ok) {
            res.finite = false;
            res.worst_index = i;
            res.note = strf("non-finite value while perturbing element %lld",
                            static_cast<long long>(i));
            return res;
        }
        T a = analytic[static_cast<size_t>(i)];
        T rel = std::abs(a - numeric) / std::max(T(1), std::abs(a) + std::abs(numeric));
        if (retry_tol > 0 && rel > retry_tol && retry_h > 0) {
            bool shrunk = false;
            for (T step : {retry_h, retry_h / 100}) {
                if (rel <= retry_tol) break;
                T numeric2 = numeric_at(i, step, &ok);
                if (!ok) continue;
                T rel2 = std::abs(a - numeric2) /
                         std::max(T(1), std::abs(a) + std::abs(numeric2));
                if (rel2 < rel) {
                    rel = rel2;
                    shrunk = true;
                }
            }
            if (shrunk) ++res.retried;
        }
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_index = i;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Instantiations

#define HVOX_INSTANTIATE_CORE(T)                                                              \
    template class Tensor<T>;                                                                 \
    template class Tape<T>;                                                                   \
    template bool recording_active<T>();                                                      \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                    \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                    \
    template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                    \
    template Tensor<T> tanh<T>(const Tensor<T>&);                                             \
    template Tensor<T> sqrt<T>(const Tensor<T>&);                                             \
    template Tensor<T> softplus<T>(const Tensor<T>&);                                         \
    template Tensor<T> clamp_min<T>(const Tensor<T>&, T);                                     \
    template Tensor<T> mul_by_scalar_tensor<T>(const Tensor<T>&, const Tensor<T>&);           \
    template Tensor<T> reciprocal<T>(const Tensor<T>&);                                       \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                   \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int);                         \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
    template Tensor<T> tile_batch<T>(const Tensor<T>&, int64_t);                              \
    template Tensor<T> sum_all<T>(const Tensor<T>&);                                          \
    template Tensor<T> mean_all<T>(const Tensor<T>&);                                         \
    template Tensor<T> reduce_sum<T>(const Tensor<T>&, const std::vector<int>&);              \
    template Tensor<T> reduce_mean<T>(const Tensor<T>&, const std::vector<int>&);             \
    template Tensor<T> broadcast_axes<T>(const Tensor<T>&, const Shape&, const std::vector<int>&); \
    template Tensor<T> std_dev<T>(const Tensor<T>&, const std::vector<int>&, T);              \
    template Tensor<T> upsample_nearest<T>(const Tensor<T>&, int, const std::vector<int>&);   \
    template Tensor<T> sn_sigma<T>(const Tensor<T>&, const std::vector<T>&, const std::vector<T>&); \
    template void backward<T>(const Tensor<T>&);                                              \
    template GradCheckResult<T> grad_check<T>(const std::function<Tensor<T>(const Tensor<T>&)>&, \
                                              const Tensor<T>&, T, T, T);

HVOX_INSTANTIATE_CORE(float)
HVOX_INSTANTIATE_CORE(double)

}  // namespace hvox
