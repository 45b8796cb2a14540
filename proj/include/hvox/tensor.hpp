#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "hvox/common.hpp"

namespace hvox {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);
Shape strides_of(const Shape& s);  // row-major element strides

// ---------------------------------------------------------------------------
// Dense n-dimensional array with an optional reverse-mode tape.
//
// A Tensor is a shared handle to a node holding the value buffer, the leaf
// gradient accumulator and tape bookkeeping. Ops executed while a Tape is
// active record adjoint closures; Tape::backward replays them in reverse and
// accumulates d(loss)/d(leaf) into every requires_grad node it touched.
// Gradients accumulate across backward calls until zero_grad().
//
// Values are immutable after creation with two sanctioned exceptions:
// optimizer updates of parameter buffers (between tapes) and test harness
// pokes via data().

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;     // leaf accumulator, allocated on first use
    std::vector<T> adjoint;  // scratch during one backward pass
    bool requires_grad = false;
    bool tracked = false;   // produced from tracked inputs under the live tape
    bool produced = false;  // is the output of a tape record
    bool in_tape = false;   // registered with the live tape
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T v);
    static Tensor scalar(T v) { return Tensor({1}, {v}); }
    static Tensor randn(Shape shape, Rng& rng, T stddev = 1, T mean = 0);
    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int64_t dim(int axis) const { return n_->shape[static_cast<size_t>(axis)]; }
    int64_t size() const { return static_cast<int64_t>(n_->value.size()); }

    T* data() { return n_->value.data(); }
    const T* data() const { return n_->value.data(); }
    std::vector<T>& values() { return n_->value; }
    const std::vector<T>& values() const { return n_->value; }

    /// Value of a single-element tensor.
    T item() const;
    /// Multi-index element access (tests and small-scale code).
    T at(std::initializer_list<int64_t> idx) const;

    Tensor clone() const;   // deep copy, untracked, keeps requires_grad=false
    Tensor detach() const;  // value copy cut from the graph

    Tensor& set_requires_grad(bool b = true) {
        n_->requires_grad = b;
        return *this;
    }
    bool requires_grad() const { return n_->requires_grad; }
    bool tracked() const { return n_->tracked || n_->requires_grad; }

    bool has_grad() const { return !n_->grad.empty(); }
    /// Leaf gradient; zeros if backward has not reached this tensor.
    std::vector<T> grad() const;
    void zero_grad() { n_->grad.clear(); }

    bool all_finite() const;

    std::shared_ptr<Node<T>> node() const { return n_; }

private:
    std::shared_ptr<Node<T>> n_;
};

// ---------------------------------------------------------------------------
// Tape: ordered op records, replayed once in reverse by backward().
//
// Constructing a Tape makes it current for the thread (scoped, re-entrant);
// destruction restores the previous one and unlinks registered nodes.

template <typename T>
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();

    /// Seeds d(loss)=1 and accumulates gradients into requires_grad nodes.
    /// loss must be a single-element tensor produced under this tape.
    void backward(const Tensor<T>& loss);

    void clear();
    size_t size() const { return records_.size(); }

    /// Registers a record. Called by op implementations.
    void record(std::initializer_list<std::shared_ptr<Node<T>>> inputs,
                const std::shared_ptr<Node<T>>& output, std::function<void()> fn);

    /// Registers a node whose adjoint a record will touch (variadic inputs).
    void adopt_node(const std::shared_ptr<Node<T>>& n) { adopt(n); }

private:
    void adopt(const std::shared_ptr<Node<T>>& n);
    struct Record {
        std::function<void()> fn;
        std::shared_ptr<Node<T>> out;
    };
    std::vector<Record> records_;
    std::vector<std::shared_ptr<Node<T>>> nodes_;
    Tape* prev_ = nullptr;
};

/// Suppresses tape recording while alive (power iterations, previews, ...).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    static bool active();

private:
    int prev_;
};

/// True when ops should record: a tape is current and grads are not paused.
template <typename T>
bool recording_active();

// ---------------------------------------------------------------------------
// Op set. All ops validate shapes and throw ShapeError naming the offending
// axes. Binary ops broadcast only between identical shapes; scalar variants
// cover tensor-scalar cases.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
/// Spec-facing alias of mul_scalar.
template <typename T> Tensor<T> scalar_mul(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <typename T> Tensor<T> neg(const Tensor<T>& a) { return mul_scalar(a, T(-1)); }

template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
/// log(1 + exp(x)) in overflow-safe form; derivative is the logistic.
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
template <typename T> Tensor<T> clamp_min(const Tensor<T>& a, T lo);

/// x * s where s is a single-element tensor; differentiable in both.
template <typename T> Tensor<T> mul_by_scalar_tensor(const Tensor<T>& x, const Tensor<T>& s);
/// 1/s for a single-element tensor.
template <typename T> Tensor<T> reciprocal(const Tensor<T>& s);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape new_shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., M] + b[M], broadcast over leading axes.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b);
/// matmul(x, w) + bias. x [N,K], w [K,M], b [M].
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
/// Replicates t along a new leading batch axis of extent n.
template <typename T> Tensor<T> tile_batch(const Tensor<T>& t, int64_t n);

template <typename T> Tensor<T> sum_all(const Tensor<T>& a);
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);
/// Mean over the given axes; reduced axes are removed from the shape.
template <typename T> Tensor<T> reduce_mean(const Tensor<T>& a, const std::vector<int>& axes);
template <typename T> Tensor<T> reduce_sum(const Tensor<T>& a, const std::vector<int>& axes);
/// Inverse of reduce_*: replicate s along `axes` to reach target_shape.
template <typename T>
Tensor<T> broadcast_axes(const Tensor<T>& s, const Shape& target_shape, const std::vector<int>& axes);

template <typename T> Tensor<T> mean(const Tensor<T>& a, const std::vector<int>& axes) {
    return reduce_mean(a, axes);
}
/// Epsilon-stabilized population standard deviation over the given axes.
template <typename T> Tensor<T> std_dev(const Tensor<T>& a, const std::vector<int>& axes, T eps);

/// Nearest-neighbor upsampling: each cell replicated factor x along `axes`.
template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& a, int factor, const std::vector<int>& axes);

/// Cross-correlation. input [N,X,Y,C_in], weight [k,k,C_in,C_out], bias [C_out]
/// (empty tensor = no bias). k odd; output extent floor((X+2p-k)/s)+1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad);
/// As conv2d with one more spatial axis. input [N,X,Y,Z,C_in], weight [k,k,k,C_in,C_out].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad);

/// sigma = u^T W v over weight reshaped to (rows=C_out=last axis, cols=rest).
/// u, v are constants for differentiation; returns a single-element tensor.
template <typename T>
Tensor<T> sn_sigma(const Tensor<T>& w, const std::vector<T>& u, const std::vector<T>& v);

// operators
template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, T s) { return add_scalar(a, -s); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator*(T s, const Tensor<T>& a) { return mul_scalar(a, s); }

/// Runs backward on the current tape.
template <typename T> void backward(const Tensor<T>& loss);

// ---------------------------------------------------------------------------
// Gradient checking (64-bit mode)

template <typename T>
struct GradCheckResult {
    T max_rel_err = 0;
    int64_t worst_index = -1;
    int64_t retried = 0;     // elements re-probed at the smaller step
    bool finite = true;      // false: a non-finite intermediate was hit
    std::string note;
};

/// Central finite differences of a scalar-valued f against the tape gradient.
/// Relative error per element: |a - n| / max(1, |a| + |n|).
///
/// When retry_tol > 0, elements whose error exceeds it are re-probed at
/// retry_h. A window of width h around a piecewise-linear kink (leaky relu)
/// averages the two sides instead of estimating the derivative; shrinking
/// the window restores the estimate, while a wrong adjoint stays wrong at
/// every step size.
template <typename T>
GradCheckResult<T> grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                              const Tensor<T>& x, T h, T retry_tol = 0, T retry_h = 0);

}  // namespace hvox
