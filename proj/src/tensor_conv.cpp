#include <cstring>

#include "hvox/tensor.hpp"

namespace hvox {

namespace {

void check_conv_args(const char* op, int k, int stride, int pad, int64_t cin_w, int64_t cin_x) {
    if (k % 2 == 0) throw ValueError(strf("%s: kernel extent %d must be odd", op, k));
    if (stride < 1) throw ValueError(strf("%s: stride %d < 1", op, stride));
    if (pad < 0) throw ValueError(strf("%s: pad %d < 0", op, pad));
    if (cin_w != cin_x)
        throw ShapeError(strf("%s: weight expects %lld input channels, input has %lld (last axis)",
                              op, static_cast<long long>(cin_w), static_cast<long long>(cin_x)));
}

int64_t out_extent(const char* op, int64_t x, int k, int stride, int pad) {
    int64_t o = (x + 2 * pad - k) / stride + 1;
    if (x + 2 * pad < k || o <= 0)
        throw ShapeError(strf("%s: spatial extent %lld too small for kernel %d with pad %d", op,
                              static_cast<long long>(x), k, pad));
    return o;
}

template <typename T>
void check_bias(const char* op, const Tensor<T>& bias, int64_t co) {
    if (!bias.defined()) return;
    if (bias.rank() != 1 || bias.dim(0) != co)
        throw ShapeError(strf("%s: bias %s does not match %lld output channels", op,
                              shape_str(bias.shape()).c_str(), static_cast<long long>(co)));
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d: input [N,X,Y,Ci], weight [k,k,Ci,Co], bias [Co]

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad) {
    if (input.rank() != 4)
        throw ShapeError(strf("conv2d: input %s, expected [N,X,Y,C]", shape_str(input.shape()).c_str()));
    if (weight.rank() != 4 || weight.dim(0) != weight.dim(1))
        throw ShapeError(strf("conv2d: weight %s, expected [k,k,Cin,Cout]",
                              shape_str(weight.shape()).c_str()));
    const int64_t N = input.dim(0), X = input.dim(1), Y = input.dim(2), Ci = input.dim(3);
    const int k = static_cast<int>(weight.dim(0));
    const int64_t Co = weight.dim(3);
    check_conv_args("conv2d", k, stride, pad, weight.dim(2), Ci);
    check_bias("conv2d", bias, Co);
    const int64_t Xo = out_extent("conv2d", X, k, stride, pad);
    const int64_t Yo = out_extent("conv2d", Y, k, stride, pad);

    Tensor<T> out(Shape{N, Xo, Yo, Co});
    const T* pin = input.data();
    const T* pw = weight.data();
    const T* pb = bias.defined() ? bias.data() : nullptr;
    T* pout = out.data();

    parallel_for(N, [&](int64_t n) {
        for (int64_t xo = 0; xo < Xo; ++xo)
            for (int64_t yo = 0; yo < Yo; ++yo) {
                T* orow = pout + ((n * Xo + xo) * Yo + yo) * Co;
                if (pb) std::memcpy(orow, pb, sizeof(T) * Co);
                for (int kx = 0; kx < k; ++kx) {
                    int64_t xi = xo * stride + kx - pad;
                    if (xi < 0 || xi >= X) continue;
                    for (int ky = 0; ky < k; ++ky) {
                        int64_t yi = yo * stride + ky - pad;
                        if (yi < 0 || yi >= Y) continue;
                        const T* irow = pin + ((n * X + xi) * Y + yi) * Ci;
                        const T* wtap = pw + (kx * k + ky) * Ci * Co;
                        for (int64_t ci = 0; ci < Ci; ++ci) {
                            T a = irow[ci];
                            const T* wrow = wtap + ci * Co;
                            for (int64_t co = 0; co < Co; ++co) orow[co] += a * wrow[co];
                        }
                    }
                }
            }
    });

    if (recording_active<T>() &&
        (input.tracked() || weight.tracked() || (bias.defined() && bias.tracked()))) {
        auto in_n = input.node(), w_n = weight.node(), o_n = out.node();
        auto b_n = bias.defined() ? bias.node() : nullptr;
        bool need_in = input.tracked(), need_w = weight.tracked();
        bool need_b = bias.defined() && bias.tracked();
        auto* tape = Tape<T>::current();
        tape->adopt_node(in_n);
        tape->adopt_node(w_n);
        if (b_n) tape->adopt_node(b_n);
        tape->record({}, o_n, [=] {
            const T* g = o_n->adjoint.data();
            const T* pin2 = in_n->value.data();
            const T* pw2 = w_n->value.data();
            const int64_t wsize = static_cast<int64_t>(w_n->value.size());
            // Per-item partials reduced in item order: results do not depend
            // on the worker count.
            std::vector<T> dw_part(need_w ? N * wsize : 0, T(0));
            std::vector<T> db_part(need_b ? N * Co : 0, T(0));
            parallel_for(N, [&](int64_t n) {
                T* dwp = need_w ? dw_part.data() + n * wsize : nullptr;
                T* dbp = need_b ? db_part.data() + n * Co : nullptr;
                T* din = need_in ? in_n->adjoint.data() : nullptr;
                for (int64_t xo = 0; xo < Xo; ++xo)
                    for (int64_t yo = 0; yo < Yo; ++yo) {
                        const T* grow = g + ((n * Xo + xo) * Yo + yo) * Co;
                        if (dbp)
                            for (int64_t co = 0; co < Co; ++co) dbp[co] += grow[co];
                        for (int kx = 0; kx < k; ++kx) {
                            int64_t xi = xo * stride + kx - pad;
                            if (xi < 0 || xi >= X) continue;
                            for (int ky = 0; ky < k; ++ky) {
                                int64_t yi = yo * stride + ky - pad;
                                if (yi < 0 || yi >= Y) continue;
                                const int64_t ibase = ((n * X + xi) * Y + yi) * Ci;
                                const int64_t tap = (kx * k + ky) * Ci * Co;
                                for (int64_t ci = 0; ci < Ci; ++ci) {
                                    const T* wrow = pw2 + tap + ci * Co;
                                    if (din) {
                                        T acc = 0;
                                        for (int64_t co = 0; co < Co; ++co) acc += wrow[co] * grow[co];
                                        din[ibase + ci] += acc;
                                    }
                                    if (dwp) {
                                        T a = pin2[ibase + ci];
                                        T* dwrow = dwp + tap + ci * Co;
                                        for (int64_t co = 0; co < Co; ++co) dwrow[co] += a * grow[co];
                                    }
                                }
                            }
                        }
                    }
            });
            if (need_w) {
                T* dw = w_n->adjoint.data();
                for (int64_t n = 0; n < N; ++n) {
                    const T* src = dw_part.data() + n * wsize;
                    for (int64_t i = 0; i < wsize; ++i) dw[i] += src[i];
                }
            }
            if (need_b) {
                T* db = b_n->adjoint.data();
                for (int64_t n = 0; n < N; ++n) {
                    const T* src = db_part.data() + n * Co;
                    for (int64_t co = 0; co < Co; ++co) db[co] += src[co];
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv3d: input [N,X,Y,Z,Ci], weight [k,k,k,Ci,Co], bias [Co]

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad) {
    if (input.rank() != 5)
        throw ShapeError(strf("conv3d: input %s, expected [N,X,Y,Z,C]", shape_str(input.shape()).c_str()));
    if (weight.rank() != 5 || weight.dim(0) != weight.dim(1) || weight.dim(0) != weight.dim(2))
        throw ShapeError(strf("conv3d: weight %s, expected [k,k,k,Cin,Cout]",
                              shape_str(weight.shape()).c_str()));
    const int64_t N = input.dim(0), X = input.dim(1), Y = input.dim(2), Z = input.dim(3),
                  Ci = input.dim(4);
    const int k = static_cast<int>(weight.dim(0));
    const int64_t Co = weight.dim(4);
    check_conv_args("conv3d", k, stride, pad, weight.dim(3), Ci);
    check_bias("conv3d", bias, Co);
    const int64_t Xo = out_extent("conv3d", X, k, stride, pad);
    const int64_t Yo = out_extent("conv3d", Y, k, stride, pad);
    const int64_t Zo = out_extent("conv3d", Z, k, stride, pad);

    Tensor<T> out(Shape{N, Xo, Yo, Zo, Co});
    const T* pin = input.data();
    const T* pw = weight.data();
    const T* pb = bias.defined() ? bias.data() : nullptr;
    T* pout = out.data();

    parallel_for(N, [&](int64_t n) {
        for (int64_t xo = 0; xo < Xo; ++xo)
            for (int64_t yo = 0; yo < Yo; ++yo)
                for (int64_t zo = 0; zo < Zo; ++zo) {
                    T* orow = pout + (((n * Xo + xo) * Yo + yo) * Zo + zo) * Co;
                    if (pb) std::memcpy(orow, pb, sizeof(T) * Co);
                    for (int kx = 0; kx < k; ++kx) {
                        int64_t xi = xo * stride + kx - pad;
                        if (xi < 0 || xi >= X) continue;
                        for (int ky = 0; ky < k; ++ky) {
                            int64_t yi = yo * stride + ky - pad;
                            if (yi < 0 || yi >= Y) continue;
                            for (int kz = 0; kz < k; ++kz) {
                                int64_t zi = zo * stride + kz - pad;
                                if (zi < 0 || zi >= Z) continue;
                                const T* irow = pin + (((n * X + xi) * Y + yi) * Z + zi) * Ci;
                                const T* wtap = pw + ((kx * k + ky) * k + kz) * Ci * Co;
                                for (int64_t ci = 0; ci < Ci; ++ci) {
                                    T a = irow[ci];
                                    const T* wrow = wtap + ci * Co;
                                    for (int64_t co = 0; co < Co; ++co) orow[co] += a * wrow[co];
                                }
                            }
                        }
                    }
                }
    });

    if (recording_active<T>() &&
        (input.tracked() || weight.tracked() || (bias.defined() && bias.tracked()))) {
        auto in_n = input.node(), w_n = weight.node(), o_n = out.node();
        auto b_n = bias.defined() ? bias.node() : nullptr;
        bool need_in = input.tracked(), need_w = weight.tracked();
        bool need_b = bias.defined() && bias.tracked();
        auto* tape = Tape<T>::current();
        tape->adopt_node(in_n);
        tape->adopt_node(w_n);
        if (b_n) tape->adopt_node(b_n);
        tape->record({}, o_n, [=] {
            const T* g = o_n->adjoint.data();
            const T* pin2 = in_n->value.data();
            const T* pw2 = w_n->value.data();
            const int64_t wsize = static_cast<int64_t>(w_n->value.size());
            std::vector<T> dw_part(need_w ? N * wsize : 0, T(0));
            std::vector<T> db_part(need_b ? N * Co : 0, T(0));
            parallel_for(N, [&](int64_t n) {
                T* dwp = need_w ? dw_part.data() + n * wsize : nullptr;
                T* dbp = need_b ? db_part.data() + n * Co : nullptr;
                T* din = need_in ? in_n->adjoint.data() : nullptr;
                for (int64_t xo = 0; xo < Xo; ++xo)
                    for (int64_t yo = 0; yo < Yo; ++yo)
                        for (int64_t zo = 0; zo < Zo; ++zo) {
                            const T* grow = g + (((n * Xo + xo) * Yo + yo) * Zo + zo) * Co;
                            if (dbp)
                                for (int64_t co = 0; co < Co; ++co) dbp[co] += grow[co];
                            for (int kx = 0; kx < k; ++kx) {
                                int64_t xi = xo * stride + kx - pad;
                                if (xi < 0 || xi >= X) continue;
                                for (int ky = 0; ky < k; ++ky) {
                                    int64_t yi = yo * stride + ky - pad;
                                    if (yi < 0 || yi >= Y) continue;
                                    for (int kz = 0; kz < k; ++kz) {
                                        int64_t zi = zo * stride + kz - pad;
                                        if (zi < 0 || zi >= Z) continue;
                                        const int64_t ibase = (((n * X + xi) * Y + yi) * Z + zi) * Ci;
                                        const int64_t tap = ((kx * k + ky) * k + kz) * Ci * Co;
                                        for (int64_t ci = 0; ci < Ci; ++ci) {
                                            const T* wrow = pw2 + tap + ci * Co;
                                            if (din) {
                                                T acc = 0;
                                                for (int64_t co = 0; co < Co; ++co)
                                                    acc += wrow[co] * grow[co];
                                                din[ibase + ci] += acc;
                                            }
                                            if (dwp) {
                                                T a = pin2[ibase + ci];
                                                T* dwrow = dwp + tap + ci * Co;
                                                for (int64_t co = 0; co < Co; ++co)
                                                    dwrow[co] += a * grow[co];
                                            }
                                        }
                                    }
                                }
                            }
                        }
            });
            if (need_w) {
                T* dw = w_n->adjoint.data();
                for (int64_t n = 0; n < N; ++n) {
                    const T* src = dw_part.data() + n * wsize;
                    for (int64_t i = 0; i < wsize; ++i) dw[i] += src[i];
                }
            }
            if (need_b) {
                T* db = b_n->adjoint.data();
                for (int64_t n = 0; n < N; ++n) {
                    const T* src = db_part.data() + n * Co;
                    for (int64_t co = 0; co < Co; ++co) db[co] += src[co];
                }
            }
        });
    }
    return out;
}

template Tensor<float> conv2d<float>(const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, int, int);
template Tensor<double> conv2d<double>(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, int, int);
template Tensor<float> conv3d<float>(const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, int, int);
template Tensor<double> conv3d<double>(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, int, int);

}  // namespace hvox
