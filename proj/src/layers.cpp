#include "hvox/layers.hpp"

#include <cmath>

namespace hvox {

namespace {

template <typename T>
std::vector<int> spatial_axes(const Tensor<T>& x, const char* op) {
    if (x.rank() < 3)
        throw ShapeError(strf("%s: input %s, expected [N,...spatial...,C]", op,
                              shape_str(x.shape()).c_str()));
    std::vector<int> axes;
    int64_t spatial = 1;
    for (int d = 1; d < x.rank() - 1; ++d) {
        axes.push_back(d);
        spatial *= x.dim(d);
    }
    if (spatial < 2)
        throw ShapeError(strf("%s: needs >= 2 spatial elements per channel, got %lld", op,
                              static_cast<long long>(spatial)));
    return axes;
}

template <typename T>
void check_style_width(const char* op, const Tensor<T>& x, const Tensor<T>& s) {
    if (s.rank() != 2 || s.dim(0) != x.dim(0) || s.dim(1) != x.dim(x.rank() - 1))
        throw ShapeError(strf("%s: style %s does not match input %s ([N,C] expected)", op,
                              shape_str(s.shape()).c_str(), shape_str(x.shape()).c_str()));
}

}  // namespace

template <typename T>
InstanceStatsResult<T> instance_stats(const Tensor<T>& x, T eps) {
    std::vector<int> axes = spatial_axes(x, "instance_stats");
    Tensor<T> mu = reduce_mean(x, axes);
    Tensor<T> diff = sub(x, broadcast_axes(mu, x.shape(), axes));
    Tensor<T> var = reduce_mean(mul(diff, diff), axes);
    Tensor<T> sigma = sqrt(add_scalar(var, eps));
    return {mu, sigma};
}

template <typename T>
Tensor<T> adain(const Tensor<T>& x, const StyleParams<T>& style, T eps) {
    std::vector<int> axes = spatial_axes(x, "adain");
    check_style_width("adain", x, style.gamma);
    check_style_width("adain", x, style.beta);
    Tensor<T> mu = reduce_mean(x, axes);
    Tensor<T> centered = sub(x, broadcast_axes(mu, x.shape(), axes));
    Tensor<T> var = reduce_mean(mul(centered, centered), axes);
    Tensor<T> sigma = sqrt(add_scalar(var, eps));
    Tensor<T> normed = div(centered, broadcast_axes(sigma, x.shape(), axes));
    Tensor<T> scaled = mul(normed, broadcast_axes(style.gamma, x.shape(), axes));
    return add(scaled, broadcast_axes(style.beta, x.shape(), axes));
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps) {
    std::vector<int> axes = spatial_axes(x, "instance_norm");
    Tensor<T> mu = reduce_mean(x, axes);
    Tensor<T> centered = sub(x, broadcast_axes(mu, x.shape(), axes));
    Tensor<T> var = reduce_mean(mul(centered, centered), axes);
    Tensor<T> sigma = sqrt(add_scalar(var, eps));
    return div(centered, broadcast_axes(sigma, x.shape(), axes));
}

template <typename T>
SiteMlp<T> make_site_mlp(int64_t latent_dim, int64_t hidden, int64_t channels, Rng& rng,
                         T init_std) {
    SiteMlp<T> s;
    s.channels = channels;
    s.w0 = Tensor<T>::randn({latent_dim, hidden}, rng, init_std);
    s.b0 = Tensor<T>::zeros({hidden});
    s.wg = Tensor<T>::randn({hidden, channels}, rng, init_std);
    s.bg = Tensor<T>::full({channels}, T(1));
    s.wb = Tensor<T>::randn({hidden, channels}, rng, init_std);
    s.bb = Tensor<T>::zeros({channels});
    return s;
}

template <typename T>
StyleParams<T> map_style(const Tensor<T>& z, const SiteMlp<T>& site) {
    if (z.rank() != 2 || z.dim(1) != site.w0.dim(0))
        throw ShapeError(strf("map_style: z %s does not match mapping input width %lld",
                              shape_str(z.shape()).c_str(),
                              static_cast<long long>(site.w0.dim(0))));
    Tensor<T> h = leaky_relu(linear(z, site.w0, site.b0), T(kLeakySlope));
    return {linear(h, site.wg, site.bg), linear(h, site.wb, site.bb)};
}

template <typename T>
StyleParams<T> map_style(const Tensor<T>& z, const MappingNetwork<T>& net, size_t site) {
    if (site >= net.sites.size())
        throw ValueError(strf("map_style: unknown site id %zu (network has %zu sites)", site,
                              net.sites.size()));
    return map_style(z, net.sites[site]);
}

// ---------------------------------------------------------------------------
// Spectral normalization

template <typename T>
void SpectralNormState<T>::init(int64_t rows, Rng& rng) {
    u = Tensor<T>::randn({rows}, rng, T(1));
    T norm = 0;
    for (int64_t i = 0; i < rows; ++i) norm += u.data()[i] * u.data()[i];
    norm = std::max(std::sqrt(norm), T(1e-12));
    for (int64_t i = 0; i < rows; ++i) u.data()[i] /= norm;
}

namespace {

// v = normalize(W^T u) for W read as (rows = last axis, cols = rest).
template <typename T>
std::vector<T> sn_right_vector(const Tensor<T>& w, const std::vector<T>& u) {
    const int64_t rows = w.dim(w.rank() - 1);
    const int64_t cols = w.size() / rows;
    const T* pw = w.data();
    std::vector<T> v(static_cast<size_t>(cols));
    T norm = 0;
    for (int64_t j = 0; j < cols; ++j) {
        const T* row = pw + j * rows;
        T acc = 0;
        for (int64_t r = 0; r < rows; ++r) acc += row[r] * u[static_cast<size_t>(r)];
        v[static_cast<size_t>(j)] = acc;
        norm += acc * acc;
    }
    norm = std::max(std::sqrt(norm), T(1e-12));
    for (auto& x : v) x /= norm;
    return v;
}

template <typename T>
std::vector<T> sn_left_vector(const Tensor<T>& w, const std::vector<T>& v) {
    const int64_t rows = w.dim(w.rank() - 1);
    const int64_t cols = w.size() / rows;
    const T* pw = w.data();
    std::vector<T> u(static_cast<size_t>(rows), T(0));
    for (int64_t j = 0; j < cols; ++j) {
        const T* row = pw + j * rows;
        T vj = v[static_cast<size_t>(j)];
        for (int64_t r = 0; r < rows; ++r) u[static_cast<size_t>(r)] += row[r] * vj;
    }
    T norm = 0;
    for (T x : u) norm += x * x;
    norm = std::max(std::sqrt(norm), T(1e-12));
    for (auto& x : u) x /= norm;
    return u;
}

}  // namespace

template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralNormState<T>& state, bool update) {
    const int64_t rows = weight.dim(weight.rank() - 1);
    if (!state.u.defined() || state.u.size() != rows)
        throw ShapeError(strf("spectral_normalize: state u has %lld entries, weight %s needs %lld",
                              state.u.defined() ? static_cast<long long>(state.u.size()) : 0LL,
                              shape_str(weight.shape()).c_str(), static_cast<long long>(rows)));
    std::vector<T> u(state.u.data(), state.u.data() + rows);
    std::vector<T> v;
    {
        NoGradGuard ng;
        if (update) {
            v = sn_right_vector(weight, u);
            u = sn_left_vector(weight, v);
            std::copy(u.begin(), u.end(), state.u.data());
        } else {
            v = sn_right_vector(weight, u);
        }
    }
    Tensor<T> sigma = clamp_min(sn_sigma(weight, u, v), T(1e-12));
    return mul_by_scalar_tensor(weight, reciprocal(sigma));
}

template <typename T>
T spectral_sigma_estimate(const Tensor<T>& weight, const SpectralNormState<T>& state) {
    const int64_t rows = weight.dim(weight.rank() - 1);
    std::vector<T> u(state.u.data(), state.u.data() + rows);
    std::vector<T> v = sn_right_vector(weight, u);
    NoGradGuard ng;
    return sn_sigma(weight, u, v).item();
}

#define HVOX_INSTANTIATE_LAYERS(T)                                                        \
    template InstanceStatsResult<T> instance_stats<T>(const Tensor<T>&, T);               \
    template Tensor<T> adain<T>(const Tensor<T>&, const StyleParams<T>&, T);              \
    template Tensor<T> instance_norm<T>(const Tensor<T>&, T);                             \
    template SiteMlp<T> make_site_mlp<T>(int64_t, int64_t, int64_t, Rng&, T);             \
    template StyleParams<T> map_style<T>(const Tensor<T>&, const SiteMlp<T>&);            \
    template StyleParams<T> map_style<T>(const Tensor<T>&, const MappingNetwork<T>&, size_t); \
    template struct SpectralNormState<T>;                                                 \
    template Tensor<T> spectral_normalize<T>(const Tensor<T>&, SpectralNormState<T>&, bool); \
    template T spectral_sigma_estimate<T>(const Tensor<T>&, const SpectralNormState<T>&);

HVOX_INSTANTIATE_LAYERS(float)
HVOX_INSTANTIATE_LAYERS(double)

}  // namespace hvox
