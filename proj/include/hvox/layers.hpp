#pragma once

#include "hvox/tensor.hpp"

namespace hvox {

inline constexpr double kInstanceNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.2;

// Activations are [N, ...spatial..., C]; statistics are per instance per
// channel over all spatial axes.

template <typename T>
struct InstanceStatsResult {
    Tensor<T> mu;     // [N,C]
    Tensor<T> sigma;  // [N,C], sqrt(population variance + eps)
};

template <typename T>
InstanceStatsResult<T> instance_stats(const Tensor<T>& x, T eps = T(kInstanceNormEps));

/// Style parameters for one AdaIN site. gamma multiplies the normalized
/// activation, beta shifts it. Shapes [N,C].
template <typename T>
struct StyleParams {
    Tensor<T> gamma;
    Tensor<T> beta;
};

/// gamma * (x - mu) / sigma + beta, broadcast per channel per instance.
template <typename T>
Tensor<T> adain(const Tensor<T>& x, const StyleParams<T>& style, T eps = T(kInstanceNormEps));

/// (x - mu) / sigma, no learned affine.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(kInstanceNormEps));

// ---------------------------------------------------------------------------
// Style mapping: per-site two-layer perceptron z -> (gamma, beta).
// Bias init centers gamma at 1 and beta at 0 so an untrained network is an
// approximate identity modulation.

template <typename T>
struct SiteMlp {
    Tensor<T> w0, b0;  // z -> hidden
    Tensor<T> wg, bg;  // hidden -> gamma
    Tensor<T> wb, bb;  // hidden -> beta
    int64_t channels = 0;
};

template <typename T>
struct MappingNetwork {
    std::vector<SiteMlp<T>> sites;
};

template <typename T>
SiteMlp<T> make_site_mlp(int64_t latent_dim, int64_t hidden, int64_t channels, Rng& rng,
                         T init_std = T(0.02));

/// z [N,d] -> StyleParams for the given site. Throws on unknown site ids.
template <typename T>
StyleParams<T> map_style(const Tensor<T>& z, const MappingNetwork<T>& net, size_t site);

template <typename T>
StyleParams<T> map_style(const Tensor<T>& z, const SiteMlp<T>& site);

// ---------------------------------------------------------------------------
// Spectral normalization. The weight is read as a matrix with rows = last
// axis (output channels) and columns = everything else. One power iteration
// per update; u persists across steps and is checkpointed. Gradients flow
// through sigma with u, v held constant.

template <typename T>
struct SpectralNormState {
    Tensor<T> u;  // [rows]

    void init(int64_t rows, Rng& rng);
};

/// weight / max(sigma_hat, 1e-12). Runs one power iteration first when
/// update is true. Not safe for concurrent calls on the same state.
template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& weight, SpectralNormState<T>& state, bool update);

/// Current power-iteration estimate of the largest singular value.
template <typename T>
T spectral_sigma_estimate(const Tensor<T>& weight, const SpectralNormState<T>& state);

}  // namespace hvox
