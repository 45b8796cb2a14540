#pragma once

#include "hvox/layers.hpp"

namespace hvox {

struct DiscriminatorConfig {
    int resolution = 32;
    int64_t latent_dim = 128;
    int64_t base_channels = 64;  // trunk widths c,2c,4c,8c,... capped at 8c
    int64_t style_hidden = 128;
    int style_levels = 3;

    void validate() const;
    std::vector<int64_t> trunk_channels() const;  // one entry per stride-2 conv
};

template <typename T>
struct DiscriminatorParams {
    struct TrunkLayer {
        Tensor<T> w;  // [5,5,Cin,Cout], spectrally normalized at forward time
        Tensor<T> b;  // undefined on the first layer
        SpectralNormState<T> sn;
    };
    struct StyleHead {
        Tensor<T> w0, b0;  // (mu||sigma) [2C] -> hidden
        Tensor<T> w1, b1;  // hidden -> 1
    };

    DiscriminatorConfig cfg;
    std::vector<TrunkLayer> trunk;
    std::vector<StyleHead> style;
    Tensor<T> head_w, head_b;  // flat -> real/fake logit
    Tensor<T> enc_w, enc_b;    // flat -> reconstructed latent

    static DiscriminatorParams init(const DiscriminatorConfig& cfg, Rng& rng);

    void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn);
    void visit_params(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;
    /// Non-learnable persistent state (power-iteration vectors).
    void visit_state(const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

template <typename T>
struct DiscriminatorOut {
    Tensor<T> logit;                      // [N]
    std::vector<Tensor<T>> style_logits;  // per level, [N]
    Tensor<T> z_hat;                      // [N,d], tanh-bounded
    Tensor<T> trunk_tap;                  // post-norm activation after the last style level
};

/// Trunk of spectrally normalized stride-2 convs. Style statistics (mu,
/// sigma) are taken from each designated level before instance norm; the
/// first layer skips instance norm (and carries no bias) so raw image
/// statistics reach the first style head unchanged. update_sn runs one power
/// iteration per weight before use.
template <typename T>
DiscriminatorOut<T> discriminate(const Tensor<T>& x, DiscriminatorParams<T>& params,
                                 bool update_sn);

/// Identity-encoder projection of discriminate().
template <typename T>
Tensor<T> encode(const Tensor<T>& x, DiscriminatorParams<T>& params);

}  // namespace hvox
