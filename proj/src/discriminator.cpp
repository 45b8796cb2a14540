#include "hvox/discriminator.hpp"

namespace hvox {

void DiscriminatorConfig::validate() const {
    if (resolution != 32 && resolution != 64 && resolution != 128)
        throw ValueError(strf("discriminator: resolution %d not in {32, 64, 128}", resolution));
    if (latent_dim < 1) throw ValueError("discriminator: latent_dim < 1");
    if (base_channels < 4) throw ValueError("discriminator: base_channels < 4");
    if (style_levels < 1) throw ValueError("discriminator: style_levels < 1");
    if (style_levels >= static_cast<int>(trunk_channels().size()))
        throw ValueError(strf("discriminator: %d style levels need a deeper trunk", style_levels));
}

std::vector<int64_t> DiscriminatorConfig::trunk_channels() const {
    std::vector<int64_t> chans;
    int64_t c = base_channels;
    for (int r = resolution; r > 2; r /= 2) {
        chans.push_back(c);
        c = std::min<int64_t>(c * 2, base_channels * 8);
    }
    return chans;
}

template <typename T>
DiscriminatorParams<T> DiscriminatorParams<T>::init(const DiscriminatorConfig& cfg, Rng& rng) {
    cfg.validate();
    DiscriminatorParams<T> p;
    p.cfg = cfg;
    const T w_std = T(0.02);

    int64_t cin = 3;
    for (size_t i = 0; i < cfg.trunk_channels().size(); ++i) {
        int64_t cout = cfg.trunk_channels()[i];
        TrunkLayer layer;
        layer.w = Tensor<T>::randn({5, 5, cin, cout}, rng, w_std);
        if (i > 0) layer.b = Tensor<T>::zeros({cout});
        layer.sn.init(cout, rng);
        p.trunk.push_back(std::move(layer));
        cin = cout;
    }
    for (int l = 0; l < cfg.style_levels; ++l) {
        int64_t c = cfg.trunk_channels()[static_cast<size_t>(l)];
        StyleHead head;
        head.w0 = Tensor<T>::randn({2 * c, cfg.style_hidden}, rng, w_std);
        head.b0 = Tensor<T>::zeros({cfg.style_hidden});
        head.w1 = Tensor<T>::randn({cfg.style_hidden, 1}, rng, w_std);
        head.b1 = Tensor<T>::zeros({1});
        p.style.push_back(std::move(head));
    }
    int64_t side = cfg.resolution >> cfg.trunk_channels().size();
    int64_t flat = side * side * cfg.trunk_channels().back();
    p.head_w = Tensor<T>::randn({flat, 1}, rng, w_std);
    p.head_b = Tensor<T>::zeros({1});
    p.enc_w = Tensor<T>::randn({flat, cfg.latent_dim}, rng, w_std);
    p.enc_b = Tensor<T>::zeros({cfg.latent_dim});

    p.visit_params([](const std::string&, Tensor<T>& t) { t.set_requires_grad(true); });
    return p;
}

template <typename T>
void DiscriminatorParams<T>::visit_params(
    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (size_t i = 0; i < trunk.size(); ++i) {
        fn(strf("d.trunk%zu.w", i), trunk[i].w);
        if (trunk[i].b.defined()) fn(strf("d.trunk%zu.b", i), trunk[i].b);
    }
    for (size_t l = 0; l < style.size(); ++l) {
        fn(strf("d.style%zu.w0", l), style[l].w0);
        fn(strf("d.style%zu.b0", l), style[l].b0);
        fn(strf("d.style%zu.w1", l), style[l].w1);
        fn(strf("d.style%zu.b1", l), style[l].b1);
    }
    fn("d.head.w", head_w);
    fn("d.head.b", head_b);
    fn("d.enc.w", enc_w);
    fn("d.enc.b", enc_b);
}

template <typename T>
void DiscriminatorParams<T>::visit_params(
    const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
    const_cast<DiscriminatorParams<T>*>(this)->visit_params(
        [&](const std::string& name, Tensor<T>& t) { fn(name, t); });
}

template <typename T>
void DiscriminatorParams<T>::visit_state(
    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (size_t i = 0; i < trunk.size(); ++i) fn(strf("d.trunk%zu.sn_u", i), trunk[i].sn.u);
}

template <typename T>
DiscriminatorOut<T> discriminate(const Tensor<T>& x, DiscriminatorParams<T>& params,
                                 bool update_sn) {
    const DiscriminatorConfig& cfg = params.cfg;
    if (x.rank() != 4 || x.dim(1) != cfg.resolution || x.dim(2) != cfg.resolution ||
        x.dim(3) != 3)
        throw ShapeError(strf("discriminate: input %s, expected [N,%d,%d,3]",
                              shape_str(x.shape()).c_str(), cfg.resolution, cfg.resolution));
    const int64_t n = x.dim(0);
    const T slope = T(kLeakySlope);

    DiscriminatorOut<T> out;
    Tensor<T> h = x;
    for (size_t i = 0; i < params.trunk.size(); ++i) {
        auto& layer = params.trunk[i];
        Tensor<T> w_sn = spectral_normalize(layer.w, layer.sn, update_sn);
        h = conv2d(h, w_sn, layer.b, 2, 2);
        if (static_cast<int>(i) < cfg.style_levels) {
            auto stats = instance_stats(h);
            Tensor<T> s = concat<T>({stats.mu, stats.sigma}, 1);
            Tensor<T> sh = leaky_relu(linear(s, params.style[i].w0, params.style[i].b0), slope);
            out.style_logits.push_back(reshape(linear(sh, params.style[i].w1, params.style[i].b1),
                                               {n}));
        }
        if (i > 0) h = instance_norm(h);
        h = leaky_relu(h, slope);
        if (static_cast<int>(i) + 1 == cfg.style_levels) out.trunk_tap = h;
    }

    Tensor<T> flat = reshape(h, {n, h.size() / n});
    out.logit = reshape(linear(flat, params.head_w, params.head_b), {n});
    out.z_hat = tanh(linear(flat, params.enc_w, params.enc_b));
    return out;
}

template <typename T>
Tensor<T> encode(const Tensor<T>& x, DiscriminatorParams<T>& params) {
    return discriminate(x, params, false).z_hat;
}

#define HVOX_INSTANTIATE_DISCRIMINATOR(T)                                                  \
    template struct DiscriminatorParams<T>;                                                \
    template DiscriminatorOut<T> discriminate<T>(const Tensor<T>&, DiscriminatorParams<T>&, bool); \
    template Tensor<T> encode<T>(const Tensor<T>&, DiscriminatorParams<T>&);

HVOX_INSTANTIATE_DISCRIMINATOR(float)
HVOX_INSTANTIATE_DISCRIMINATOR(double)

}  // namespace hvox
