#include "hvox/generator.hpp"

#include <cmath>

namespace hvox {

void GeneratorConfig::validate() const {
    if (resolution != 32 && resolution != 64 && resolution != 128)
        throw ValueError(strf("generator: resolution %d not in {32, 64, 128}", resolution));
    if (latent_dim < 1) throw ValueError("generator: latent_dim < 1");
    if (base_channels < 16 || base_channels % 16 != 0)
        throw ValueError(strf("generator: base_channels %lld must be a positive multiple of 16",
                              static_cast<long long>(base_channels)));
    if (mapping_hidden < 1) throw ValueError("generator: mapping_hidden < 1");
}

std::vector<int64_t> GeneratorConfig::channels_3d() const {
    return {base_channels / 2, base_channels / 8};
}

int GeneratorConfig::blocks_2d() const {
    int n = 0;
    for (int r = 16; r < resolution; r *= 2) ++n;
    return n;
}

std::vector<int64_t> GeneratorConfig::channels_2d() const {
    const std::vector<int64_t> ladder = {base_channels / 2, base_channels / 8,
                                         base_channels / 16};
    return std::vector<int64_t>(ladder.begin(), ladder.begin() + blocks_2d());
}

namespace {

template <typename T>
ConvParam<T> make_conv3d(int64_t cin, int64_t cout, int k, Rng& rng, T std_init = T(0.02)) {
    return {Tensor<T>::randn({k, k, k, cin, cout}, rng, std_init), Tensor<T>::zeros({cout})};
}

template <typename T>
ConvParam<T> make_conv2d(int64_t cin, int64_t cout, int k, Rng& rng, T std_init = T(0.02)) {
    return {Tensor<T>::randn({k, k, cin, cout}, rng, std_init), Tensor<T>::zeros({cout})};
}

template <typename T>
void check_latent(const char* op, const Tensor<T>& z, int64_t d) {
    if (z.rank() != 2 || z.dim(1) != d)
        throw ShapeError(strf("%s: latent %s, expected [N,%lld]", op,
                              shape_str(z.shape()).c_str(), static_cast<long long>(d)));
    const T* p = z.data();
    for (int64_t i = 0; i < z.size(); ++i)
        if (p[i] < T(-1.000001) || p[i] > T(1.000001))
            throw ValueError(strf("%s: latent value %g outside [-1,1]", op,
                                  static_cast<double>(p[i])));
}

template <typename T>
void check_finite_activation(const Tensor<T>& x, const char* layer) {
    if (!x.all_finite())
        throw NumericError(strf("generator: non-finite activation after %s", layer));
}

template <typename T>
void check_poses(const std::vector<Pose>& poses, int64_t n) {
    if (poses.size() != 1 && static_cast<int64_t>(poses.size()) != n)
        throw ShapeError(strf("generate: %zu poses for batch of %lld", poses.size(),
                              static_cast<long long>(n)));
    for (const Pose& p : poses) p.validate();
}

// Shared backbone for both generator variants. When `traditional` is set the
// style sites are replaced by instance norm.
template <typename T>
Tensor<T> run_pipeline(const Tensor<T>& z1, const Tensor<T>& z2, const std::vector<Pose>& poses,
                       const GeneratorParams<T>& params, PoseMode mode, bool traditional,
                       GeneratorTaps<T>* taps) {
    const GeneratorConfig& cfg = params.cfg;
    const int64_t n = z1.dim(0);
    const T slope = T(kLeakySlope);

    Tensor<T> x;
    if (traditional) {
        x = reshape(linear(z1, params.input_w, params.input_b),
                    {n, 4, 4, 4, cfg.base_channels});
    } else {
        x = tile_batch(params.constant, n);
    }

    for (size_t i = 0; i < params.blocks_3d.size(); ++i) {
        x = upsample_nearest(x, 2, {1, 2, 3});
        x = conv3d(x, params.blocks_3d[i].w, params.blocks_3d[i].b, 1, 1);
        if (traditional) {
            x = instance_norm(x);
        } else {
            x = adain(x, map_style(z1, params.mapping, i));
        }
        x = leaky_relu(x, slope);
        check_finite_activation(x, strf("block3d%zu", i).c_str());
    }

    const bool skip_transform = cfg.no_rotation && mode == PoseMode::kTraining;
    if (!skip_transform) x = rigid_transform(x, poses);
    if (taps) taps->volume_post_transform = x;

    x = leaky_relu(conv3d(x, params.morph1.w, params.morph1.b, 1, 1), slope);
    x = leaky_relu(conv3d(x, params.morph2.w, params.morph2.b, 1, 1), slope);
    check_finite_activation(x, "morph");

    x = project(x, params.proj);

    for (size_t j = 0; j < params.blocks_2d.size(); ++j) {
        x = upsample_nearest(x, 2, {1, 2});
        x = conv2d(x, params.blocks_2d[j].w, params.blocks_2d[j].b, 1, 1);
        if (traditional) {
            x = instance_norm(x);
        } else {
            x = adain(x, map_style(z2, params.mapping, params.blocks_3d.size() + j));
        }
        x = leaky_relu(x, slope);
        check_finite_activation(x, strf("block2d%zu", j).c_str());
    }

    x = conv2d(x, params.to_rgb.w, params.to_rgb.b, 1, 1);
    x = tanh(x);
    check_finite_activation(x, "to_rgb");
    return x;
}

}  // namespace

template <typename T>
GeneratorParams<T> GeneratorParams<T>::init(const GeneratorConfig& cfg, Rng& rng) {
    cfg.validate();
    GeneratorParams<T> p;
    p.cfg = cfg;
    const int64_t c0 = cfg.base_channels;
    const T w_std = T(0.02);

    if (cfg.traditional_z) {
        p.input_w = Tensor<T>::randn({cfg.latent_dim, 64 * c0}, rng, w_std);
        p.input_b = Tensor<T>::zeros({64 * c0});
    } else {
        p.constant = Tensor<T>::randn({4, 4, 4, c0}, rng, w_std);
    }

    int64_t cin = c0;
    for (int64_t c : cfg.channels_3d()) {
        p.blocks_3d.push_back(make_conv3d<T>(cin, c, 3, rng));
        if (!cfg.traditional_z)
            p.mapping.sites.push_back(make_site_mlp<T>(cfg.latent_dim, cfg.mapping_hidden, c, rng));
        cin = c;
    }
    p.morph1 = make_conv3d<T>(cin, cfg.morph_channels(), 3, rng);
    p.morph2 = make_conv3d<T>(cfg.morph_channels(), cfg.morph_channels(), 3, rng);

    const int64_t depth_channels = 16 * cfg.morph_channels();
    p.proj = {Tensor<T>::randn({depth_channels, cfg.projected_channels()}, rng, w_std),
              Tensor<T>::zeros({cfg.projected_channels()})};

    cin = cfg.projected_channels();
    for (int64_t c : cfg.channels_2d()) {
        p.blocks_2d.push_back(make_conv2d<T>(cin, c, 3, rng));
        if (!cfg.traditional_z)
            p.mapping.sites.push_back(make_site_mlp<T>(cfg.latent_dim, cfg.mapping_hidden, c, rng));
        cin = c;
    }
    p.to_rgb = make_conv2d<T>(cin, 3, 3, rng);

    p.visit_params([](const std::string&, Tensor<T>& t) { t.set_requires_grad(true); });
    return p;
}

template <typename T>
void GeneratorParams<T>::visit_params(
    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    if (cfg.traditional_z) {
        fn("g.input.w", input_w);
        fn("g.input.b", input_b);
    } else {
        fn("g.constant", constant);
    }
    auto visit_site = [&](const std::string& prefix, size_t site) {
        SiteMlp<T>& s = mapping.sites[site];
        fn(prefix + ".map.w0", s.w0);
        fn(prefix + ".map.b0", s.b0);
        fn(prefix + ".map.wg", s.wg);
        fn(prefix + ".map.bg", s.bg);
        fn(prefix + ".map.wb", s.wb);
        fn(prefix + ".map.bb", s.bb);
    };
    for (size_t i = 0; i < blocks_3d.size(); ++i) {
        std::string prefix = strf("g.block3d%zu", i);
        fn(prefix + ".conv.w", blocks_3d[i].w);
        fn(prefix + ".conv.b", blocks_3d[i].b);
        if (!cfg.traditional_z) visit_site(prefix, i);
    }
    fn("g.morph1.w", morph1.w);
    fn("g.morph1.b", morph1.b);
    fn("g.morph2.w", morph2.w);
    fn("g.morph2.b", morph2.b);
    fn("g.proj.w", proj.w);
    fn("g.proj.b", proj.b);
    for (size_t j = 0; j < blocks_2d.size(); ++j) {
        std::string prefix = strf("g.block2d%zu", j);
        fn(prefix + ".conv.w", blocks_2d[j].w);
        fn(prefix + ".conv.b", blocks_2d[j].b);
        if (!cfg.traditional_z) visit_site(prefix, blocks_3d.size() + j);
    }
    fn("g.to_rgb.w", to_rgb.w);
    fn("g.to_rgb.b", to_rgb.b);
}

template <typename T>
void GeneratorParams<T>::visit_params(
    const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
    const_cast<GeneratorParams<T>*>(this)->visit_params(
        [&](const std::string& name, Tensor<T>& t) { fn(name, t); });
}

template <typename T>
Tensor<T> project(const Tensor<T>& volume, const ConvParam<T>& proj) {
    if (volume.rank() != 5)
        throw ShapeError(strf("project: volume %s, expected [N,W,H,D,C]",
                              shape_str(volume.shape()).c_str()));
    const int64_t n = volume.dim(0), w = volume.dim(1), h = volume.dim(2);
    const int64_t dc = volume.dim(3) * volume.dim(4);
    if (proj.w.dim(0) != dc)
        throw ShapeError(strf("project: map expects %lld depth-channels, volume has %lld",
                              static_cast<long long>(proj.w.dim(0)), static_cast<long long>(dc)));
    Tensor<T> flat = reshape(volume, {n * w * h, dc});
    Tensor<T> mapped = linear(flat, proj.w, proj.b);
    return leaky_relu(reshape(mapped, {n, w, h, proj.w.dim(1)}), T(kLeakySlope));
}

template <typename T>
Tensor<T> generate(const Tensor<T>& z1, const Tensor<T>& z2, const std::vector<Pose>& poses,
                   const GeneratorParams<T>& params, PoseMode mode, GeneratorTaps<T>* taps) {
    if (params.cfg.traditional_z)
        throw ValueError("generate: traditional_z config, use generate_traditional");
    check_latent("generate", z1, params.cfg.latent_dim);
    check_latent("generate", z2, params.cfg.latent_dim);
    if (z1.dim(0) != z2.dim(0))
        throw ShapeError(strf("generate: z1 batch %lld != z2 batch %lld",
                              static_cast<long long>(z1.dim(0)),
                              static_cast<long long>(z2.dim(0))));
    check_poses<T>(poses, z1.dim(0));
    return run_pipeline(z1, z2, poses, params, mode, false, taps);
}

template <typename T>
Tensor<T> generate_traditional(const Tensor<T>& z, const std::vector<Pose>& poses,
                               const GeneratorParams<T>& params, PoseMode mode,
                               GeneratorTaps<T>* taps) {
    if (!params.cfg.traditional_z)
        throw ValueError("generate_traditional: config does not set traditional_z");
    check_latent("generate_traditional", z, params.cfg.latent_dim);
    check_poses<T>(poses, z.dim(0));
    return run_pipeline(z, z, poses, params, mode, true, taps);
}

template <typename T>
Tensor<T> render(const Tensor<T>& z1, const Tensor<T>& z2, const std::vector<Pose>& poses,
                 const GeneratorParams<T>& params, PoseMode mode, GeneratorTaps<T>* taps) {
    if (params.cfg.traditional_z) return generate_traditional(z1, poses, params, mode, taps);
    return generate(z1, z2, poses, params, mode, taps);
}

template <typename T>
std::vector<Tensor<T>> render_sweep(const Tensor<T>& z1, const Tensor<T>& z2,
                                    const std::vector<Pose>& poses,
                                    const GeneratorParams<T>& params) {
    if (poses.empty()) throw ValueError("render_sweep: empty pose list");
    std::vector<Tensor<T>> images;
    images.reserve(poses.size());
    for (const Pose& pose : poses)
        images.push_back(render(z1, z2, {pose}, params, PoseMode::kManual));
    return images;
}

#define HVOX_INSTANTIATE_GENERATOR(T)                                                         \
    template struct GeneratorParams<T>;                                                       \
    template Tensor<T> project<T>(const Tensor<T>&, const ConvParam<T>&);                     \
    template Tensor<T> generate<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<Pose>&, \
                                   const GeneratorParams<T>&, PoseMode, GeneratorTaps<T>*);   \
    template Tensor<T> generate_traditional<T>(const Tensor<T>&, const std::vector<Pose>&,    \
                                               const GeneratorParams<T>&, PoseMode,           \
                                               GeneratorTaps<T>*);                            \
    template Tensor<T> render<T>(const Tensor<T>&, const Tensor<T>&, const std::vector<Pose>&, \
                                 const GeneratorParams<T>&, PoseMode, GeneratorTaps<T>*);     \
    template std::vector<Tensor<T>> render_sweep<T>(const Tensor<T>&, const Tensor<T>&,       \
                                                    const std::vector<Pose>&,                 \
                                                    const GeneratorParams<T>&);

HVOX_INSTANTIATE_GENERATOR(float)
HVOX_INSTANTIATE_GENERATOR(double)

}  // namespace hvox
