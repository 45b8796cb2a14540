#pragma once

#include "hvox/geometry.hpp"
#include "hvox/layers.hpp"

namespace hvox {

template <typename T>
struct ConvParam {
    Tensor<T> w, b;
};

/// Whether a pose comes from the training sampler or from an explicit
/// post-training manipulation. The no_rotation ablation bypasses the rigid
/// transform only for training-mode poses.
enum class PoseMode { kTraining, kManual };

struct GeneratorConfig {
    int resolution = 32;  // 32 | 64 | 128
    int64_t latent_dim = 128;
    // Anchor of the channel schedule; 512 gives the full-size network
    // (constant 4x4x4x512, deep volume 16x16x16x64). Must be a multiple of 16.
    int64_t base_channels = 512;
    int64_t mapping_hidden = 128;
    bool no_rotation = false;
    bool traditional_z = false;

    void validate() const;
    std::vector<int64_t> channels_3d() const;  // per 3D block: {C/2 at 8^3, C/8 at 16^3}
    int64_t morph_channels() const { return base_channels / 8; }
    int64_t projected_channels() const { return base_channels; }
    std::vector<int64_t> channels_2d() const;  // per 2D block, depends on resolution
    int blocks_2d() const;
};

template <typename T>
struct GeneratorParams {
    GeneratorConfig cfg;

    Tensor<T> constant;  // [4,4,4,C]; absent in traditional_z mode
    Tensor<T> input_w;   // traditional_z: [d, 4*4*4*C]
    Tensor<T> input_b;   // traditional_z: [4*4*4*C]
    std::vector<ConvParam<T>> blocks_3d;
    ConvParam<T> morph1, morph2;
    ConvParam<T> proj;  // per-pixel map [D*C, C'], bias [C']
    std::vector<ConvParam<T>> blocks_2d;
    ConvParam<T> to_rgb;
    MappingNetwork<T> mapping;  // 3D-block sites first, then 2D-block sites

    static GeneratorParams init(const GeneratorConfig& cfg, Rng& rng);

    /// Enumerates learnable tensors in a fixed order.
    void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn);
    void visit_params(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;
};

template <typename T>
struct GeneratorTaps {
    Tensor<T> volume_post_transform;  // deep volume straight after the rigid transform
};

/// Full pipeline: learnt constant -> styled 3D blocks (z1) -> rigid transform
/// -> perspective morph -> projection -> styled 2D blocks (z2) -> image in
/// [-1,1], shape [N, R, R, 3]. poses has one entry per item (or a single
/// shared entry).
template <typename T>
Tensor<T> generate(const Tensor<T>& z1, const Tensor<T>& z2, const std::vector<Pose>& poses,
                   const GeneratorParams<T>& params, PoseMode mode = PoseMode::kTraining,
                   GeneratorTaps<T>* taps = nullptr);

/// Ablation: z enters through a dense input layer instead of the learnt
/// constant and every AdaIN site becomes plain instance norm. Requires
/// cfg.traditional_z.
template <typename T>
Tensor<T> generate_traditional(const Tensor<T>& z, const std::vector<Pose>& poses,
                               const GeneratorParams<T>& params,
                               PoseMode mode = PoseMode::kTraining,
                               GeneratorTaps<T>* taps = nullptr);

/// Routes to generate or generate_traditional based on the config.
template <typename T>
Tensor<T> render(const Tensor<T>& z1, const Tensor<T>& z2, const std::vector<Pose>& poses,
                 const GeneratorParams<T>& params, PoseMode mode = PoseMode::kTraining,
                 GeneratorTaps<T>* taps = nullptr);

/// Depth-to-channel reshape followed by the learnt per-pixel map and a leaky
/// activation: [N,W,H,D,C] -> [N,W,H,C'].
template <typename T>
Tensor<T> project(const Tensor<T>& volume, const ConvParam<T>& proj);

/// One image per pose, identical latents.
template <typename T>
std::vector<Tensor<T>> render_sweep(const Tensor<T>& z1, const Tensor<T>& z2,
                                    const std::vector<Pose>& poses,
                                    const GeneratorParams<T>& params);

}  // namespace hvox
