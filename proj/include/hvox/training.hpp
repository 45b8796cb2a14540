#pragma once

#include <optional>

#include "hvox/config.hpp"
#include "hvox/data.hpp"
#include "hvox/discriminator.hpp"
#include "hvox/generator.hpp"
#include "hvox/losses.hpp"

namespace hvox {

/// One latent code: i.i.d. uniform on [-1,1]^d.
Tensor<float> sample_latent(Rng& rng, int64_t d);
/// Batch of latent codes, [n,d], drawn row by row.
Tensor<float> sample_latent(Rng& rng, int64_t n, int64_t d);

/// Each pose component uniform in its interval (azimuth, elevation, scale in
/// that draw order).
Pose sample_pose(Rng& rng, const PoseRange& range);
std::vector<Pose> sample_poses(Rng& rng, const PoseRange& range, int64_t n);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Standard bias-corrected update of one tensor. Caller owns the moments.
void adam_step(float* param, const float* grad, float* m, float* v, int64_t count,
               const AdamConfig& cfg, int64_t t);

class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    /// Applies one update to every named parameter from its accumulated
    /// gradient. If any gradient is non-finite the whole step is skipped and
    /// false is returned; moments and t stay untouched.
    bool step(const std::vector<std::pair<std::string, Tensor<float>*>>& params);

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }
    const AdamConfig& config() const { return cfg_; }

    struct Slot {
        std::string name;
        std::vector<float> m, v;
    };
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }

private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::vector<Slot> slots_;
};

// ---------------------------------------------------------------------------
// Training state and loop

struct TrainState {
    TrainConfig cfg;
    GeneratorParams<float> gen;
    DiscriminatorParams<float> disc;
    Adam opt_g, opt_d;
    Rng rng;
    Dataset dataset;
    int64_t step = 0;
    int64_t skipped_steps = 0;

    PoseRange pose_range() const;
    LossWeights<float> loss_weights() const;
    std::vector<std::pair<std::string, Tensor<float>*>> gen_param_list();
    std::vector<std::pair<std::string, Tensor<float>*>> disc_param_list();
};

TrainState init_train_state(const TrainConfig& cfg);

/// One alternating update: D on a real batch plus fresh fakes, then G on
/// fresh samples. Throws NumericError with a diagnostic dump if a loss goes
/// non-finite; skips the optimizer step (with a stderr incident line) when a
/// gradient does.
LossReport train_step(TrainState& st, const Tensor<float>& real_batch);

/// Draws the next batch and runs train_step.
LossReport train_one(TrainState& st);

/// Full loop: loss.csv, periodic sample grids and checkpoints under
/// cfg.out_dir. Optional per-step callback.
void train_loop(TrainState& st,
                const std::function<void(int64_t, const LossReport&)>& on_step = nullptr);

// ---------------------------------------------------------------------------
// Checkpointing ("HVOX" archives)

void save_checkpoint(const TrainState& st, const std::string& path);

enum class CheckpointLoad { kFull, kParamsOnly };

/// kFull restores everything (training resumes bit-exactly); kParamsOnly
/// skips dataset construction for sampling-only use.
TrainState load_checkpoint(const std::string& path,
                           CheckpointLoad mode = CheckpointLoad::kFull);

}  // namespace hvox
