#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hvox/data.hpp"
#include "hvox/gradcheck_suite.hpp"
#include "hvox/training.hpp"

namespace {

using namespace hvox;

std::string dashed(const std::string& key) {
    std::string out = key;
    for (char& c : out)
        if (c == '_') c = '-';
    return out;
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
    std::vector<uint64_t> seeds;
    std::string cur;
    for (char c : text + ",") {
        if (c == ',') {
            if (!cur.empty()) seeds.push_back(std::stoull(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (seeds.empty()) throw ValueError(strf("expected comma-separated seeds, got '%s'", text.c_str()));
    return seeds;
}

Tensor<float> latent_from_seed(uint64_t seed, int64_t d) {
    Rng rng(seed);
    return sample_latent(rng, 1, d);
}

Pose midpoint_pose(const PoseRange& r) {
    Pose p;
    p.azimuth_deg = (r.azimuth_min + r.azimuth_max) / 2;
    p.elevation_deg = (r.elevation_min + r.elevation_max) / 2;
    p.scale = (r.scale_min + r.scale_max) / 2;
    return p;
}

std::vector<double> sweep_angles(double lo, double hi, int k) {
    if (k < 1) throw ValueError("sweep: steps < 1");
    if (k == 1) return {(lo + hi) / 2};
    const double span = hi - lo;
    std::vector<double> out;
    const bool full_turn = std::abs(span - 360.0) < 1e-9;
    for (int i = 0; i < k; ++i)
        out.push_back(lo + span * i / (full_turn ? k : k - 1));
    return out;
}

Tensor<float> squeeze_image(const Tensor<float>& batch) {
    return reshape(batch, {batch.dim(1), batch.dim(2), batch.dim(3)});
}

int cmd_gradcheck(bool inject_fault) {
    GradCheckOptions opts;
    opts.inject_fault = inject_fault;
    std::vector<GradCheckEntry> entries = run_gradcheck_suite(opts);
    bool ok = true;
    for (const auto& e : entries) {
        std::printf("%-28s max_rel_err=%-12.3g %s\n", e.op.c_str(), e.max_rel_err,
                    e.pass ? "PASS" : "FAIL");
        if (!e.pass && !e.note.empty()) std::printf("    %s\n", e.note.c_str());
        ok = ok && e.pass;
    }
    std::printf("gradcheck: %zu ops, %s\n", entries.size(), ok ? "all passed" : "FAILURES");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentiable 3D-aware generative image model"};
    app.require_subcommand(1);

    // train ------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Train on a PNG folder or the synthetic dataset");
    std::string config_path;
    train->add_option("--config", config_path, "Flat key=value config file");
    std::map<std::string, std::string> overrides;
    for (const std::string& key : config_keys()) {
        std::string flag = "--" + dashed(key);
        if (key == "no_rotation" || key == "traditional_z") {
            train->add_flag_callback(
                flag, [&overrides, key]() { overrides[key] = "true"; },
                "Enable " + key + " ablation");
        } else {
            train->add_option_function<std::string>(
                flag, [&overrides, key](const std::string& v) { overrides[key] = v; },
                "Config key " + key);
        }
    }

    // sample -----------------------------------------------------------------
    auto* sample = app.add_subcommand("sample", "Render a grid of random samples");
    std::string ckpt_path, out_path = "samples.png";
    int count = 16, cols = 4;
    uint64_t cli_seed = 1;
    sample->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
    sample->add_option("--count", count, "Number of images");
    sample->add_option("--cols", cols, "Grid columns");
    sample->add_option("--seed", cli_seed, "Sampling seed");
    sample->add_option("--out", out_path, "Output PNG");

    // sweep ------------------------------------------------------------------
    auto* sweep = app.add_subcommand("sweep", "Pose sweep at fixed identity");
    std::string axis = "azimuth";
    int sweep_steps = 8;
    std::string sweep_ckpt, sweep_out = "sweep.png";
    uint64_t sweep_seed = 1;
    sweep->add_option("--checkpoint", sweep_ckpt, "Checkpoint file")->required();
    sweep->add_option("--axis", axis, "azimuth|elevation")
        ->check(CLI::IsMember({"azimuth", "elevation"}));
    sweep->add_option("--steps", sweep_steps, "Number of frames");
    sweep->add_option("--seed", sweep_seed, "Identity seed");
    sweep->add_option("--out", sweep_out, "Output PNG");

    // interpolate --------------------------------------------------------------
    auto* interp = app.add_subcommand("interpolate", "Linear latent interpolation at fixed pose");
    std::string interp_ckpt, interp_out = "interpolate.png";
    uint64_t seed_a = 1, seed_b = 2;
    int interp_steps = 8;
    interp->add_option("--checkpoint", interp_ckpt, "Checkpoint file")->required();
    interp->add_option("--seed-a", seed_a, "Endpoint identity seed A");
    interp->add_option("--seed-b", seed_b, "Endpoint identity seed B");
    interp->add_option("--steps", interp_steps, "Number of frames (>= 2)");
    interp->add_option("--out", interp_out, "Output PNG");

    // mix ----------------------------------------------------------------------
    auto* mix = app.add_subcommand("mix", "Cross 3D-feature codes with 2D-feature codes");
    std::string mix_ckpt, mix_out = "mix.png", seeds_3d = "1", seeds_2d = "2";
    mix->add_option("--checkpoint", mix_ckpt, "Checkpoint file")->required();
    mix->add_option("--seeds-3d", seeds_3d, "Comma-separated identity seeds for 3D features");
    mix->add_option("--seeds-2d", seeds_2d, "Comma-separated identity seeds for 2D features");
    mix->add_option("--out", mix_out, "Output PNG");

    // gradcheck ------------------------------------------------------------------
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op");
    bool inject_fault = false;
    gradcheck->add_flag("--inject-fault", inject_fault, "Test fixture: corrupt one adjoint")
        ->group("");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train)) {
            TrainConfig cfg;
            if (!config_path.empty()) cfg = config_load_file(config_path, cfg);
            for (const std::string& key : config_keys()) {
                auto it = overrides.find(key);
                if (it != overrides.end()) config_set(cfg, key, it->second);
            }
            cfg.validate();
            TrainState st = init_train_state(cfg);
            std::printf("training: %lld steps, batch %lld, resolution %lld, out %s\n",
                        static_cast<long long>(cfg.steps), static_cast<long long>(cfg.batch),
                        static_cast<long long>(cfg.resolution), cfg.out_dir.c_str());
            train_loop(st, [&](int64_t step, const LossReport& rep) {
                if (step % 25 == 0 || step == cfg.steps)
                    std::printf("step %6lld  g_total=%-10.4g g_id=%-10.4g d_total=%-10.4g\n",
                                static_cast<long long>(step), rep.g_total, rep.g_identity,
                                rep.d_total);
            });
            std::printf("done: %s/loss.csv\n", cfg.out_dir.c_str());
            return 0;
        }

        if (app.got_subcommand(sample)) {
            TrainState st = load_checkpoint(ckpt_path, CheckpointLoad::kParamsOnly);
            Rng rng(cli_seed);
            std::vector<Tensor<float>> images;
            for (int i = 0; i < count; ++i) {
                Tensor<float> z = sample_latent(rng, 1, st.cfg.latent_dim);
                Pose pose = sample_pose(rng, st.pose_range());
                images.push_back(squeeze_image(render(z, z, {pose}, st.gen, PoseMode::kTraining)));
            }
            write_grid(images, cols, out_path);
            std::printf("wrote %s\n", out_path.c_str());
            return 0;
        }

        if (app.got_subcommand(sweep)) {
            TrainState st = load_checkpoint(sweep_ckpt, CheckpointLoad::kParamsOnly);
            PoseRange range = st.pose_range();
            Tensor<float> z = latent_from_seed(sweep_seed, st.cfg.latent_dim);
            std::vector<Pose> poses;
            if (axis == "azimuth") {
                for (double a : sweep_angles(range.azimuth_min, range.azimuth_max, sweep_steps)) {
                    Pose p = midpoint_pose(range);
                    p.azimuth_deg = a;
                    poses.push_back(p);
                }
            } else {
                for (double e : sweep_angles(range.elevation_min, range.elevation_max, sweep_steps)) {
                    Pose p = midpoint_pose(range);
                    p.elevation_deg = e;
                    poses.push_back(p);
                }
            }
            std::vector<Tensor<float>> images;
            for (const Tensor<float>& img : render_sweep(z, z, poses, st.gen))
                images.push_back(squeeze_image(img));
            write_grid(images, sweep_steps, sweep_out);
            std::printf("wrote %s\n", sweep_out.c_str());
            return 0;
        }

        if (app.got_subcommand(interp)) {
            if (interp_steps < 2) throw ValueError("interpolate: steps must be >= 2");
            TrainState st = load_checkpoint(interp_ckpt, CheckpointLoad::kParamsOnly);
            Tensor<float> za = latent_from_seed(seed_a, st.cfg.latent_dim);
            Tensor<float> zb = latent_from_seed(seed_b, st.cfg.latent_dim);
            Pose pose = midpoint_pose(st.pose_range());
            std::vector<Tensor<float>> images;
            for (int i = 0; i < interp_steps; ++i) {
                float t = static_cast<float>(i) / static_cast<float>(interp_steps - 1);
                Tensor<float> z = add(mul_scalar(za, 1.0f - t), mul_scalar(zb, t));
                images.push_back(squeeze_image(render(z, z, {pose}, st.gen, PoseMode::kManual)));
            }
            write_grid(images, interp_steps, interp_out);
            std::printf("wrote %s\n", interp_out.c_str());
            return 0;
        }

        if (app.got_subcommand(mix)) {
            TrainState st = load_checkpoint(mix_ckpt, CheckpointLoad::kParamsOnly);
            std::vector<uint64_t> s3 = parse_seed_list(seeds_3d);
            std::vector<uint64_t> s2 = parse_seed_list(seeds_2d);
            Pose pose = midpoint_pose(st.pose_range());
            std::vector<Tensor<float>> images;
            for (uint64_t a : s3) {
                Tensor<float> z1 = latent_from_seed(a, st.cfg.latent_dim);
                for (uint64_t b : s2) {
                    Tensor<float> z2 = latent_from_seed(b, st.cfg.latent_dim);
                    images.push_back(
                        squeeze_image(generate(z1, z2, {pose}, st.gen, PoseMode::kManual)));
                }
            }
            write_grid(images, static_cast<int>(s2.size()), mix_out);
            std::printf("wrote %s\n", mix_out.c_str());
            return 0;
        }

        if (app.got_subcommand(gradcheck)) return cmd_gradcheck(inject_fault);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
