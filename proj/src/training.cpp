#include "hvox/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hvox/checkpoint.hpp"

namespace hvox {

namespace fs = std::filesystem;

Tensor<float> sample_latent(Rng& rng, int64_t d) { return sample_latent(rng, 1, d); }

Tensor<float> sample_latent(Rng& rng, int64_t n, int64_t d) {
    if (d < 1) throw ValueError("sample_latent: d < 1");
    if (n < 1) throw ValueError("sample_latent: n < 1");
    Tensor<float> z(Shape{n, d});
    float* p = z.data();
    for (int64_t i = 0; i < n * d; ++i) p[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return z;
}

Pose sample_pose(Rng& rng, const PoseRange& range) {
    range.validate();
    Pose p;
    p.azimuth_deg = rng.uniform(range.azimuth_min, range.azimuth_max);
    p.elevation_deg = rng.uniform(range.elevation_min, range.elevation_max);
    p.scale = rng.uniform(range.scale_min, range.scale_max);
    return p;
}

std::vector<Pose> sample_poses(Rng& rng, const PoseRange& range, int64_t n) {
    std::vector<Pose> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out.push_back(sample_pose(rng, range));
    return out;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(float* param, const float* grad, float* m, float* v, int64_t count,
               const AdamConfig& cfg, int64_t t) {
    if (t < 1) throw ValueError("adam_step: t < 1");
    const float b1 = static_cast<float>(cfg.beta1);
    const float b2 = static_cast<float>(cfg.beta2);
    const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t));
    const float lr = static_cast<float>(cfg.lr);
    const float eps = static_cast<float>(cfg.eps);
    for (int64_t i = 0; i < count; ++i) {
        m[i] = b1 * m[i] + (1.0f - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0f - b2) * grad[i] * grad[i];
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

bool Adam::step(const std::vector<std::pair<std::string, Tensor<float>*>>& params) {
    if (slots_.empty()) {
        for (const auto& [name, t] : params)
            slots_.push_back(Slot{name, std::vector<float>(t->size(), 0.0f),
                                  std::vector<float>(t->size(), 0.0f)});
    }
    if (slots_.size() != params.size())
        throw ValueError(strf("adam: %zu parameters, optimizer tracks %zu", params.size(),
                              slots_.size()));

    std::vector<std::vector<float>> grads;
    grads.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        if (slots_[i].name != params[i].first)
            throw ValueError(strf("adam: parameter order changed ('%s' vs '%s')",
                                  params[i].first.c_str(), slots_[i].name.c_str()));
        grads.push_back(params[i].second->grad());
        for (float g : grads.back())
            if (!std::isfinite(g)) return false;
    }

    ++t_;
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<float>* p = params[i].second;
        adam_step(p->data(), grads[i].data(), slots_[i].m.data(), slots_[i].v.data(), p->size(),
                  cfg_, t_);
    }
    return true;
}

// ---------------------------------------------------------------------------
// Training state

PoseRange TrainState::pose_range() const {
    PoseRange r;
    r.azimuth_min = cfg.azimuth_min;
    r.azimuth_max = cfg.azimuth_max;
    r.elevation_min = cfg.elevation_min;
    r.elevation_max = cfg.elevation_max;
    r.scale_min = cfg.scale_min;
    r.scale_max = cfg.scale_max;
    return r;
}

LossWeights<float> TrainState::loss_weights() const {
    return {static_cast<float>(cfg.lambda_identity), static_cast<float>(cfg.lambda_style)};
}

std::vector<std::pair<std::string, Tensor<float>*>> TrainState::gen_param_list() {
    std::vector<std::pair<std::string, Tensor<float>*>> out;
    gen.visit_params([&](const std::string& name, Tensor<float>& t) { out.emplace_back(name, &t); });
    return out;
}

std::vector<std::pair<std::string, Tensor<float>*>> TrainState::disc_param_list() {
    std::vector<std::pair<std::string, Tensor<float>*>> out;
    disc.visit_params([&](const std::string& name, Tensor<float>& t) { out.emplace_back(name, &t); });
    return out;
}

namespace {

GeneratorConfig gen_config_of(const TrainConfig& cfg) {
    GeneratorConfig g;
    g.resolution = static_cast<int>(cfg.resolution);
    g.latent_dim = cfg.latent_dim;
    g.base_channels = cfg.gen_base_channels;
    g.mapping_hidden = cfg.mapping_hidden;
    g.no_rotation = cfg.no_rotation;
    g.traditional_z = cfg.traditional_z;
    return g;
}

DiscriminatorConfig disc_config_of(const TrainConfig& cfg) {
    DiscriminatorConfig d;
    d.resolution = static_cast<int>(cfg.resolution);
    d.latent_dim = cfg.latent_dim;
    d.base_channels = cfg.disc_base_channels;
    return d;
}

Dataset dataset_of(const TrainConfig& cfg) {
    if (cfg.dataset == "synthetic") {
        SyntheticSpec spec;
        spec.primitive = cfg.synthetic_primitive == "cube" ? SyntheticSpec::Primitive::kCube
                                                           : SyntheticSpec::Primitive::kChair;
        spec.palette = static_cast<int>(cfg.synthetic_palette);
        spec.bg_min = cfg.synthetic_bg_min;
        spec.bg_max = cfg.synthetic_bg_max;
        spec.azimuth_min = cfg.synthetic_azimuth_min;
        spec.azimuth_max = cfg.synthetic_azimuth_max;
        spec.size = static_cast<int>(cfg.resolution);
        spec.seed = cfg.seed;
        return Dataset::synthetic(spec, cfg.synthetic_count);
    }
    Dataset ds = Dataset::folder(cfg.dataset, static_cast<int>(cfg.resolution));
    if (ds.size() < cfg.batch)
        std::fprintf(stderr, "training: dataset has %lld items, batch is %lld\n",
                     static_cast<long long>(ds.size()), static_cast<long long>(cfg.batch));
    return ds;
}

void dump_diagnostics(const TrainState& st, const char* where) {
    std::fprintf(stderr, "training: non-finite %s at step %lld\n", where,
                 static_cast<long long>(st.step));
    st.gen.visit_params([&](const std::string& name, const Tensor<float>& t) {
        double mx = 0;
        for (int64_t i = 0; i < t.size(); ++i)
            mx = std::max(mx, std::abs(static_cast<double>(t.data()[i])));
        std::fprintf(stderr, "  %s max|value| = %g\n", name.c_str(), mx);
    });
}

}  // namespace

TrainState init_train_state(const TrainConfig& cfg) {
    cfg.validate();
    gen_config_of(cfg).validate();
    disc_config_of(cfg).validate();
    if (cfg.threads > 0) set_num_threads(static_cast<int>(cfg.threads));

    TrainState st;
    st.cfg = cfg;
    st.rng = Rng(cfg.seed);
    st.gen = GeneratorParams<float>::init(gen_config_of(cfg), st.rng);
    st.disc = DiscriminatorParams<float>::init(disc_config_of(cfg), st.rng);
    st.opt_g = Adam(AdamConfig{cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    st.opt_d = Adam(AdamConfig{cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    st.dataset = dataset_of(cfg);
    return st;
}

LossReport train_step(TrainState& st, const Tensor<float>& real_batch) {
    const TrainConfig& cfg = st.cfg;
    if (real_batch.rank() != 4 || real_batch.dim(0) != cfg.batch)
        throw ShapeError(strf("train_step: batch %s, expected [%lld,%lld,%lld,3]",
                              shape_str(real_batch.shape()).c_str(),
                              static_cast<long long>(cfg.batch),
                              static_cast<long long>(cfg.resolution),
                              static_cast<long long>(cfg.resolution)));
    const int64_t n = cfg.batch;
    const PoseRange range = st.pose_range();
    const LossWeights<float> weights = st.loss_weights();
    LossReport rep;

    auto zero_grads = [&]() {
        for (auto& [name, t] : st.gen_param_list()) t->zero_grad();
        for (auto& [name, t] : st.disc_param_list()) t->zero_grad();
    };

    // Discriminator update. Fakes are rendered outside any tape, so the
    // generator stays frozen here.
    {
        Tensor<float> z = sample_latent(st.rng, n, cfg.latent_dim);
        std::vector<Pose> poses = sample_poses(st.rng, range, n);
        Tensor<float> fake = render(z, z, poses, st.gen, PoseMode::kTraining);

        Tape<float> tape;
        auto real_out = discriminate(real_batch, st.disc, /*update_sn=*/true);
        auto fake_out = discriminate(fake, st.disc, /*update_sn=*/false);
        Tensor<float> d_loss = add(gan_loss_d(real_out.logit, fake_out.logit),
                                   style_loss_d(real_out.style_logits, fake_out.style_logits));
        if (cfg.identity_updates_discriminator)
            d_loss = add(d_loss, mul_scalar(identity_loss(z, fake_out.z_hat),
                                            weights.lambda_identity));
        rep.d_total = static_cast<double>(d_loss.item());
        if (!std::isfinite(rep.d_total)) {
            dump_diagnostics(st, "discriminator loss");
            throw NumericError(strf("train_step: non-finite discriminator loss at step %lld",
                                    static_cast<long long>(st.step)));
        }
        zero_grads();
        tape.backward(d_loss);
        if (!st.opt_d.step(st.disc_param_list())) {
            ++st.skipped_steps;
            std::fprintf(stderr, "training: step %lld: non-finite discriminator gradient, skipped\n",
                         static_cast<long long>(st.step));
        }
    }

    // Generator update on fresh samples.
    {
        Tensor<float> z = sample_latent(st.rng, n, cfg.latent_dim);
        std::vector<Pose> poses = sample_poses(st.rng, range, n);

        Tape<float> tape;
        Tensor<float> fake = render(z, z, poses, st.gen, PoseMode::kTraining);
        auto out = discriminate(fake, st.disc, /*update_sn=*/false);
        Tensor<float> g_gan = gan_loss_g(out.logit);
        Tensor<float> g_id = identity_loss(z, out.z_hat);
        StyleLoss<float> g_style = style_loss_g(out.style_logits);
        Tensor<float> g_total = total_loss_g(g_gan, g_id, g_style.total, weights);

        rep.g_gan = static_cast<double>(g_gan.item());
        rep.g_identity = static_cast<double>(g_id.item());
        rep.g_style = static_cast<double>(g_style.total.item());
        rep.g_total = static_cast<double>(g_total.item());
        for (const auto& lvl : g_style.per_level)
            rep.g_style_levels.push_back(static_cast<double>(lvl.item()));
        if (!std::isfinite(rep.g_total)) {
            dump_diagnostics(st, "generator loss");
            throw NumericError(strf("train_step: non-finite generator loss at step %lld",
                                    static_cast<long long>(st.step)));
        }
        zero_grads();
        tape.backward(g_total);
        if (!st.opt_g.step(st.gen_param_list())) {
            ++st.skipped_steps;
            std::fprintf(stderr, "training: step %lld: non-finite generator gradient, skipped\n",
                         static_cast<long long>(st.step));
        }
    }

    ++st.step;
    return rep;
}

LossReport train_one(TrainState& st) {
    Tensor<float> batch = st.dataset.next_batch(st.rng, st.cfg.batch);
    return train_step(st, batch);
}

// ---------------------------------------------------------------------------
// Loop with logging, samples, checkpoints

namespace {

void write_sample_grid(TrainState& st, const std::string& path) {
    // Previews draw from a dedicated stream so they never disturb training.
    Rng preview(st.cfg.seed ^ 0x5EEDC0FFEEull);
    const int count = 8;
    Tensor<float> z = sample_latent(preview, count, st.cfg.latent_dim);
    std::vector<Pose> poses = sample_poses(preview, st.pose_range(), count);
    std::vector<Tensor<float>> images;
    for (int i = 0; i < count; ++i) {
        Tensor<float> zi(Shape{1, st.cfg.latent_dim});
        std::copy(z.data() + i * st.cfg.latent_dim, z.data() + (i + 1) * st.cfg.latent_dim,
                  zi.data());
        Tensor<float> img = render(zi, zi, {poses[static_cast<size_t>(i)]}, st.gen,
                                   PoseMode::kTraining);
        images.push_back(reshape(img, {img.dim(1), img.dim(2), img.dim(3)}));
    }
    write_grid(images, 4, path);
}

}  // namespace

void train_loop(TrainState& st, const std::function<void(int64_t, const LossReport&)>& on_step) {
    const TrainConfig& cfg = st.cfg;
    fs::create_directories(fs::path(cfg.out_dir) / "samples");
    fs::create_directories(fs::path(cfg.out_dir) / "ckpt");

    const std::string csv_path = (fs::path(cfg.out_dir) / "loss.csv").string();
    std::ofstream csv(csv_path, st.step == 0 ? std::ios::trunc : std::ios::app);
    if (!csv) throw IoError(strf("training: cannot open %s", csv_path.c_str()));
    if (st.step == 0) csv << LossReport::csv_header(st.disc.cfg.style_levels) << "\n";

    while (st.step < cfg.steps) {
        LossReport rep = train_one(st);
        csv << rep.csv_row(st.step) << "\n";
        csv.flush();
        if (on_step) on_step(st.step, rep);

        if (st.step % cfg.sample_interval == 0 || st.step == cfg.steps) {
            write_sample_grid(
                st, (fs::path(cfg.out_dir) / "samples" / strf("step_%08lld.png",
                                                              static_cast<long long>(st.step)))
                        .string());
        }
        if (st.step % cfg.checkpoint_interval == 0 || st.step == cfg.steps) {
            save_checkpoint(st,
                            (fs::path(cfg.out_dir) / "ckpt" / strf("step_%08lld.hvox",
                                                                   static_cast<long long>(st.step)))
                                .string());
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const TrainState& st, const std::string& path) {
    ArchiveWriter w;
    w.add_bytes("config", config_serialize(st.cfg));
    w.add_i64("step", {st.step});

    st.gen.visit_params([&](const std::string& name, const Tensor<float>& t) {
        w.add_f32(name, t.shape(), t.data());
    });
    st.disc.visit_params([&](const std::string& name, const Tensor<float>& t) {
        w.add_f32(name, t.shape(), t.data());
    });
    const_cast<DiscriminatorParams<float>&>(st.disc).visit_state(
        [&](const std::string& name, Tensor<float>& t) { w.add_f32(name, t.shape(), t.data()); });

    auto dump_adam = [&](const char* prefix, const Adam& opt) {
        w.add_i64(strf("%s.t", prefix), {opt.t()});
        for (const auto& slot : opt.slots()) {
            w.add_f32(strf("%s.m.%s", prefix, slot.name.c_str()),
                      {static_cast<int64_t>(slot.m.size())}, slot.m.data());
            w.add_f32(strf("%s.v.%s", prefix, slot.name.c_str()),
                      {static_cast<int64_t>(slot.v.size())}, slot.v.data());
        }
    };
    dump_adam("adam_g", st.opt_g);
    dump_adam("adam_d", st.opt_d);

    auto rng_state = st.rng.state();
    std::vector<int64_t> rng_words;
    for (uint64_t word : rng_state) rng_words.push_back(static_cast<int64_t>(word));
    w.add_i64("rng", rng_words);

    w.add_i64("data.perm", st.dataset.permutation());
    w.add_i64("data.cursor", {st.dataset.cursor()});

    w.write(path);
}

TrainState load_checkpoint(const std::string& path, CheckpointLoad mode) {
    ArchiveReader r(path);
    TrainConfig cfg = config_parse(r.bytes("config"));
    cfg.validate();
    if (cfg.threads > 0) set_num_threads(static_cast<int>(cfg.threads));

    TrainState st;
    st.cfg = cfg;
    st.rng = Rng(cfg.seed);
    st.gen = GeneratorParams<float>::init(gen_config_of(cfg), st.rng);
    st.disc = DiscriminatorParams<float>::init(disc_config_of(cfg), st.rng);
    st.opt_g = Adam(AdamConfig{cfg.lr_g, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    st.opt_d = Adam(AdamConfig{cfg.lr_d, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});

    auto restore = [&](const std::string& name, Tensor<float>& t) {
        if (!r.has(name)) throw IoError(strf("checkpoint: missing tensor '%s'", name.c_str()));
        if (r.shape(name) != t.shape())
            throw IoError(strf("checkpoint: tensor '%s' has shape %s, expected %s", name.c_str(),
                               shape_str(r.shape(name)).c_str(), shape_str(t.shape()).c_str()));
        std::vector<float> vals = r.f32(name);
        std::copy(vals.begin(), vals.end(), t.data());
    };
    st.gen.visit_params(restore);
    st.disc.visit_params(restore);
    st.disc.visit_state(restore);

    st.step = r.i64("step").at(0);

    auto load_adam = [&](const char* prefix, Adam& opt,
                         const std::vector<std::pair<std::string, Tensor<float>*>>& params) {
        opt.set_t(r.i64(strf("%s.t", prefix)).at(0));
        if (opt.t() == 0) return;  // optimizer never stepped; slots lazily created
        for (const auto& [name, t] : params) {
            Adam::Slot slot;
            slot.name = name;
            std::string mk = strf("%s.m.%s", prefix, name.c_str());
            std::string vk = strf("%s.v.%s", prefix, name.c_str());
            if (!r.has(mk) || !r.has(vk))
                throw IoError(strf("checkpoint: missing optimizer state for '%s'", name.c_str()));
            slot.m = r.f32(mk);
            slot.v = r.f32(vk);
            if (static_cast<int64_t>(slot.m.size()) != t->size() ||
                static_cast<int64_t>(slot.v.size()) != t->size())
                throw IoError(strf("checkpoint: optimizer state size mismatch for '%s'",
                                   name.c_str()));
            opt.slots().push_back(std::move(slot));
        }
    };
    load_adam("adam_g", st.opt_g, st.gen_param_list());
    load_adam("adam_d", st.opt_d, st.disc_param_list());

    std::vector<int64_t> rng_words = r.i64("rng");
    if (rng_words.size() != 4) throw IoError("checkpoint: bad rng state");
    std::array<uint64_t, 4> rs;
    for (size_t i = 0; i < 4; ++i) rs[i] = static_cast<uint64_t>(rng_words[i]);
    st.rng.set_state(rs);

    if (mode == CheckpointLoad::kFull) {
        st.dataset = dataset_of(cfg);
        st.dataset.set_shuffle_state(r.i64("data.perm"), r.i64("data.cursor").at(0));
    }
    return st;
}

}  // namespace hvox
