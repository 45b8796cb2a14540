#include "hvox/gradcheck_suite.hpp"

#include <cmath>
#include <map>

#include "hvox/discriminator.hpp"
#include "hvox/generator.hpp"
#include "hvox/losses.hpp"
#include "hvox/tensor.hpp"

namespace hvox {

namespace {

using Td = Tensor<double>;
using Fn = std::function<Td(const Td&)>;

class Suite {
public:
    explicit Suite(const GradCheckOptions& opts) : opts_(opts), rng_(opts.seed) {}

    Rng& rng() { return rng_; }
    int instances() const { return opts_.instances; }

    void check(const std::string& op, const Fn& f, const Td& x) {
        GradCheckEntry& e = entry(op);
        // Elements whose FD window straddles an activation kink are re-probed
        // at h/100; a corrupted adjoint fails at any step size.
        GradCheckResult<double> res =
            grad_check<double>(f, x, opts_.h, opts_.tol, opts_.h / 100);
        if (!res.finite) {
            e.pass = false;
            e.note = res.note;
            e.max_rel_err = std::numeric_limits<double>::infinity();
            return;
        }
        if (res.max_rel_err > e.max_rel_err) e.max_rel_err = res.max_rel_err;
        e.pass = e.pass && e.max_rel_err <= opts_.tol;
    }

    std::vector<GradCheckEntry> take() {
        std::vector<GradCheckEntry> out;
        for (const std::string& name : order_) out.push_back(entries_[name]);
        return out;
    }

private:
    GradCheckEntry& entry(const std::string& op) {
        auto it = entries_.find(op);
        if (it == entries_.end()) {
            order_.push_back(op);
            GradCheckEntry e;
            e.op = op;
            e.pass = true;
            it = entries_.emplace(op, e).first;
        }
        return it->second;
    }

    GradCheckOptions opts_;
    Rng rng_;
    std::map<std::string, GradCheckEntry> entries_;
    std::vector<std::string> order_;
};

Shape small_shape(Rng& rng, int rank) {
    Shape s;
    for (int d = 0; d < rank; ++d) s.push_back(2 + rng.index(3));
    return s;
}

Td uniform_t(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
    return Td::uniform(std::move(shape), rng, lo, hi);
}

void check_elementwise(Suite& s) {
    for (int i = 0; i < s.instances(); ++i) {
        Shape shape = small_shape(s.rng(), 1 + static_cast<int>(s.rng().index(3)));
        Td a = uniform_t(s.rng(), shape);
        Td b = uniform_t(s.rng(), shape);
        Td bpos = uniform_t(s.rng(), shape, 0.5, 1.5);
        bool first_arg = (i % 2 == 0);

        s.check("add", [&](const Td& x) { return sum_all(first_arg ? add(x, b) : add(a, x)); },
                first_arg ? a : b);
        s.check("sub", [&](const Td& x) { return sum_all(first_arg ? sub(x, b) : sub(a, x)); },
                first_arg ? a : b);
        s.check("mul", [&](const Td& x) { return sum_all(first_arg ? mul(x, b) : mul(a, x)); },
                first_arg ? a : b);
        s.check("div",
                [&](const Td& x) { return sum_all(first_arg ? div(x, bpos) : div(a, x)); },
                first_arg ? a : bpos);
        s.check("add_scalar", [&](const Td& x) { return sum_all(add_scalar(x, 0.7)); }, a);
        s.check("scalar_mul", [&](const Td& x) { return sum_all(mul_scalar(x, -1.3)); }, a);
        s.check("leaky_relu", [&](const Td& x) { return sum_all(leaky_relu(x, 0.2)); }, a);
        s.check("tanh", [&](const Td& x) { return sum_all(tanh(x)); }, a);
        s.check("sqrt", [&](const Td& x) { return sum_all(sqrt(x)); },
                uniform_t(s.rng(), shape, 0.5, 2.0));
        s.check("softplus", [&](const Td& x) { return sum_all(softplus(x)); },
                uniform_t(s.rng(), shape, -4, 4));
        // keep FD points away from the clamp kink
        Td c = uniform_t(s.rng(), shape, 0.5, 2.0);
        for (int64_t j = 0; j < c.size(); ++j)
            if (std::abs(c.data()[j] - 1.0) < 1e-3) c.data()[j] += 0.01;
        s.check("clamp_min", [&](const Td& x) { return sum_all(clamp_min(x, 1.0)); }, c);
    }
}

void check_structure(Suite& s) {
    for (int i = 0; i < s.instances(); ++i) {
        Td a = uniform_t(s.rng(), {2, 6});
        s.check("reshape", [&](const Td& x) { return mean_all(reshape(x, {3, 4})); }, a);

        Td c0 = uniform_t(s.rng(), {2, 3});
        Td c1 = uniform_t(s.rng(), {2, 2});
        bool first_arg = (i % 2 == 0);
        s.check("concat",
                [&](const Td& x) {
                    std::vector<Td> parts = first_arg ? std::vector<Td>{x, c1}
                                                      : std::vector<Td>{c0, x};
                    return mean_all(concat(parts, 1));
                },
                first_arg ? c0 : c1);

        Td ma = uniform_t(s.rng(), {3, 4});
        Td mb = uniform_t(s.rng(), {4, 2});
        s.check("matmul",
                [&](const Td& x) { return mean_all(first_arg ? matmul(x, mb) : matmul(ma, x)); },
                first_arg ? ma : mb);

        Td bias = uniform_t(s.rng(), {4});
        Td xb = uniform_t(s.rng(), {3, 4});
        s.check("add_bias",
                [&](const Td& x) {
                    return mean_all(first_arg ? add_bias(x, bias) : add_bias(xb, x));
                },
                first_arg ? xb : bias);

        s.check("tile_batch", [&](const Td& x) { return mean_all(tile_batch(x, 3)); },
                uniform_t(s.rng(), {2, 3}));
        s.check("sum_all", [&](const Td& x) { return sum_all(x); }, a);
        s.check("mean_all", [&](const Td& x) { return mean_all(x); }, a);

        Td r = uniform_t(s.rng(), {2, 3, 4});
        std::vector<int> axes = (i % 2 == 0) ? std::vector<int>{1} : std::vector<int>{0, 2};
        s.check("mean", [&](const Td& x) { return sum_all(reduce_mean(x, axes)); }, r);
        s.check("reduce_sum", [&](const Td& x) { return mean_all(reduce_sum(x, axes)); }, r);
        s.check("std", [&](const Td& x) { return sum_all(std_dev(x, axes, 1e-5)); }, r);

        Shape target = {2, 3, 4};
        Td src = uniform_t(s.rng(), {3});
        s.check("broadcast_axes",
                [&](const Td& x) { return mean_all(mul(broadcast_axes(x, target, {0, 2}),
                                                       broadcast_axes(x, target, {0, 2}))); },
                src);

        s.check("upsample_nearest",
                [&](const Td& x) {
                    Td up = upsample_nearest(x, 2, {1, 2});
                    return sum_all(mul(up, up));
                },
                uniform_t(s.rng(), {1, 3, 3, 2}));
    }
}

void check_convolutions(Suite& s) {
    for (int i = 0; i < s.instances(); ++i) {
        int stride = (i % 2 == 0) ? 1 : 2;
        Td in2 = uniform_t(s.rng(), {1, 4, 4, 2});
        Td w2 = uniform_t(s.rng(), {3, 3, 2, 3}, -0.5, 0.5);
        Td b2 = uniform_t(s.rng(), {3});
        int which = i % 3;
        s.check("conv2d",
                [&](const Td& x) {
                    Td out = conv2d(which == 0 ? x : in2, which == 1 ? x : w2,
                                    which == 2 ? x : b2, stride, 1);
                    return sum_all(mul(out, out));
                },
                which == 0 ? in2 : (which == 1 ? w2 : b2));

        Td in3 = uniform_t(s.rng(), {1, 3, 3, 3, 2});
        Td w3 = uniform_t(s.rng(), {3, 3, 3, 2, 2}, -0.5, 0.5);
        Td b3 = uniform_t(s.rng(), {2});
        s.check("conv3d",
                [&](const Td& x) {
                    Td out = conv3d(which == 0 ? x : in3, which == 1 ? x : w3,
                                    which == 2 ? x : b3, 1, 1);
                    return sum_all(mul(out, out));
                },
                which == 0 ? in3 : (which == 1 ? w3 : b3));
    }
}

void check_geometry(Suite& s) {
    for (int i = 0; i < s.instances(); ++i) {
        Td vol = uniform_t(s.rng(), {1, 4, 4, 4, 2});
        Td grid(Shape{4, 4, 4, 3});
        for (int64_t j = 0; j < grid.size(); ++j)
            grid.data()[j] = s.rng().uniform(0.2, 2.8);
        s.check("trilinear_resample",
                [&](const Td& x) {
                    Td out = trilinear_resample(x, grid);
                    return sum_all(mul(out, out));
                },
                vol);

        Pose pose;
        pose.azimuth_deg = s.rng().uniform(-90, 90);
        pose.elevation_deg = s.rng().uniform(-30, 30);
        pose.scale = s.rng().uniform(0.9, 1.1);
        s.check("rigid_transform",
                [&](const Td& x) {
                    Td out = rigid_transform(x, pose);
                    return sum_all(mul(out, out));
                },
                vol);
    }
}

void check_layers(Suite& s) {
    for (int i = 0; i < s.instances(); ++i) {
        Td x = uniform_t(s.rng(), {2, 3, 3, 4});
        s.check("instance_stats",
                [&](const Td& t) {
                    auto st = instance_stats(t);
                    return add(mean_all(st.mu), mean_all(mul(st.sigma, st.sigma)));
                },
                x);
        Td gamma = uniform_t(s.rng(), {2, 4}, 0.5, 1.5);
        Td beta = uniform_t(s.rng(), {2, 4}, -0.5, 0.5);
        int which = i % 3;
        s.check("adain",
                [&](const Td& t) {
                    StyleParams<double> sp{which == 1 ? t : gamma, which == 2 ? t : beta};
                    Td out = adain(which == 0 ? t : x, sp);
                    return sum_all(mul(out, out));
                },
                which == 0 ? x : (which == 1 ? gamma : beta));
        s.check("instance_norm",
                [&](const Td& t) {
                    Td out = instance_norm(t);
                    return sum_all(mul(out, out));
                },
                x);

        Rng init_rng(s.rng().next_u64());
        SiteMlp<double> site = make_site_mlp<double>(4, 8, 5, init_rng, 0.3);
        Td z = uniform_t(s.rng(), {2, 4});
        s.check("map_style",
                [&](const Td& t) {
                    StyleParams<double> sp = map_style(t, site);
                    return add(sum_all(mul(sp.gamma, sp.gamma)), sum_all(mul(sp.beta, sp.beta)));
                },
                z);

        Td w = uniform_t(s.rng(), {3, 3, 2, 4}, -0.5, 0.5);
        SpectralNormState<double> sn;
        Rng sn_rng(s.rng().next_u64());
        sn.init(4, sn_rng);
        for (int warm = 0; warm < 8; ++warm) spectral_normalize(w, sn, true);
        s.check("spectral_normalize",
                [&](const Td& t) {
                    Td out = spectral_normalize(t, sn, false);
                    return sum_all(mul(out, out));
                },
                w);

        Td vol = uniform_t(s.rng(), {1, 3, 3, 4, 2});
        ConvParam<double> proj{uniform_t(s.rng(), {8, 3}, -0.5, 0.5), uniform_t(s.rng(), {3})};
        s.check("project",
                [&](const Td& t) {
                    Td out = project(t, proj);
                    return sum_all(mul(out, out));
                },
                vol);
    }
}

void check_losses(Suite& s) {
    for (int i = 0; i < s.instances(); ++i) {
        Td lr = uniform_t(s.rng(), {4}, -3, 3);
        Td lf = uniform_t(s.rng(), {4}, -3, 3);
        bool first_arg = (i % 2 == 0);
        s.check("gan_loss_d",
                [&](const Td& x) { return first_arg ? gan_loss_d(x, lf) : gan_loss_d(lr, x); },
                first_arg ? lr : lf);
        s.check("gan_loss_g", [&](const Td& x) { return gan_loss_g(x); }, lf);

        Td z = uniform_t(s.rng(), {3, 5});
        Td zh = uniform_t(s.rng(), {3, 5});
        s.check("identity_loss",
                [&](const Td& x) {
                    return first_arg ? identity_loss(x, zh) : identity_loss(z, x);
                },
                first_arg ? z : zh);

        Td l0 = uniform_t(s.rng(), {4}, -2, 2);
        Td l1 = uniform_t(s.rng(), {4}, -2, 2);
        s.check("style_loss_g",
                [&](const Td& x) { return style_loss_g<double>({x, l0, l1}).total; }, lf);

        LossWeights<double> weights{0.7, 1.3};
        s.check("total_loss_g",
                [&](const Td& x) {
                    Td gan = mean_all(mul(x, x));
                    Td ident = sum_all(x);
                    Td style = mean_all(x);
                    return total_loss_g(gan, ident, style, weights);
                },
                uniform_t(s.rng(), {4}));
    }
}

struct TinyModels {
    GeneratorParams<double> gen;
    DiscriminatorParams<double> disc;

    static TinyModels make(Rng& rng) {
        GeneratorConfig gc;
        gc.resolution = 32;
        gc.latent_dim = 4;
        gc.base_channels = 16;
        gc.mapping_hidden = 8;
        DiscriminatorConfig dc;
        dc.resolution = 32;
        dc.latent_dim = 4;
        dc.base_channels = 4;
        dc.style_hidden = 8;
        TinyModels m{GeneratorParams<double>::init(gc, rng),
                     DiscriminatorParams<double>::init(dc, rng)};
        return m;
    }
};

void check_end_to_end(Suite& s) {
    Rng model_rng(s.rng().next_u64());
    TinyModels m = TinyModels::make(model_rng);
    LossWeights<double> weights{1.0, 1.0};

    auto loss_for = [&](const Td& z1, const Td& z2, const std::vector<Pose>& poses) {
        Td img = generate(z1, z2, poses, m.gen, PoseMode::kTraining);
        auto out = discriminate(img, m.disc, /*update_sn=*/false);
        Td gan = gan_loss_g(out.logit);
        Td ident = identity_loss(z1, out.z_hat);
        StyleLoss<double> style = style_loss_g(out.style_logits);
        return total_loss_g(gan, ident, style.total, weights);
    };

    for (int i = 0; i < s.instances(); ++i) {
        Td z1 = uniform_t(s.rng(), {1, 4});
        Td z2 = uniform_t(s.rng(), {1, 4});
        std::vector<Pose> poses(1);
        poses[0].azimuth_deg = s.rng().uniform(-60, 60);
        poses[0].elevation_deg = s.rng().uniform(-20, 20);
        poses[0].scale = s.rng().uniform(0.95, 1.05);

        s.check("generator_end_to_end",
                [&](const Td& x) { return loss_for(x, z2, poses); }, z1);
        if (i == 0) {
            Td orig_const = m.gen.constant;
            s.check("generator_end_to_end",
                    [&](const Td& x) {
                        m.gen.constant = x;
                        Td loss = loss_for(z1, z2, poses);
                        m.gen.constant = orig_const;
                        return loss;
                    },
                    orig_const);
            Td orig_w = m.gen.blocks_3d[1].w;
            s.check("generator_end_to_end",
                    [&](const Td& x) {
                        m.gen.blocks_3d[1].w = x;
                        Td loss = loss_for(z1, z2, poses);
                        m.gen.blocks_3d[1].w = orig_w;
                        return loss;
                    },
                    orig_w);
        }

        Td img = uniform_t(s.rng(), {1, 32, 32, 3}, -0.9, 0.9);
        s.check("discriminator_logit",
                [&](const Td& x) {
                    auto out = discriminate(x, m.disc, false);
                    return mean_all(out.logit);
                },
                img);
        s.check("encode",
                [&](const Td& x) {
                    Td zh = encode(x, m.disc);
                    return sum_all(mul(zh, zh));
                },
                img);
    }
}

// Test fixture: tanh with a deliberately wrong adjoint (factor 1.05).
void check_fault_fixture(Suite& s) {
    auto corrupted_tanh = [](const Td& a) {
        Td out(a.shape(), a.values());
        for (auto& v : out.values()) v = std::tanh(v);
        if (recording_active<double>() && a.tracked()) {
            auto an = a.node(), on = out.node();
            Tape<double>::current()->record({an}, on, [an, on] {
                for (size_t i = 0; i < on->adjoint.size(); ++i) {
                    double y = on->value[i];
                    an->adjoint[i] += on->adjoint[i] * (1.0 - y * y) * 1.05;
                }
            });
        }
        return out;
    };
    Td x = uniform_t(s.rng(), {8});
    s.check("corrupted_adjoint_fixture",
            [&](const Td& t) { return sum_all(corrupted_tanh(t)); }, x);
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(const GradCheckOptions& opts) {
    Suite s(opts);
    check_elementwise(s);
    check_structure(s);
    check_convolutions(s);
    check_geometry(s);
    check_layers(s);
    check_losses(s);
    check_end_to_end(s);
    if (opts.inject_fault) check_fault_fixture(s);
    return s.take();
}

bool all_passed(const std::vector<GradCheckEntry>& entries) {
    for (const auto& e : entries)
        if (!e.pass) return false;
    return !entries.empty();
}

}  // namespace hvox
