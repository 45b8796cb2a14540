#include "hvox/data.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

namespace hvox {

namespace fs = std::filesystem;

namespace {

uint8_t to_u8(float v) {
    float x = (v + 1.0f) * 127.5f;
    if (x < 0.0f) x = 0.0f;
    if (x > 255.0f) x = 255.0f;
    return static_cast<uint8_t>(std::lround(x));
}

float from_u8(uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

void check_image(const Tensor<float>& image, const char* op) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ShapeError(strf("%s: image %s, expected [H,W,3]", op,
                              shape_str(image.shape()).c_str()));
}

}  // namespace

Tensor<float> decode_png(const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw IoError(strf("decode_png: %s: %s", path.c_str(), img.message));
    img.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw IoError(strf("decode_png: %s: %s", path.c_str(), msg.c_str()));
    }
    const int64_t h = img.height, w = img.width;
    Tensor<float> out(Shape{h, w, 3});
    float* p = out.data();
    for (int64_t i = 0; i < h * w * 3; ++i) p[i] = from_u8(buf[static_cast<size_t>(i)]);
    return out;
}

void write_png(const Tensor<float>& image, const std::string& path) {
    check_image(image, "write_png");
    const int64_t h = image.dim(0), w = image.dim(1);
    std::vector<uint8_t> buf(static_cast<size_t>(h * w * 3));
    const float* p = image.data();
    for (int64_t i = 0; i < h * w * 3; ++i) buf[static_cast<size_t>(i)] = to_u8(p[i]);

    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = PNG_FORMAT_RGB;

    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    if (!png_image_write_to_file(&img, tmp.string().c_str(), 0, buf.data(), 0, nullptr))
        throw IoError(strf("write_png: %s: %s", path.c_str(), img.message));
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError(strf("write_png: rename to %s failed: %s", path.c_str(),
                               ec.message().c_str()));
}

void write_grid(const std::vector<Tensor<float>>& images, int cols, const std::string& path) {
    if (images.empty()) throw ValueError("write_grid: no images");
    if (cols < 1) throw ValueError("write_grid: cols < 1");
    check_image(images[0], "write_grid");
    const int64_t h = images[0].dim(0), w = images[0].dim(1);
    for (const auto& im : images) {
        check_image(im, "write_grid");
        if (im.dim(0) != h || im.dim(1) != w)
            throw ShapeError(strf("write_grid: mixed image sizes %s vs %s",
                                  shape_str(images[0].shape()).c_str(),
                                  shape_str(im.shape()).c_str()));
    }
    const int sep = 2;
    const int64_t n = static_cast<int64_t>(images.size());
    const int64_t rows = (n + cols - 1) / cols;
    const int64_t gh = rows * h + (rows - 1) * sep;
    const int64_t gw = cols * w + (cols - 1) * sep;
    Tensor<float> grid = Tensor<float>::full({gh, gw, 3}, 1.0f);
    float* g = grid.data();
    for (int64_t i = 0; i < n; ++i) {
        const int64_t r0 = (i / cols) * (h + sep);
        const int64_t c0 = (i % cols) * (w + sep);
        const float* src = images[static_cast<size_t>(i)].data();
        for (int64_t r = 0; r < h; ++r)
            std::memcpy(g + ((r0 + r) * gw + c0) * 3, src + r * w * 3, sizeof(float) * w * 3);
    }
    write_png(grid, path);
}

Tensor<float> center_crop_resize(const Tensor<float>& image, int resolution) {
    check_image(image, "center_crop_resize");
    if (resolution < 1) throw ValueError("center_crop_resize: resolution < 1");
    const int64_t h = image.dim(0), w = image.dim(1);
    const int64_t side = std::min(h, w);
    const int64_t r0 = (h - side) / 2, c0 = (w - side) / 2;
    const float* src = image.data();

    Tensor<float> out(Shape{resolution, resolution, 3});
    float* dst = out.data();
    const double scale = static_cast<double>(side) / resolution;
    for (int64_t r = 0; r < resolution; ++r) {
        double sy = (static_cast<double>(r) + 0.5) * scale - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(side - 1));
        const int64_t y0 = static_cast<int64_t>(sy);
        const int64_t y1 = std::min(y0 + 1, side - 1);
        const float fy = static_cast<float>(sy - static_cast<double>(y0));
        for (int64_t c = 0; c < resolution; ++c) {
            double sx = (static_cast<double>(c) + 0.5) * scale - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(side - 1));
            const int64_t x0 = static_cast<int64_t>(sx);
            const int64_t x1 = std::min(x0 + 1, side - 1);
            const float fx = static_cast<float>(sx - static_cast<double>(x0));
            for (int64_t ch = 0; ch < 3; ++ch) {
                auto px = [&](int64_t y, int64_t x) {
                    return src[((r0 + y) * w + (c0 + x)) * 3 + ch];
                };
                float top = px(y0, x0) * (1.0f - fx) + px(y0, x1) * fx;
                float bot = px(y1, x0) * (1.0f - fx) + px(y1, x1) * fx;
                dst[(r * resolution + c) * 3 + ch] = top * (1.0f - fy) + bot * fy;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic renderer

void SyntheticSpec::validate() const {
    if (palette < 1) throw ValueError("synthetic: palette < 1");
    if (size < 8) throw ValueError("synthetic: size < 8");
    if (bg_min > bg_max) throw ValueError("synthetic: bg shade range inverted");
    if (azimuth_min > azimuth_max) throw ValueError("synthetic: azimuth range inverted");
}

namespace {

struct Box {
    double cx, cy, cz;  // center
    double hx, hy, hz;  // half extents
};

}  // namespace

std::pair<Tensor<float>, double> synthesize_item(const SyntheticSpec& spec, int64_t index) {
    spec.validate();
    Rng rng(spec.seed ^ (0x9E3779B97F4A7C15ull * static_cast<uint64_t>(index + 1)));

    // palette derived from the spec seed alone
    Rng prng(spec.seed * 0x632BE59BD9B4E019ull + 0x9E3779B97F4A7C15ull);
    std::vector<std::array<double, 3>> palette;
    for (int i = 0; i < spec.palette; ++i) {
        double hue = (static_cast<double>(i) + prng.uniform(0.1, 0.9)) / spec.palette * 6.0;
        double sat = prng.uniform(0.55, 0.95), val = prng.uniform(0.55, 0.95);
        double c = val * sat, x = c * (1.0 - std::abs(std::fmod(hue, 2.0) - 1.0)), m = val - c;
        double r = 0, g = 0, b = 0;
        switch (static_cast<int>(hue) % 6) {
            case 0: r = c, g = x; break;
            case 1: r = x, g = c; break;
            case 2: g = c, b = x; break;
            case 3: g = x, b = c; break;
            case 4: r = x, b = c; break;
            default: r = c, b = x; break;
        }
        palette.push_back({r + m, g + m, b + m});
    }

    const double azimuth = rng.uniform(spec.azimuth_min, spec.azimuth_max);
    const auto color = palette[static_cast<size_t>(rng.index(spec.palette))];
    const double bg = rng.uniform(spec.bg_min, spec.bg_max);

    std::vector<Box> boxes;
    if (spec.primitive == SyntheticSpec::Primitive::kCube) {
        boxes.push_back({0, 0, 0, 0.55, 0.55, 0.55});
    } else {
        boxes.push_back({0, -0.30, 0, 0.55, 0.14, 0.50});   // seat
        boxes.push_back({0, 0.28, -0.41, 0.55, 0.44, 0.09});  // back
    }

    const double a = azimuth * (M_PI / 180.0);
    const double ca = std::cos(a), sa = std::sin(a);
    // light in world space; rotating the object changes face brightness
    const double lx = 0.37, ly = 0.61, lz = 0.70;

    const int n = spec.size;
    Tensor<float> img(Shape{n, n, 3});
    float* px = img.data();
    const double extent = 1.25;
    for (int r = 0; r < n; ++r) {
        const double wy = extent - (static_cast<double>(r) + 0.5) / n * 2.0 * extent;
        for (int c = 0; c < n; ++c) {
            const double wx = (static_cast<double>(c) + 0.5) / n * 2.0 * extent - extent;
            // camera ray (wx, wy, 10) -> (0,0,-1), rotated into the object
            // frame by the inverse azimuth
            const double orig[3] = {ca * wx - sa * 10.0, wy, sa * wx + ca * 10.0};
            const double dir[3] = {sa, 0.0, -ca};
            double best_t = 1e30;
            int hit = -1;
            double hit_nx = 0, hit_ny = 0, hit_nz = 0;
            for (size_t bi = 0; bi < boxes.size(); ++bi) {
                const Box& box = boxes[bi];
                double tmin = -1e30, tmax = 1e30;
                bool ok = true;
                const double lo[3] = {box.cx - box.hx, box.cy - box.hy, box.cz - box.hz};
                const double hi[3] = {box.cx + box.hx, box.cy + box.hy, box.cz + box.hz};
                int enter_axis = -1;
                double enter_sign = 0;
                for (int ax = 0; ax < 3 && ok; ++ax) {
                    if (std::abs(dir[ax]) < 1e-12) {
                        if (orig[ax] < lo[ax] || orig[ax] > hi[ax]) ok = false;
                        continue;
                    }
                    double t0 = (lo[ax] - orig[ax]) / dir[ax];
                    double t1 = (hi[ax] - orig[ax]) / dir[ax];
                    double s = -1;
                    if (t0 > t1) {
                        std::swap(t0, t1);
                        s = 1;
                    }
                    if (t0 > tmin) {
                        tmin = t0;
                        enter_axis = ax;
                        enter_sign = s;
                    }
                    tmax = std::min(tmax, t1);
                    if (tmin > tmax) ok = false;
                }
                if (ok && tmax >= 0 && tmin < best_t && enter_axis >= 0) {
                    best_t = tmin;
                    hit = static_cast<int>(bi);
                    // object-space normal of the entry face
                    double nox = enter_axis == 0 ? enter_sign : 0;
                    double noy = enter_axis == 1 ? enter_sign : 0;
                    double noz = enter_axis == 2 ? enter_sign : 0;
                    // rotate back to world: R_y(a)
                    hit_nx = ca * nox + sa * noz;
                    hit_ny = noy;
                    hit_nz = -sa * nox + ca * noz;
                }
            }
            float* out = px + (static_cast<int64_t>(r) * n + c) * 3;
            if (hit < 0) {
                out[0] = out[1] = out[2] = static_cast<float>(bg);
            } else {
                const double lambert = std::max(0.0, hit_nx * lx + hit_ny * ly + hit_nz * lz);
                const double shade = 0.35 + 0.65 * lambert;
                for (int ch = 0; ch < 3; ++ch) {
                    double v = 2.0 * color[static_cast<size_t>(ch)] * shade - 1.0;
                    out[ch] = static_cast<float>(std::clamp(v, -1.0, 1.0));
                }
            }
        }
    }
    return {img, azimuth};
}

// ---------------------------------------------------------------------------
// Dataset

Dataset Dataset::folder(const std::string& path, int resolution) {
    if (!fs::is_directory(path)) throw IoError(strf("dataset: %s is not a directory", path.c_str()));
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());

    Dataset ds;
    ds.resolution_ = resolution;
    for (const auto& f : files) {
        try {
            ds.items_.push_back(center_crop_resize(decode_png(f), resolution));
        } catch (const IoError& e) {
            std::fprintf(stderr, "dataset: skipping %s (%s)\n", f.c_str(), e.what());
        }
    }
    ds.count_ = static_cast<int64_t>(ds.items_.size());
    if (ds.count_ == 0) throw IoError(strf("dataset: no decodable PNG files in %s", path.c_str()));
    return ds;
}

Dataset Dataset::synthetic(const SyntheticSpec& spec, int64_t count) {
    spec.validate();
    if (count < 1) throw ValueError("dataset: synthetic count < 1");
    Dataset ds;
    ds.synthetic_ = true;
    ds.spec_ = spec;
    ds.count_ = count;
    ds.resolution_ = spec.size;
    return ds;
}

Tensor<float> Dataset::item(int64_t i) const {
    if (i < 0 || i >= count_)
        throw ValueError(strf("dataset: index %lld out of range (%lld items)",
                              static_cast<long long>(i), static_cast<long long>(count_)));
    if (synthetic_) return synthesize_item(spec_, i).first;
    return items_[static_cast<size_t>(i)];
}

Tensor<float> Dataset::next_batch(Rng& rng, int64_t n) {
    if (n < 1) throw ValueError("next_batch: n < 1");
    if (count_ == 0) throw ValueError("next_batch: empty dataset");

    std::vector<int64_t> picks;
    picks.reserve(static_cast<size_t>(n));
    if (n > count_) {
        if (!warned_replacement_) {
            std::fprintf(stderr,
                         "dataset: batch %lld exceeds dataset size %lld, sampling with replacement\n",
                         static_cast<long long>(n), static_cast<long long>(count_));
            warned_replacement_ = true;
        }
        for (int64_t i = 0; i < n; ++i) picks.push_back(rng.index(count_));
    } else {
        while (static_cast<int64_t>(picks.size()) < n) {
            if (cursor_ >= static_cast<int64_t>(perm_.size())) {
                perm_.resize(static_cast<size_t>(count_));
                for (int64_t i = 0; i < count_; ++i) perm_[static_cast<size_t>(i)] = i;
                for (int64_t i = count_ - 1; i > 0; --i)
                    std::swap(perm_[static_cast<size_t>(i)],
                              perm_[static_cast<size_t>(rng.index(i + 1))]);
                cursor_ = 0;
            }
            picks.push_back(perm_[static_cast<size_t>(cursor_++)]);
        }
    }

    Tensor<float> first = item(picks[0]);
    Shape bshape = {n, first.dim(0), first.dim(1), first.dim(2)};
    Tensor<float> batch(bshape);
    const int64_t block = first.size();
    std::memcpy(batch.data(), first.data(), sizeof(float) * block);
    for (int64_t i = 1; i < n; ++i) {
        Tensor<float> im = item(picks[static_cast<size_t>(i)]);
        std::memcpy(batch.data() + i * block, im.data(), sizeof(float) * block);
    }
    return batch;
}

void Dataset::set_shuffle_state(std::vector<int64_t> perm, int64_t cursor) {
    if (cursor < 0 || cursor > static_cast<int64_t>(perm.size()))
        throw ValueError("dataset: invalid shuffle cursor");
    for (int64_t idx : perm)
        if (idx < 0 || idx >= count_) throw ValueError("dataset: invalid shuffle permutation");
    perm_ = std::move(perm);
    cursor_ = cursor;
}

}  // namespace hvox
