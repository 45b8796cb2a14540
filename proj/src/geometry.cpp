#include "hvox/geometry.hpp"

#include <cmath>

namespace hvox {

void Pose::validate() const {
    if (!(scale > 0)) throw ValueError(strf("pose: scale %g must be positive", scale));
    if (!std::isfinite(azimuth_deg) || !std::isfinite(elevation_deg))
        throw ValueError("pose: angles must be finite");
    for (double t : translation)
        if (!std::isfinite(t)) throw ValueError("pose: translation must be finite");
}

void PoseRange::validate() const {
    if (azimuth_min > azimuth_max)
        throw ValueError(strf("pose range: azimuth %g > %g", azimuth_min, azimuth_max));
    if (elevation_min > elevation_max)
        throw ValueError(strf("pose range: elevation %g > %g", elevation_min, elevation_max));
    if (scale_min > scale_max || scale_min <= 0)
        throw ValueError(strf("pose range: scale [%g, %g] invalid", scale_min, scale_max));
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m[i * 3 + j] = m[j * 3 + i];
    return r;
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * o.m[k * 3 + j];
            r.m[i * 3 + j] = acc;
        }
    return r;
}

std::array<double, 3> Mat3::apply(const std::array<double, 3>& v) const {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 rotation_matrix(const Pose& pose) {
    pose.validate();
    const double a = pose.azimuth_deg * (M_PI / 180.0);
    const double e = pose.elevation_deg * (M_PI / 180.0);
    const double ca = std::cos(a), sa = std::sin(a);
    const double ce = std::cos(e), se = std::sin(e);
    Mat3 ry;
    ry.m = {ca, 0, sa, 0, 1, 0, -sa, 0, ca};
    Mat3 rx;
    rx.m = {1, 0, 0, 0, ce, -se, 0, se, ce};
    return ry * rx;
}

template <typename T>
Tensor<T> build_grid(int64_t w, int64_t h, int64_t d, const Pose& pose) {
    if (w < 2 || h < 2 || d < 2)
        throw ShapeError(strf("build_grid: extents (%lld,%lld,%lld) must be >= 2",
                              static_cast<long long>(w), static_cast<long long>(h),
                              static_cast<long long>(d)));
    pose.validate();
    const Mat3 rt = rotation_matrix(pose).transposed();
    const double cx = static_cast<double>(w - 1) / 2.0;
    const double cy = static_cast<double>(h - 1) / 2.0;
    const double cz = static_cast<double>(d - 1) / 2.0;
    const double inv_scale = 1.0 / pose.scale;
    const auto& t = pose.translation;

    Tensor<T> grid(Shape{w, h, d, 3});
    T* g = grid.data();
    int64_t i = 0;
    for (int64_t x = 0; x < w; ++x)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t z = 0; z < d; ++z) {
                const std::array<double, 3> q = {static_cast<double>(x) - cx - t[0],
                                                 static_cast<double>(y) - cy - t[1],
                                                 static_cast<double>(z) - cz - t[2]};
                const std::array<double, 3> s = rt.apply(q);
                g[i++] = static_cast<T>(s[0] * inv_scale + cx);
                g[i++] = static_cast<T>(s[1] * inv_scale + cy);
                g[i++] = static_cast<T>(s[2] * inv_scale + cz);
            }
    return grid;
}

template <typename T>
Tensor<T> trilinear_resample(const Tensor<T>& volume, const Tensor<T>& grid) {
    if (volume.rank() != 5)
        throw ShapeError(strf("trilinear_resample: volume %s, expected [N,W,H,D,C]",
                              shape_str(volume.shape()).c_str()));
    const int64_t N = volume.dim(0), W = volume.dim(1), H = volume.dim(2), D = volume.dim(3),
                  C = volume.dim(4);
    bool per_item;
    if (grid.rank() == 4) {
        per_item = false;
        if (grid.dim(0) != W || grid.dim(1) != H || grid.dim(2) != D || grid.dim(3) != 3)
            throw ShapeError(strf("trilinear_resample: grid %s does not match volume %s",
                                  shape_str(grid.shape()).c_str(),
                                  shape_str(volume.shape()).c_str()));
    } else if (grid.rank() == 5) {
        per_item = true;
        if (grid.dim(0) != N || grid.dim(1) != W || grid.dim(2) != H || grid.dim(3) != D ||
            grid.dim(4) != 3)
            throw ShapeError(strf("trilinear_resample: grid %s does not match volume %s",
                                  shape_str(grid.shape()).c_str(),
                                  shape_str(volume.shape()).c_str()));
    } else {
        throw ShapeError(strf("trilinear_resample: grid %s, expected rank 4 or 5",
                              shape_str(grid.shape()).c_str()));
    }

    Tensor<T> out(volume.shape());
    const T* pv = volume.data();
    const T* pg = grid.data();
    T* po = out.data();
    const int64_t spatial = W * H * D;

    auto kernel = [&](int64_t n, auto&& corner_fn) {
        const T* gslice = pg + (per_item ? n * spatial * 3 : 0);
        for (int64_t p = 0; p < spatial; ++p) {
            const double sx = static_cast<double>(gslice[p * 3 + 0]);
            const double sy = static_cast<double>(gslice[p * 3 + 1]);
            const double sz = static_cast<double>(gslice[p * 3 + 2]);
            const int64_t x0 = static_cast<int64_t>(std::floor(sx));
            const int64_t y0 = static_cast<int64_t>(std::floor(sy));
            const int64_t z0 = static_cast<int64_t>(std::floor(sz));
            const T fx = static_cast<T>(sx - static_cast<double>(x0));
            const T fy = static_cast<T>(sy - static_cast<double>(y0));
            const T fz = static_cast<T>(sz - static_cast<double>(z0));
            for (int dx = 0; dx < 2; ++dx) {
                const int64_t xs = x0 + dx;
                if (xs < 0 || xs >= W) continue;
                const T wx = dx ? fx : T(1) - fx;
                for (int dy = 0; dy < 2; ++dy) {
                    const int64_t ys = y0 + dy;
                    if (ys < 0 || ys >= H) continue;
                    const T wy = dy ? fy : T(1) - fy;
                    for (int dz = 0; dz < 2; ++dz) {
                        const int64_t zs = z0 + dz;
                        if (zs < 0 || zs >= D) continue;
                        const T wgt = wx * wy * (dz ? fz : T(1) - fz);
                        const int64_t src = (((n * W + xs) * H + ys) * D + zs) * C;
                        corner_fn(p, src, wgt);
                    }
                }
            }
        }
    };

    parallel_for(N, [&](int64_t n) {
        kernel(n, [&](int64_t p, int64_t src, T wgt) {
            T* orow = po + (n * spatial + p) * C;
            const T* vrow = pv + src;
            for (int64_t c = 0; c < C; ++c) orow[c] += wgt * vrow[c];
        });
    });

    if (recording_active<T>() && volume.tracked()) {
        auto vn = volume.node(), gn = grid.node(), on = out.node();
        auto* tape = Tape<T>::current();
        tape->adopt_node(vn);
        tape->record({}, on, [vn, gn, on, N, W, H, D, C, per_item, spatial] {
            const T* g = on->adjoint.data();
            const T* pg2 = gn->value.data();
            T* dv = vn->adjoint.data();
            parallel_for(N, [&](int64_t n) {
                const T* gslice = pg2 + (per_item ? n * spatial * 3 : 0);
                for (int64_t p = 0; p < spatial; ++p) {
                    const double sx = static_cast<double>(gslice[p * 3 + 0]);
                    const double sy = static_cast<double>(gslice[p * 3 + 1]);
                    const double sz = static_cast<double>(gslice[p * 3 + 2]);
                    const int64_t x0 = static_cast<int64_t>(std::floor(sx));
                    const int64_t y0 = static_cast<int64_t>(std::floor(sy));
                    const int64_t z0 = static_cast<int64_t>(std::floor(sz));
                    const T fx = static_cast<T>(sx - static_cast<double>(x0));
                    const T fy = static_cast<T>(sy - static_cast<double>(y0));
                    const T fz = static_cast<T>(sz - static_cast<double>(z0));
                    const T* grow = g + (n * spatial + p) * C;
                    for (int dx = 0; dx < 2; ++dx) {
                        const int64_t xs = x0 + dx;
                        if (xs < 0 || xs >= W) continue;
                        const T wx = dx ? fx : T(1) - fx;
                        for (int dy = 0; dy < 2; ++dy) {
                            const int64_t ys = y0 + dy;
                            if (ys < 0 || ys >= H) continue;
                            const T wy = dy ? fy : T(1) - fy;
                            for (int dz = 0; dz < 2; ++dz) {
                                const int64_t zs = z0 + dz;
                                if (zs < 0 || zs >= D) continue;
                                const T wgt = wx * wy * (dz ? fz : T(1) - fz);
                                T* drow = dv + (((n * W + xs) * H + ys) * D + zs) * C;
                                for (int64_t c = 0; c < C; ++c) drow[c] += wgt * grow[c];
                            }
                        }
                    }
                }
            });
        });
    }
    return out;
}

template <typename T>
Tensor<T> rigid_transform(const Tensor<T>& volume, const Pose& pose) {
    Tensor<T> grid = build_grid<T>(volume.dim(1), volume.dim(2), volume.dim(3), pose);
    return trilinear_resample(volume, grid);
}

template <typename T>
Tensor<T> rigid_transform(const Tensor<T>& volume, const std::vector<Pose>& poses) {
    const int64_t N = volume.dim(0);
    if (poses.size() == 1) return rigid_transform(volume, poses[0]);
    if (static_cast<int64_t>(poses.size()) != N)
        throw ShapeError(strf("rigid_transform: %zu poses for batch of %lld", poses.size(),
                              static_cast<long long>(N)));
    const int64_t W = volume.dim(1), H = volume.dim(2), D = volume.dim(3);
    Tensor<T> grids(Shape{N, W, H, D, 3});
    const int64_t block = W * H * D * 3;
    for (int64_t n = 0; n < N; ++n) {
        Tensor<T> g = build_grid<T>(W, H, D, poses[static_cast<size_t>(n)]);
        std::copy(g.data(), g.data() + block, grids.data() + n * block);
    }
    return trilinear_resample(volume, grids);
}

#define HVOX_INSTANTIATE_GEOMETRY(T)                                                     \
    template Tensor<T> build_grid<T>(int64_t, int64_t, int64_t, const Pose&);            \
    template Tensor<T> trilinear_resample<T>(const Tensor<T>&, const Tensor<T>&);        \
    template Tensor<T> rigid_transform<T>(const Tensor<T>&, const Pose&);                \
    template Tensor<T> rigid_transform<T>(const Tensor<T>&, const std::vector<Pose>&);

HVOX_INSTANTIATE_GEOMETRY(float)
HVOX_INSTANTIATE_GEOMETRY(double)

}  // namespace hvox
