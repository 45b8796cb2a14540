#pragma once

#include <array>

#include "hvox/tensor.hpp"

namespace hvox {

// Feature volumes are [N,W,H,D,C] with world axes x,y,z along W,H,D and the
// origin at the volume center. The virtual camera sits on the negative z
// axis in canonical pose; azimuth rotates about y (the global up vector),
// elevation about x. Angles are degrees at every interface.

struct Pose {
    double azimuth_deg = 0;
    double elevation_deg = 0;
    double scale = 1;
    std::array<double, 3> translation{0, 0, 0};  // voxel units, unused by default

    void validate() const;
};

struct PoseRange {
    double azimuth_min = -50, azimuth_max = 50;
    double elevation_min = -17.5, elevation_max = 17.5;
    double scale_min = 0.9, scale_max = 1.1;

    void validate() const;
};

struct Mat3 {
    // row-major
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }
    Mat3 transposed() const;
    Mat3 operator*(const Mat3& o) const;
    std::array<double, 3> apply(const std::array<double, 3>& v) const;
    double det() const;
};

/// R = R_y(azimuth) * R_x(elevation), right-handed.
Mat3 rotation_matrix(const Pose& pose);

/// Source coordinates [W,H,D,3] for inverse warping: the resampled volume
/// appears rotated/scaled by +pose. Extents must be >= 2 per axis.
template <typename T>
Tensor<T> build_grid(int64_t w, int64_t h, int64_t d, const Pose& pose);

/// Trilinear blend of the 8 lattice neighbors of each source coordinate.
/// grid is [W,H,D,3] (shared) or [N,W,H,D,3] (per item); coordinates outside
/// the volume contribute zeros. Differentiable in the volume only.
template <typename T>
Tensor<T> trilinear_resample(const Tensor<T>& volume, const Tensor<T>& grid);

/// build_grid + trilinear_resample. The identity pose is an exact identity.
template <typename T>
Tensor<T> rigid_transform(const Tensor<T>& volume, const Pose& pose);
template <typename T>
Tensor<T> rigid_transform(const Tensor<T>& volume, const std::vector<Pose>& poses);

}  // namespace hvox
