#pragma once

// Calibrated pinhole cameras, the average-height scene plane, plane sampling
// grids, log-distance maps and distance-driven camera weight maps.
//
// Conventions: world z is up and the ground is z = 0. Cameras map
// X_cam = R * X_world + T with +z along the optical axis and +y pointing down
// the image; the image origin is the top-left pixel.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cvcs/ops.hpp"
#include "cvcs/tensor.hpp"

namespace cvcs::geom {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

inline constexpr double kNearPlane = 0.1;
inline constexpr double kAverageHeight = 1.75;
inline constexpr double kOffImage = -1e6;

struct CameraParams {
    int id = 0;
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
    Mat3 R{1, 0, 0, 0, 1, 0, 0, 0, 1};
    Vec3 T{0, 0, 0};
    int width = 1, height = 1;

    /// Throws cvcs::Error unless R is a rotation (within 1e-9) and the
    /// intrinsics and image size are positive.
    void validate() const;
    /// Camera center in world coordinates, -R^T T.
    Vec3 center() const;

    friend bool operator==(const CameraParams&, const CameraParams&) = default;
};

struct ScenePlaneGrid {
    double origin_x = 0.0;  // world coordinates of cell (0, 0)
    double origin_y = 0.0;
    double meters_per_pixel = 0.5;
    int rows = 0;  // Hs
    int cols = 0;  // Ws
    double h_avg = kAverageHeight;

    void validate() const;
    Vec3 world(int row, int col) const {
        return {origin_x + col * meters_per_pixel, origin_y + row * meters_per_pixel, h_avg};
    }

    friend bool operator==(const ScenePlaneGrid&, const ScenePlaneGrid&) = default;
};

struct ImagePoint {
    double u = 0.0, v = 0.0, depth = 0.0;
    bool visible = false;  // depth > kNearPlane
};

ImagePoint world_to_image(const CameraParams& cam, const Vec3& world);

/// Intersects the ray through pixel (u, v) with the plane z = h. Empty when the
/// ray is parallel to the plane or meets it behind the camera.
std::optional<Vec3> image_to_world_plane(const CameraParams& cam, double u, double v, double h);

/// Image position of every scene-plane cell. Cells behind the camera get the
/// off-image sentinel. With `downsample` > 1 the coordinates address a feature
/// map reduced by that factor (pixel centers stay aligned).
SamplingGrid plane_sampling_grid(const CameraParams& cam, const ScenePlaneGrid& grid,
                                 int downsample = 1);

/// Fraction of scene-plane cells that land inside the camera image.
double coverage_fraction(const CameraParams& cam, const ScenePlaneGrid& grid);

/// Per-pixel log camera-to-plane distance over an Hf x Wf feature raster of
/// the camera image.
struct DistanceMap {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;

    Tensor tensor() const;       // [1, 1, rows, cols]
    Tensor mask_tensor() const;  // [rows, cols]
};

/// Pixels whose ray misses the plane take the map's largest valid value and
/// are masked out.
DistanceMap distance_map(const CameraParams& cam, const ScenePlaneGrid& grid, int feature_rows,
                         int feature_cols);

struct MinDistance {
    Tensor value;    // per-pixel min over views valid there; 0 where uncovered
    Tensor covered;  // 1 where at least one view is valid
};

MinDistance min_distance_map(std::span<const Tensor> maps, std::span<const Tensor> masks);

/// W_k = exp(-(M_k - M_min)^2) normalized over the views valid at each pixel.
/// Masked pixels get weight 0; pixels no view covers get 0 for every view.
/// Differentiable w.r.t. the maps.
std::vector<Tensor> camera_weight_maps(std::span<const Tensor> maps,
                                       std::span<const Tensor> masks);

/// Rotation that points the optical axis from `eye` to `target` with the
/// image x axis horizontal (world z up).
Mat3 look_at(const Vec3& eye, const Vec3& target);

/// Translation T = -R * eye for a camera at `eye`.
Vec3 translation_for(const Mat3& R, const Vec3& eye);

}  // namespace cvcs::geom
