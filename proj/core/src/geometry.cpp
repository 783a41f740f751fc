#include "cvcs/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cvcs::geom {

namespace {

Vec3 mat_vec(const Mat3& m, const Vec3& x) {
    return {m[0] * x[0] + m[1] * x[1] + m[2] * x[2], m[3] * x[0] + m[4] * x[1] + m[5] * x[2],
            m[6] * x[0] + m[7] * x[1] + m[8] * x[2]};
}

Vec3 mat_t_vec(const Mat3& m, const Vec3& x) {
    return {m[0] * x[0] + m[3] * x[1] + m[6] * x[2], m[1] * x[0] + m[4] * x[1] + m[7] * x[2],
            m[2] * x[0] + m[5] * x[1] + m[8] * x[2]};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double norm(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

Vec3 normalized(const Vec3& a) {
    const double n = norm(a);
    return {a[0] / n, a[1] / n, a[2] / n};
}

void check_views(std::span<const Tensor> maps, std::span<const Tensor> masks, const char* op) {
    if (maps.empty()) throw Error(std::string(op) + ": no views");
    if (maps.size() != masks.size()) throw Error(std::string(op) + ": maps/masks count mismatch");
    const auto& shape = maps.front().shape();
    for (std::size_t k = 0; k < maps.size(); ++k) {
        if (maps[k].shape() != shape || masks[k].size() != maps[k].size()) {
            throw Error(std::string(op) + ": shape mismatch at view " + std::to_string(k));
        }
    }
}

}  // namespace

void CameraParams::validate() const {
    if (!(fx > 0 && fy > 0)) throw Error("camera " + std::to_string(id) + ": focal lengths must be > 0");
    if (width <= 0 || height <= 0) throw Error("camera " + std::to_string(id) + ": empty image size");
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += R[3 * i + k] * R[3 * j + k];
            if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-9) {
                throw Error("camera " + std::to_string(id) + ": R is not orthonormal");
            }
        }
    }
    const double det = R[0] * (R[4] * R[8] - R[5] * R[7]) - R[1] * (R[3] * R[8] - R[5] * R[6]) +
                       R[2] * (R[3] * R[7] - R[4] * R[6]);
    if (std::abs(det - 1.0) > 1e-9) throw Error("camera " + std::to_string(id) + ": det(R) != 1");
}

Vec3 CameraParams::center() const {
    const Vec3 c = mat_t_vec(R, T);
    return {-c[0], -c[1], -c[2]};
}

void ScenePlaneGrid::validate() const {
    if (!(meters_per_pixel > 0)) throw Error("grid: meters_per_pixel must be > 0");
    if (rows <= 0 || cols <= 0) throw Error("grid: empty raster");
    if (!(h_avg >= 0)) throw Error("grid: h_avg must be >= 0");
}

ImagePoint world_to_image(const CameraParams& cam, const Vec3& world) {
    const Vec3 xc = mat_vec(cam.R, world);
    const double x = xc[0] + cam.T[0], y = xc[1] + cam.T[1], z = xc[2] + cam.T[2];
    ImagePoint p;
    p.depth = z;
    p.visible = z > kNearPlane;
    if (p.visible) {
        p.u = cam.fx * x / z + cam.cx;
        p.v = cam.fy * y / z + cam.cy;
    }
    return p;
}

std::optional<Vec3> image_to_world_plane(const CameraParams& cam, double u, double v, double h) {
    const Vec3 ray_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
    const Vec3 dir = mat_t_vec(cam.R, ray_cam);
    const Vec3 c = cam.center();
    if (std::abs(dir[2]) < 1e-12) return std::nullopt;
    const double t = (h - c[2]) / dir[2];
    if (!(t > 0.0)) return std::nullopt;
    return Vec3{c[0] + t * dir[0], c[1] + t * dir[1], c[2] + t * dir[2]};
}

SamplingGrid plane_sampling_grid(const CameraParams& cam, const ScenePlaneGrid& grid,
                                 int downsample) {
    if (downsample < 1) throw Error("plane_sampling_grid: downsample must be >= 1");
    SamplingGrid out;
    out.rows = static_cast<std::size_t>(grid.rows);
    out.cols = static_cast<std::size_t>(grid.cols);
    out.uv.resize(out.rows * out.cols * 2);
    const double ds = downsample;
    std::size_t q = 0;
    for (int i = 0; i < grid.rows; ++i) {
        for (int j = 0; j < grid.cols; ++j, ++q) {
            const ImagePoint p = world_to_image(cam, grid.world(i, j));
            if (!p.visible) {
                out.uv[2 * q] = kOffImage;
                out.uv[2 * q + 1] = kOffImage;
            } else if (downsample == 1) {
                out.uv[2 * q] = p.u;
                out.uv[2 * q + 1] = p.v;
            } else {
                out.uv[2 * q] = (p.u + 0.5) / ds - 0.5;
                out.uv[2 * q + 1] = (p.v + 0.5) / ds - 0.5;
            }
        }
    }
    return out;
}

double coverage_fraction(const CameraParams& cam, const ScenePlaneGrid& grid) {
    const SamplingGrid sg = plane_sampling_grid(cam, grid);
    std::size_t inside = 0;
    for (std::size_t q = 0; q < sg.rows * sg.cols; ++q) {
        const double u = sg.uv[2 * q], v = sg.uv[2 * q + 1];
        if (u >= 0 && u <= cam.width - 1 && v >= 0 && v <= cam.height - 1) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(sg.rows * sg.cols);
}

Tensor DistanceMap::tensor() const {
    return Tensor({1, 1, static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)}, values);
}

Tensor DistanceMap::mask_tensor() const {
    return Tensor({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)},
                  std::vector<double>(valid.begin(), valid.end()));
}

DistanceMap distance_map(const CameraParams& cam, const ScenePlaneGrid& grid, int feature_rows,
                         int feature_cols) {
    if (feature_rows <= 0 || feature_cols <= 0 || feature_rows > cam.height ||
        feature_cols > cam.width) {
        throw Error("distance_map: feature raster must lie within the camera image size");
    }
    if (std::abs(cam.center()[2] - grid.h_avg) < 1e-9) {
        throw Error("distance_map: camera " + std::to_string(cam.id) +
                    " lies on the average-height plane");
    }
    DistanceMap d;
    d.rows = feature_rows;
    d.cols = feature_cols;
    d.values.assign(static_cast<std::size_t>(feature_rows * feature_cols), 0.0);
    d.valid.assign(d.values.size(), 0);
    const double sx = static_cast<double>(cam.width) / feature_cols;
    const double sy = static_cast<double>(cam.height) / feature_rows;
    double max_valid = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < feature_rows; ++r) {
        for (int c = 0; c < feature_cols; ++c) {
            const double u = (c + 0.5) * sx - 0.5, v = (r + 0.5) * sy - 0.5;
            const auto hit = image_to_world_plane(cam, u, v, grid.h_avg);
            if (!hit) continue;
            const Vec3 xc = mat_vec(cam.R, *hit);
            const double value =
                std::log(norm({xc[0] + cam.T[0], xc[1] + cam.T[1], xc[2] + cam.T[2]}));
            const std::size_t q = static_cast<std::size_t>(r * feature_cols + c);
            d.values[q] = value;
            d.valid[q] = 1;
            max_valid = std::max(max_valid, value);
        }
    }
    if (!std::isfinite(max_valid)) max_valid = 0.0;
    for (std::size_t q = 0; q < d.values.size(); ++q) {
        if (!d.valid[q]) d.values[q] = max_valid;
    }
    return d;
}

MinDistance min_distance_map(std::span<const Tensor> maps, std::span<const Tensor> masks) {
    check_views(maps, masks, "min_distance_map");
    const Shape& shape = maps.front().shape();
    Tensor value(shape), covered(shape);
    auto vd = value.mutable_data();
    auto cd = covered.mutable_data();
    for (std::size_t q = 0; q < vd.size(); ++q) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < maps.size(); ++k) {
            if (masks[k].data()[q] > 0.5) best = std::min(best, maps[k].data()[q]);
        }
        if (std::isfinite(best)) {
            vd[q] = best;
            cd[q] = 1.0;
        }
    }
    return {value, covered};
}

std::vector<Tensor> camera_weight_maps(std::span<const Tensor> maps,
                                       std::span<const Tensor> masks) {
    check_views(maps, masks, "camera_weight_maps");
    const std::size_t views = maps.size();
    const Shape& shape = maps.front().shape();
    const std::size_t cells = shape_size(shape);

    bool track = false;
    for (const auto& m : maps) track = track || needs_grad({&m});

    std::vector<Tensor> out;
    out.reserve(views);
    for (std::size_t k = 0; k < views; ++k) {
        out.emplace_back(shape);
        if (track) out.back().set_requires_grad(true);
    }
    // Per cell: index of the nearest valid view (views when uncovered) and the
    // normalizer of the unnormalized weights.
    std::vector<std::uint32_t> nearest(cells, static_cast<std::uint32_t>(views));
    std::vector<double> norm_sum(cells, 0.0);
    for (std::size_t q = 0; q < cells; ++q) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < views; ++k) {
            const double m = maps[k].data()[q];
            if (masks[k].data()[q] > 0.5 && m < best) {
                best = m;
                nearest[q] = static_cast<std::uint32_t>(k);
            }
        }
        if (nearest[q] == views) continue;
        double total = 0.0;
        for (std::size_t k = 0; k < views; ++k) {
            if (masks[k].data()[q] > 0.5) {
                const double diff = maps[k].data()[q] - best;
                const double w = std::exp(-diff * diff);
                out[k].mutable_data()[q] = w;
                total += w;
            }
        }
        norm_sum[q] = total;
        for (std::size_t k = 0; k < views; ++k) out[k].mutable_data()[q] /= total;
    }

    if (track) {
        std::vector<Tensor> inputs(maps.begin(), maps.end());
        std::vector<Tensor> valid(masks.begin(), masks.end());
        Tape::active()->record([inputs, valid, out, nearest = std::move(nearest),
                                norm_sum = std::move(norm_sum), views, cells]() mutable {
            bool any = false;
            for (const auto& o : out) any = any || o.has_grad();
            if (!any) return;
            std::vector<double> g(views), w(views);
            for (std::size_t q = 0; q < cells; ++q) {
                const std::size_t kmin = nearest[q];
                if (kmin == views) continue;
                const double m_min = inputs[kmin].data()[q];
                double dot = 0.0;
                for (std::size_t k = 0; k < views; ++k) {
                    g[k] = out[k].has_grad() ? out[k].grad()[q] : 0.0;
                    w[k] = out[k].data()[q];
                    dot += g[k] * w[k];
                }
                double to_min = 0.0;
                for (std::size_t k = 0; k < views; ++k) {
                    if (!(valid[k].data()[q] > 0.5)) continue;
                    // d/dW~_k of the loss, then through W~_k = exp(-(M_k - M_min)^2).
                    const double g_unnorm = (g[k] - dot) / norm_sum[q];
                    const double w_unnorm = w[k] * norm_sum[q];
                    const double diff = inputs[k].data()[q] - m_min;
                    const double dm = g_unnorm * (-2.0 * diff * w_unnorm);
                    if (inputs[k].requires_grad()) inputs[k].mutable_grad()[q] += dm;
                    to_min -= dm;
                }
                if (inputs[kmin].requires_grad()) inputs[kmin].mutable_grad()[q] += to_min;
            }
        });
    }
    return out;
}

Mat3 look_at(const Vec3& eye, const Vec3& target) {
    const Vec3 forward = normalized({target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]});
    Vec3 right = cross(forward, {0.0, 0.0, 1.0});
    if (norm(right) < 1e-9) {
        right = {1.0, 0.0, 0.0};
    } else {
        right = normalized(right);
    }
    const Vec3 down = cross(forward, right);
    return {right[0],   right[1],   right[2],   down[0],   down[1],
            down[2],    forward[0], forward[1], forward[2]};
}

Vec3 translation_for(const Mat3& R, const Vec3& eye) {
    const Vec3 r = mat_vec(R, eye);
    return {-r[0], -r[1], -r[2]};
}

}  // namespace cvcs::geom
