#include "cvcs/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cvcs/parallel.hpp"

namespace cvcs::sim {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kMaxLayoutRejections = 1000;
constexpr double kMinCoverage = 0.2;
constexpr double kMinSpacing = 0.3;

// Stream identifiers so that each random quantity has its own generator.
enum Stream : std::uint64_t { kCameras = 1, kCrowd = 2, kBackground = 3, kRender = 4 };

Rng stream(std::uint64_t seed, std::uint64_t kind, std::uint64_t a = 0, std::uint64_t b = 0) {
    return Rng(mix_seed(mix_seed(mix_seed(seed, kind), a), b));
}

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

float quantize(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::string to_string(Style style) { return style == Style::SynthA ? "a" : "b"; }

Style parse_style(const std::string& text) {
    if (text == "a" || text == "A" || text == "SynthA") return Style::SynthA;
    if (text == "b" || text == "B" || text == "SynthB") return Style::SynthB;
    throw Error("unknown style '" + text + "' (expected a or b)");
}

StyleParams style_params(Style style) {
    if (style == Style::SynthA) return {0.30, 0.30, 0.90, 0.0};
    return {0.55, 0.45, 0.80, 0.06};
}

void SceneSpec::validate() const {
    if (!(extent > 0)) throw Error("scene spec: extent must be > 0");
    if (people_min < 0 || people_max < people_min) throw Error("scene spec: bad people range");
    if (n_views < 3) throw Error("scene spec: n_views must be >= 3");
    if (n_frames < 1) throw Error("scene spec: n_frames must be >= 1");
    if (image_width < 4 || image_height < 4) throw Error("scene spec: image too small");
    if (!(meters_per_pixel > 0)) throw Error("scene spec: meters_per_pixel must be > 0");
    if (background_cells < 1) throw Error("scene spec: background_cells must be >= 1");
}

geom::ScenePlaneGrid SceneSpec::grid() const {
    geom::ScenePlaneGrid g;
    g.origin_x = -extent / 2;
    g.origin_y = -extent / 2;
    g.meters_per_pixel = meters_per_pixel;
    g.rows = static_cast<int>(std::lround(extent / meters_per_pixel));
    g.cols = g.rows;
    g.h_avg = h_avg;
    return g;
}

std::size_t Dataset::frame_count() const {
    std::size_t n = 0;
    for (const auto& s : scenes) n += s.frames.size();
    return n;
}

std::vector<geom::CameraParams> sample_camera_layout(const SceneSpec& spec, Rng& rng) {
    spec.validate();
    const geom::ScenePlaneGrid grid = spec.grid();
    std::vector<geom::CameraParams> cams;
    int rejections = 0;
    while (static_cast<int>(cams.size()) < spec.n_views) {
        const double angle = uniform(rng, 0.0, 2 * std::numbers::pi);
        const double radius = uniform(rng, 0.6, 1.3) * spec.extent / 2;
        const double height = uniform(rng, 4.0, 12.0);
        const geom::Vec3 eye{radius * std::cos(angle), radius * std::sin(angle), height};
        // Aim at the scene center, then jitter yaw and pitch.
        const double dx = -eye[0], dy = -eye[1], dz = -eye[2];
        double yaw = std::atan2(dy, dx) + uniform(rng, -10.0, 10.0) * kDeg;
        double pitch = std::atan2(dz, std::hypot(dx, dy)) + uniform(rng, -10.0, 10.0) * kDeg;
        const double hfov = uniform(rng, 60.0, 90.0) * kDeg;
        const geom::Vec3 target{eye[0] + std::cos(pitch) * std::cos(yaw),
                                eye[1] + std::cos(pitch) * std::sin(yaw),
                                eye[2] + std::sin(pitch)};
        geom::CameraParams cam;
        cam.id = static_cast<int>(cams.size());
        cam.width = spec.image_width;
        cam.height = spec.image_height;
        cam.fx = (spec.image_width / 2.0) / std::tan(hfov / 2);
        cam.fy = cam.fx;
        cam.cx = spec.image_width / 2.0;
        cam.cy = spec.image_height / 2.0;
        cam.R = geom::look_at(eye, target);
        cam.T = geom::translation_for(cam.R, eye);
        if (geom::coverage_fraction(cam, grid) >= kMinCoverage) {
            cams.push_back(cam);
            continue;
        }
        if (++rejections >= kMaxLayoutRejections) {
            throw Error("sample_camera_layout: " + std::to_string(kMaxLayoutRejections) +
                        " rejections; scene spec cannot satisfy the coverage requirement");
        }
    }
    return cams;
}

std::vector<Person> place_crowd(const SceneSpec& spec, Rng& rng) {
    const int count = std::uniform_int_distribution<int>(spec.people_min, spec.people_max)(rng);
    const int clusters = std::uniform_int_distribution<int>(1, 4)(rng);
    struct Cluster {
        double x, y, sigma;
    };
    std::vector<Cluster> centers;
    for (int c = 0; c < clusters; ++c) {
        centers.push_back({uniform(rng, -0.35, 0.35) * spec.extent,
                           uniform(rng, -0.35, 0.35) * spec.extent, uniform(rng, 1.0, 3.5)});
    }
    const double lo = -spec.extent / 2;
    const double hi = spec.extent / 2 - spec.meters_per_pixel;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Person> people;
    people.reserve(static_cast<std::size_t>(count));
    while (static_cast<int>(people.size()) < count) {
        double x, y;
        if (uniform(rng, 0.0, 1.0) < 0.25) {
            x = uniform(rng, lo, hi);
            y = uniform(rng, lo, hi);
        } else {
            const auto& c = centers[std::uniform_int_distribution<std::size_t>(
                0, centers.size() - 1)(rng)];
            x = std::clamp(c.x + c.sigma * normal(rng), lo, hi);
            y = std::clamp(c.y + c.sigma * normal(rng), lo, hi);
        }
        const bool crowded = std::any_of(people.begin(), people.end(), [&](const Person& p) {
            return std::hypot(p.x - x, p.y - y) < kMinSpacing;
        });
        if (crowded) continue;
        people.push_back({static_cast<int>(people.size()), x, y});
    }
    return people;
}

Tensor render_background(const SceneSpec& spec, Rng& rng) {
    const int w = spec.image_width, h = spec.image_height;
    std::vector<double> pattern(static_cast<std::size_t>(w * h), 0.0);
    double amplitude = 1.0, total = 0.0;
    for (int octave = 0; octave < 2; ++octave) {
        const int cells_x = spec.background_cells << octave;
        const int cells_y = std::max(1, cells_x * h / w);
        std::vector<double> lattice(static_cast<std::size_t>((cells_x + 1) * (cells_y + 1)));
        for (auto& v : lattice) v = uniform(rng, 0.0, 1.0);
        for (int r = 0; r < h; ++r) {
            const double gy = static_cast<double>(r) / h * cells_y;
            const int y0 = static_cast<int>(gy);
            const double b = gy - y0;
            for (int c = 0; c < w; ++c) {
                const double gx = static_cast<double>(c) / w * cells_x;
                const int x0 = static_cast<int>(gx);
                const double a = gx - x0;
                auto at = [&](int yy, int xx) {
                    return lattice[static_cast<std::size_t>(yy * (cells_x + 1) + xx)];
                };
                const double v = (1 - a) * (1 - b) * at(y0, x0) + a * (1 - b) * at(y0, x0 + 1) +
                                 (1 - a) * b * at(y0 + 1, x0) + a * b * at(y0 + 1, x0 + 1);
                pattern[static_cast<std::size_t>(r * w + c)] += amplitude * v;
            }
        }
        total += amplitude;
        amplitude *= 0.5;
    }
    const StyleParams style = style_params(spec.style);
    for (auto& v : pattern) v = style.background_mean + style.background_contrast * (v / total - 0.5);
    return Tensor({1, 1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)},
                  std::move(pattern));
}

std::vector<Dot> project_dots(const geom::CameraParams& cam, std::span<const Person> people,
                              double h_avg) {
    std::vector<Dot> dots;
    for (const auto& p : people) {
        const geom::ImagePoint head = geom::world_to_image(cam, {p.x, p.y, h_avg});
        if (head.visible && head.u >= 0 && head.u < cam.width && head.v >= 0 &&
            head.v < cam.height) {
            dots.push_back({p.id, head.u, head.v});
        }
    }
    return dots;
}

RenderedView render_view(const geom::CameraParams& cam, std::span<const Person> people,
                         Style style, const Tensor& background, Rng& rng, double h_avg) {
    const auto w = static_cast<std::size_t>(cam.width), h = static_cast<std::size_t>(cam.height);
    if (background.size() != w * h) throw Error("render_view: background size mismatch");
    const StyleParams sp = style_params(style);
    std::vector<double> img(background.data().begin(), background.data().end());

    struct Blob {
        double u, v, depth;
    };
    std::vector<Blob> blobs;
    for (const auto& p : people) {
        const geom::ImagePoint mid = geom::world_to_image(cam, {p.x, p.y, h_avg / 2});
        if (mid.visible) blobs.push_back({mid.u, mid.v, mid.depth});
    }
    // Painter's order: far people first so near ones occlude them.
    std::sort(blobs.begin(), blobs.end(),
              [](const Blob& a, const Blob& b) { return a.depth > b.depth; });
    for (const auto& b : blobs) {
        const double height_px = cam.fy * h_avg / b.depth;
        const double sv = height_px / 4.0;
        const double su = std::max(0.5, height_px / 10.0);
        const int r0 = std::max(0, static_cast<int>(std::floor(b.v - 3 * sv)));
        const int r1 = std::min(cam.height - 1, static_cast<int>(std::ceil(b.v + 3 * sv)));
        const int c0 = std::max(0, static_cast<int>(std::floor(b.u - 3 * su)));
        const int c1 = std::min(cam.width - 1, static_cast<int>(std::ceil(b.u + 3 * su)));
        for (int r = r0; r <= r1; ++r) {
            const double dv = (r - b.v) / sv;
            for (int c = c0; c <= c1; ++c) {
                const double du = (c - b.u) / su;
                const double alpha = std::exp(-0.5 * (du * du + dv * dv));
                double& px = img[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
                px = px * (1 - alpha) + sp.person_intensity * alpha;
            }
        }
    }
    if (sp.pixel_noise > 0) {
        std::normal_distribution<double> noise(0.0, sp.pixel_noise);
        for (auto& px : img) px += noise(rng);
    }
    for (auto& px : img) px = quantize(px);
    return {Tensor({1, 1, h, w}, std::move(img)), project_dots(cam, people, h_avg)};
}

Tensor gt_density(std::span<const Person> people, const geom::ScenePlaneGrid& grid,
                  double sigma) {
    if (!(sigma > 0)) throw Error("gt_density: sigma must be > 0");
    grid.validate();
    Tensor density({1, static_cast<std::size_t>(grid.rows), static_cast<std::size_t>(grid.cols)});
    auto d = density.mutable_data();
    const double radius = 4 * sigma;
    std::vector<std::pair<std::size_t, double>> support;
    for (const auto& p : people) {
        const double col = (p.x - grid.origin_x) / grid.meters_per_pixel;
        const double row = (p.y - grid.origin_y) / grid.meters_per_pixel;
        const int r0 = std::max(0, static_cast<int>(std::ceil(row - radius)));
        const int r1 = std::min(grid.rows - 1, static_cast<int>(std::floor(row + radius)));
        const int c0 = std::max(0, static_cast<int>(std::ceil(col - radius)));
        const int c1 = std::min(grid.cols - 1, static_cast<int>(std::floor(col + radius)));
        support.clear();
        double mass = 0.0;
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                const double dr = r - row, dc = c - col;
                const double d2 = dr * dr + dc * dc;
                if (d2 > radius * radius) continue;
                const double v = std::exp(-d2 / (2 * sigma * sigma));
                support.emplace_back(static_cast<std::size_t>(r * grid.cols + c), v);
                mass += v;
            }
        }
        if (mass <= 0) continue;
        for (const auto& [q, v] : support) d[q] += v / mass;
    }
    return density;
}

Scene generate_scene(int id, const SceneSpec& spec) {
    spec.validate();
    Scene scene;
    scene.id = id;
    scene.spec = spec;
    scene.grid = spec.grid();
    Rng cam_rng = stream(spec.seed, kCameras);
    scene.cameras = sample_camera_layout(spec, cam_rng);

    std::vector<Tensor> backgrounds;
    for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
        Rng bg_rng = stream(spec.seed, kBackground, v);
        backgrounds.push_back(render_background(spec, bg_rng));
    }
    Rng crowd_rng = stream(spec.seed, kCrowd);
    for (int f = 0; f < spec.n_frames; ++f) {
        CrowdFrame frame;
        frame.people = place_crowd(spec, crowd_rng);
        for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
            Rng render_rng = stream(spec.seed, kRender, static_cast<std::uint64_t>(f), v);
            RenderedView view = render_view(scene.cameras[v], frame.people, spec.style,
                                            backgrounds[v], render_rng, spec.h_avg);
            frame.images.push_back(std::move(view.image));
            frame.dots.push_back(std::move(view.dots));
        }
        frame.density = gt_density(frame.people, scene.grid);
        scene.frames.push_back(std::move(frame));
    }
    return scene;
}

Dataset generate_dataset(std::span<const SceneSpec> specs, std::uint64_t master_seed,
                         int threads) {
    Dataset ds;
    ds.scenes.resize(specs.size());
    parallel_for(specs.size(), threads, [&](std::size_t i) {
        SceneSpec spec = specs[i];
        spec.seed = mix_seed(master_seed, mix_seed(spec.seed, i));
        ds.scenes[i] = generate_scene(static_cast<int>(i), spec);
    });
    return ds;
}

Dataset restyle(const Dataset& source, Style style) {
    Dataset out;
    for (const auto& scene : source.scenes) {
        SceneSpec spec = scene.spec;
        spec.style = style;
        out.scenes.push_back(generate_scene(scene.id, spec));
    }
    return out;
}

}  // namespace cvcs::sim
