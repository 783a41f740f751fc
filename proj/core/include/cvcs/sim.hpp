#pragma once

// Procedural multi-view crowd scenes: camera layouts, crowds, simple
// grayscale renderings, dot annotations and scene-plane density maps.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvcs/geometry.hpp"
#include "cvcs/tensor.hpp"

namespace cvcs::sim {

using Rng = std::mt19937_64;

/// splitmix64-style combination of two seeds into an independent stream seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

enum class Style { SynthA, SynthB };

std::string to_string(Style style);
Style parse_style(const std::string& text);

/// Appearance statistics of one rendering domain.
struct StyleParams {
    double background_mean;
    double background_contrast;
    double person_intensity;
    double pixel_noise;  // std-dev of additive per-pixel noise
};

StyleParams style_params(Style style);

struct SceneSpec {
    std::uint64_t seed = 0;
    double extent = 32.0;  // side of the square ground region, meters
    int people_min = 20;
    int people_max = 60;
    int n_views = 16;
    int n_frames = 20;
    Style style = Style::SynthA;
    int image_width = 128;
    int image_height = 96;
    double meters_per_pixel = 0.5;
    double h_avg = geom::kAverageHeight;
    int background_cells = 6;  // coarsest octave of the background texture

    void validate() const;
    /// Scene-plane raster covering [-extent/2, extent/2)^2.
    geom::ScenePlaneGrid grid() const;

    friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct Person {
    int id = 0;
    double x = 0.0, y = 0.0;
    friend bool operator==(const Person&, const Person&) = default;
};

struct Dot {
    int id = 0;
    double u = 0.0, v = 0.0;
    friend bool operator==(const Dot&, const Dot&) = default;
};

struct CrowdFrame {
    std::vector<Person> people;
    std::vector<Tensor> images;         // per view, [1, 1, H, W] in [0, 1]
    std::vector<std::vector<Dot>> dots;  // per view, people whose head is in view
    Tensor density;                     // [1, Hs, Ws]

    friend bool operator==(const CrowdFrame&, const CrowdFrame&) = default;
};

struct Scene {
    int id = 0;
    SceneSpec spec;
    geom::ScenePlaneGrid grid;
    std::vector<geom::CameraParams> cameras;
    std::vector<CrowdFrame> frames;

    friend bool operator==(const Scene&, const Scene&) = default;
};

struct Dataset {
    std::vector<Scene> scenes;

    std::size_t frame_count() const;
    friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr double kDensitySigma = 2.0;  // grid pixels

/// Cameras on a jittered ring looking at the scene center; each sees at least
/// 20% of the grid. Throws after 1000 consecutive rejections.
std::vector<geom::CameraParams> sample_camera_layout(const SceneSpec& spec, Rng& rng);

/// Clustered crowd inside the scene extent with 0.3 m minimum spacing.
std::vector<Person> place_crowd(const SceneSpec& spec, Rng& rng);

/// Static low-frequency background for one camera, [1, 1, H, W].
Tensor render_background(const SceneSpec& spec, Rng& rng);

struct RenderedView {
    Tensor image;  // [1, 1, H, W]
    std::vector<Dot> dots;
};

RenderedView render_view(const geom::CameraParams& cam, std::span<const Person> people,
                         Style style, const Tensor& background, Rng& rng,
                         double h_avg = geom::kAverageHeight);

/// Sum of truncated (4 sigma), renormalized Gaussians, one per person.
Tensor gt_density(std::span<const Person> people, const geom::ScenePlaneGrid& grid,
                  double sigma = kDensitySigma);

/// Head-point annotations for people visible in `cam`.
std::vector<Dot> project_dots(const geom::CameraParams& cam, std::span<const Person> people,
                              double h_avg);

Scene generate_scene(int id, const SceneSpec& spec);

/// Pure function of the specs and master seed; scenes are generated on up to
/// `threads` workers.
Dataset generate_dataset(std::span<const SceneSpec> specs, std::uint64_t master_seed,
                         int threads = 1);

/// Same scenes and crowds rendered in another style (fresh appearance noise).
Dataset restyle(const Dataset& source, Style style);

/// Layout: scenes/<sid>/meta.json and scenes/<sid>/frames/<fid>/{view_<vid>.cvt,
/// gt.cvt, dots.csv}.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

/// Reads images and camera metadata only; never opens gt.cvt or dots.csv.
/// The returned frames carry empty `people` and undefined `density`.
Dataset read_unlabeled(const std::filesystem::path& dir);

}  // namespace cvcs::sim
