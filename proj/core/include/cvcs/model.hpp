#pragma once

// The cross-view counting network: shared per-view extractor, projection to
// the scene plane, distance-guided camera selection, view max-pooling and a
// scene-plane decoder. Also the training-time noise views.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cvcs/geometry.hpp"
#include "cvcs/ops.hpp"
#include "cvcs/tensor.hpp"

namespace cvcs::net {

using Rng = std::mt19937_64;

enum class CamSel { None, NoConv, Conv1x1, Conv3 };
enum class NoiseType { Off, A, B, C, D, E, F, G };
enum class Mode { Train, Eval };

std::string to_string(CamSel v);
std::string to_string(NoiseType v);
CamSel parse_camsel(const std::string& text);
NoiseType parse_noise(const std::string& text);

/// True for noise types whose noise view runs through the separate extractor H.
bool uses_noise_extractor(NoiseType t);

struct ModelConfig {
    std::vector<int> extractor_channels{16, 16, 32, 32};
    CamSel camsel = CamSel::None;
    NoiseType noise = NoiseType::Off;
    std::vector<int> decoder_channels{64, 32, 1};
    std::vector<int> selection_channels{8, 8, 1};  // Conv3 only
    int downsample = 4;                            // two 2x pools
    // The decoder works in density units times this factor; its output is
    // divided by it, so counts are unchanged while per-cell targets are O(1).
    double density_scale = 100.0;

    int fusion_channels() const { return extractor_channels.back(); }
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ConvLayer {
    Tensor weight;  // [Cout, Cin, k, k]
    Tensor bias;    // [Cout]
    int padding = 0;
};

struct ModelParams {
    std::vector<ConvLayer> extractor;
    std::vector<ConvLayer> selection;
    std::vector<ConvLayer> noise_extractor;
    std::vector<ConvLayer> decoder;

    /// Every trainable tensor with a stable name, in a fixed order.
    std::vector<std::pair<std::string, Tensor>> named() const;
};

struct Model {
    ModelConfig config;
    ModelParams params;
};

/// He-normal weights, zero biases. A Conv1x1 selection layer starts as the
/// identity map.
Model init_model(const ModelConfig& config, std::uint64_t seed);

/// Deep copy of all parameters.
Model clone_model(const Model& model);

/// Zeroes every parameter (a model that predicts an all-zero density).
void zero_model(Model& model);

struct View {
    Tensor image;  // [1, 1, H, W]
    geom::CameraParams camera;
};

Tensor extract_features(std::span<const ConvLayer> extractor, const Tensor& image);

/// Scene-plane projection of a feature map computed at 1/downsample of the
/// camera image resolution.
Sampled project(const Tensor& features, const geom::CameraParams& cam,
                const geom::ScenePlaneGrid& grid, int downsample);

/// Distance-driven weight maps [1, 1, Hs, Ws], one per camera. Requires
/// camsel != None.
std::vector<Tensor> selection_weights(const ModelParams& params, const ModelConfig& config,
                                      std::span<const geom::CameraParams> cams,
                                      const geom::ScenePlaneGrid& grid);

/// Inputs of the view max-pooling layer.
struct FusionInputs {
    std::vector<Tensor> images;     // raw view images (type A corrupts one)
    std::vector<Tensor> projected;  // weighted projected features [1, C, Hs, Ws]
    Tensor additive;                // sum-type noise added after pooling, if defined
};

enum class NoiseStage { Input, Projected };

/// Source of the noise view's epsilon; standard normal when empty.
using NoiseSampler = std::function<Tensor(const Shape&, Rng&)>;

/// Applies the noise view of `type` that belongs to `stage`:
///   Input     - A: the noise camera's image becomes max(x, eps).
///   Projected - B: eps at scene resolution joins the max-pool list;
///               C: eps at feature resolution, projected with the noise camera;
///               D/F: eps image through F (D) or H (F), projected, joins the list;
///               E/G: as D/F but added to the pooled result.
/// `noise_view` indexes the view whose camera the noise view borrows. Any type
/// other than Off in eval mode throws.
void inject_noise_view(const ModelParams& params, const ModelConfig& config, NoiseType type,
                       NoiseStage stage, FusionInputs& inputs, std::size_t noise_view,
                       std::span<const geom::CameraParams> cams,
                       const geom::ScenePlaneGrid& grid, Mode mode, Rng& rng,
                       const NoiseSampler& sampler = {});

struct ForwardOptions {
    Mode mode = Mode::Eval;
    NoiseType noise = NoiseType::Off;  // must be Off in eval mode
    NoiseSampler sampler = {};
};

struct FusionResult {
    Tensor pooled;                // [1, C, Hs, Ws]
    std::vector<Tensor> weights;  // selection weights, empty when camsel == None
};

/// Stages 1-3: extraction, projection, selection and view pooling.
FusionResult fuse(const Model& model, std::span<const View> views,
                  const geom::ScenePlaneGrid& grid, const ForwardOptions& options, Rng& rng);

/// Stage 4: pooled features to a [1, 1, Hs, Ws] density map.
Tensor decode(const Model& model, const Tensor& pooled);

/// Training objective: MSE in the decoder's scaled units, density_scale^2 * mse.
double loss_scale(const ModelConfig& config);

/// Full network; returns the density as [1, Hs, Ws].
Tensor forward(const Model& model, std::span<const View> views, const geom::ScenePlaneGrid& grid,
               const ForwardOptions& options, Rng& rng);

}  // namespace cvcs::net
