#include "cvcs/model.hpp"

#include <algorithm>
#include <cmath>

namespace cvcs::net {

namespace {

ConvLayer make_conv(int cin, int cout, int k, Rng& rng, double gain = 2.0) {
    ConvLayer layer;
    layer.weight = Tensor({static_cast<std::size_t>(cout), static_cast<std::size_t>(cin),
                           static_cast<std::size_t>(k), static_cast<std::size_t>(k)});
    layer.bias = Tensor({static_cast<std::size_t>(cout)});
    layer.padding = k / 2;
    std::normal_distribution<double> normal(0.0, std::sqrt(gain / (cin * k * k)));
    for (double& w : layer.weight.mutable_data()) w = normal(rng);
    layer.weight.set_requires_grad(true);
    layer.bias.set_requires_grad(true);
    return layer;
}

std::vector<ConvLayer> make_extractor(const std::vector<int>& channels, Rng& rng) {
    std::vector<ConvLayer> layers;
    int cin = 1;
    for (int c : channels) {
        layers.push_back(make_conv(cin, c, 3, rng));
        cin = c;
    }
    return layers;
}

Tensor run_convs(std::span<const ConvLayer> layers, Tensor x, bool relu_last) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        x = conv2d(x, layers[i].weight, layers[i].bias, layers[i].padding, 1);
        if (i + 1 < layers.size() || relu_last) x = relu(x);
    }
    return x;
}

void append_named(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                  const std::vector<ConvLayer>& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        out.emplace_back(prefix + "." + std::to_string(i) + ".weight", layers[i].weight);
        out.emplace_back(prefix + "." + std::to_string(i) + ".bias", layers[i].bias);
    }
}

std::vector<ConvLayer> clone_layers(const std::vector<ConvLayer>& layers) {
    std::vector<ConvLayer> out;
    for (const auto& l : layers) {
        ConvLayer c{l.weight.clone(), l.bias.clone(), l.padding};
        c.weight.set_requires_grad(true);
        c.bias.set_requires_grad(true);
        out.push_back(std::move(c));
    }
    return out;
}

Tensor gaussian(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : t.mutable_data()) v = normal(rng);
    return t;
}

}  // namespace

std::string to_string(CamSel v) {
    switch (v) {
        case CamSel::None: return "none";
        case CamSel::NoConv: return "noconv";
        case CamSel::Conv1x1: return "conv1x1";
        case CamSel::Conv3: return "conv3";
    }
    return "?";
}

std::string to_string(NoiseType v) {
    if (v == NoiseType::Off) return "off";
    return std::string(1, static_cast<char>('A' + (static_cast<int>(v) - 1)));
}

CamSel parse_camsel(const std::string& text) {
    if (text == "none") return CamSel::None;
    if (text == "noconv") return CamSel::NoConv;
    if (text == "conv1x1") return CamSel::Conv1x1;
    if (text == "conv3") return CamSel::Conv3;
    throw Error("unknown camsel variant '" + text + "' (none|noconv|conv1x1|conv3)");
}

NoiseType parse_noise(const std::string& text) {
    if (text == "off" || text == "none") return NoiseType::Off;
    if (text.size() == 1) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
        if (c >= 'A' && c <= 'G') return static_cast<NoiseType>(c - 'A' + 1);
    }
    throw Error("unknown noise type '" + text + "' (off|A..G)");
}

bool uses_noise_extractor(NoiseType t) { return t == NoiseType::F || t == NoiseType::G; }

void ModelConfig::validate() const {
    if (extractor_channels.size() < 2) throw Error("model config: extractor needs >= 2 convs");
    if (decoder_channels.empty() || decoder_channels.back() != 1) {
        throw Error("model config: decoder must end with exactly 1 channel");
    }
    if (camsel == CamSel::Conv3 &&
        (selection_channels.size() != 3 || selection_channels.back() != 1)) {
        throw Error("model config: 3-conv selection needs 3 widths ending in 1");
    }
    for (int c : extractor_channels) {
        if (c <= 0) throw Error("model config: channel widths must be positive");
    }
    for (int c : decoder_channels) {
        if (c <= 0) throw Error("model config: channel widths must be positive");
    }
    if (downsample != 4) throw Error("model config: the extractor downsamples by exactly 4");
    if (!(density_scale > 0) || !std::isfinite(density_scale)) {
        throw Error("model config: density_scale must be > 0");
    }
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    append_named(out, "extractor", extractor);
    append_named(out, "selection", selection);
    append_named(out, "noise_extractor", noise_extractor);
    append_named(out, "decoder", decoder);
    return out;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    Model m;
    m.config = config;
    m.params.extractor = make_extractor(config.extractor_channels, rng);
    if (config.camsel == CamSel::Conv1x1) {
        ConvLayer l = make_conv(1, 1, 1, rng);
        l.weight.mutable_data()[0] = 1.0;
        m.params.selection.push_back(std::move(l));
    } else if (config.camsel == CamSel::Conv3) {
        int cin = 1;
        for (std::size_t i = 0; i < config.selection_channels.size(); ++i) {
            const int k = i + 1 < config.selection_channels.size() ? 3 : 1;
            m.params.selection.push_back(make_conv(cin, config.selection_channels[i], k, rng));
            cin = config.selection_channels[i];
        }
    }
    if (uses_noise_extractor(config.noise)) {
        m.params.noise_extractor = make_extractor(config.extractor_channels, rng);
    }
    int cin = config.fusion_channels();
    for (std::size_t i = 0; i < config.decoder_channels.size(); ++i) {
        const bool last = i + 1 == config.decoder_channels.size();
        m.params.decoder.push_back(
            make_conv(cin, config.decoder_channels[i], last ? 1 : 3, rng, last ? 0.1 : 2.0));
        cin = config.decoder_channels[i];
    }
    return m;
}

Model clone_model(const Model& model) {
    Model m;
    m.config = model.config;
    m.params.extractor = clone_layers(model.params.extractor);
    m.params.selection = clone_layers(model.params.selection);
    m.params.noise_extractor = clone_layers(model.params.noise_extractor);
    m.params.decoder = clone_layers(model.params.decoder);
    return m;
}

void zero_model(Model& model) {
    for (auto& [name, t] : model.params.named()) {
        auto d = t.mutable_data();
        std::fill(d.begin(), d.end(), 0.0);
    }
}

// conv, relu, pool, conv, relu, pool, then the remaining convs with relu.
Tensor extract_features(std::span<const ConvLayer> extractor, const Tensor& image) {
    if (image.ndim() != 4 || image.dim(1) != 1) {
        throw Error("extract_features: expected a [1,1,H,W] image, got " +
                    shape_string(image.shape()));
    }
    Tensor x = image;
    for (std::size_t i = 0; i < extractor.size(); ++i) {
        x = relu(conv2d(x, extractor[i].weight, extractor[i].bias, extractor[i].padding, 1));
        if (i < 2) x = max_pool2d(x, 2, 2);
    }
    return x;
}

Sampled project(const Tensor& features, const geom::CameraParams& cam,
                const geom::ScenePlaneGrid& grid, int downsample) {
    return bilinear_sample(features, geom::plane_sampling_grid(cam, grid, downsample));
}

std::vector<Tensor> selection_weights(const ModelParams& params, const ModelConfig& config,
                                      std::span<const geom::CameraParams> cams,
                                      const geom::ScenePlaneGrid& grid) {
    if (config.camsel == CamSel::None) throw Error("selection_weights: camera selection is off");
    std::vector<Tensor> maps, masks;
    for (const auto& cam : cams) {
        const int rows = cam.height / config.downsample, cols = cam.width / config.downsample;
        Tensor d = geom::distance_map(cam, grid, rows, cols).tensor();
        if (config.camsel != CamSel::NoConv) d = run_convs(params.selection, d, false);
        Sampled m = project(d, cam, grid, config.downsample);
        maps.push_back(m.values);
        masks.push_back(m.mask);
    }
    return geom::camera_weight_maps(maps, masks);
}

void inject_noise_view(const ModelParams& params, const ModelConfig& config, NoiseType type,
                       NoiseStage stage, FusionInputs& inputs, std::size_t noise_view,
                       std::span<const geom::CameraParams> cams,
                       const geom::ScenePlaneGrid& grid, Mode mode, Rng& rng,
                       const NoiseSampler& sampler) {
    if (type == NoiseType::Off) return;
    if (mode == Mode::Eval) {
        throw Error("inject_noise_view: noise views exist only in training; got type " +
                    to_string(type) + " in eval mode");
    }
    if (noise_view >= cams.size()) throw Error("inject_noise_view: noise camera out of range");
    const auto& cam = cams[noise_view];
    const auto H = static_cast<std::size_t>(cam.height), W = static_cast<std::size_t>(cam.width);
    const auto C = static_cast<std::size_t>(config.fusion_channels());
    const auto ds = static_cast<std::size_t>(config.downsample);

    auto eps = [&](Shape shape) { return sampler ? sampler(shape, rng) : gaussian(shape, rng); };

    if (stage == NoiseStage::Input) {
        if (type != NoiseType::A) return;
        Tensor& img = inputs.images.at(noise_view);
        img = maximum(img, eps(img.shape()));
        return;
    }

    Tensor noise;
    switch (type) {
        case NoiseType::Off:
        case NoiseType::A: return;
        case NoiseType::B:
            noise = eps({1, C, static_cast<std::size_t>(grid.rows),
                         static_cast<std::size_t>(grid.cols)});
            break;
        case NoiseType::C:
            noise = project(eps({1, C, H / ds, W / ds}), cam, grid, config.downsample).values;
            break;
        case NoiseType::D:
        case NoiseType::E:
            noise = project(extract_features(params.extractor, eps({1, 1, H, W})), cam, grid,
                            config.downsample)
                        .values;
            break;
        case NoiseType::F:
        case NoiseType::G:
            if (params.noise_extractor.empty()) {
                throw Error("inject_noise_view: model has no separate noise extractor");
            }
            noise = project(extract_features(params.noise_extractor, eps({1, 1, H, W})),
                            cam, grid, config.downsample)
                        .values;
            break;
    }
    if (type == NoiseType::E || type == NoiseType::G) {
        inputs.additive = inputs.additive.defined() ? add(inputs.additive, noise) : noise;
    } else {
        inputs.projected.push_back(noise);
    }
}

FusionResult fuse(const Model& model, std::span<const View> views,
                  const geom::ScenePlaneGrid& grid, const ForwardOptions& options, Rng& rng) {
    if (views.empty()) throw Error("forward: empty view list");
    if (options.mode == Mode::Eval && options.noise != NoiseType::Off) {
        throw Error("forward: noise view " + to_string(options.noise) +
                    " requested in eval mode; noise views are removed at test time");
    }
    const auto& cfg = model.config;
    std::vector<geom::CameraParams> cams;
    FusionInputs inputs;
    for (const auto& v : views) {
        cams.push_back(v.camera);
        inputs.images.push_back(v.image);
    }
    std::size_t noise_view = 0;
    if (options.noise != NoiseType::Off) {
        noise_view = std::uniform_int_distribution<std::size_t>(0, views.size() - 1)(rng);
    }
    inject_noise_view(model.params, cfg, options.noise, NoiseStage::Input, inputs, noise_view,
                      cams, grid, options.mode, rng, options.sampler);

    FusionResult result;
    if (cfg.camsel != CamSel::None) {
        result.weights = selection_weights(model.params, cfg, cams, grid);
    }
    for (std::size_t k = 0; k < views.size(); ++k) {
        Tensor f = extract_features(model.params.extractor, inputs.images[k]);
        Tensor p = project(f, cams[k], grid, cfg.downsample).values;
        if (!result.weights.empty()) p = mul(p, result.weights[k]);
        inputs.projected.push_back(p);
    }
    inject_noise_view(model.params, cfg, options.noise, NoiseStage::Projected, inputs, noise_view,
                      cams, grid, options.mode, rng, options.sampler);
    result.pooled = stack_max(inputs.projected);
    if (inputs.additive.defined()) result.pooled = add(result.pooled, inputs.additive);
    return result;
}

Tensor decode(const Model& model, const Tensor& pooled) {
    return scale(run_convs(model.params.decoder, pooled, false), 1.0 / model.config.density_scale);
}

double loss_scale(const ModelConfig& config) {
    return config.density_scale * config.density_scale;
}

Tensor forward(const Model& model, std::span<const View> views, const geom::ScenePlaneGrid& grid,
               const ForwardOptions& options, Rng& rng) {
    Tensor density = decode(model, fuse(model, views, grid, options, rng).pooled);
    return reshape(density, {1, density.dim(2), density.dim(3)});
}

}  // namespace cvcs::net
