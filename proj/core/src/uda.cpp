#include "cvcs/uda.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace cvcs::uda {

namespace {

net::ConvLayer make_layer(int cin, int cout, int k, Rng& rng) {
    net::ConvLayer l;
    l.weight = Tensor({static_cast<std::size_t>(cout), static_cast<std::size_t>(cin),
                       static_cast<std::size_t>(k), static_cast<std::size_t>(k)});
    l.bias = Tensor({static_cast<std::size_t>(cout)});
    l.padding = k / 2;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (cin * k * k)));
    for (double& w : l.weight.mutable_data()) w = normal(rng);
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    return l;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    return sim::mix_seed(seed, stream);
}

train::TrainConfig disc_optimizer_config(const UdaConfig& cfg) {
    train::TrainConfig t = cfg.train;
    t.lr = cfg.disc_lr;
    t.weight_decay = 0.0;
    return t;
}

struct Sample {
    std::size_t scene, frame;
    std::vector<std::size_t> views;
};

Sample draw(const sim::Dataset& data, int K, Rng& rng) {
    Sample s;
    s.scene = std::uniform_int_distribution<std::size_t>(0, data.scenes.size() - 1)(rng);
    const auto& scene = data.scenes[s.scene];
    s.frame = std::uniform_int_distribution<std::size_t>(0, scene.frames.size() - 1)(rng);
    s.views = train::sample_views(scene.cameras.size(), K, rng);
    return s;
}

Tensor pooled_of(const net::Model& model, const sim::Dataset& data, const Sample& s, Rng& rng) {
    const auto& scene = data.scenes[s.scene];
    const auto views = train::gather_views(scene, scene.frames[s.frame], s.views);
    return net::fuse(model, views, scene.grid, {net::Mode::Train, net::NoiseType::Off}, rng)
        .pooled;
}

void check_frames(const sim::Dataset& data, int K, const char* what) {
    if (data.frame_count() == 0) throw Error(std::string("uda: ") + what + " set has no frames");
    for (const auto& s : data.scenes) {
        if (s.frames.empty()) throw Error(std::string("uda: empty scene in ") + what + " set");
        if (static_cast<std::size_t>(K) > s.cameras.size()) {
            throw Error(std::string("uda: K exceeds the views of a ") + what + " scene");
        }
    }
}

UdaResult run(net::Model& model, Discriminator* disc, const sim::Dataset& synthetic,
              const sim::Dataset* target, const UdaConfig& cfg) {
    cfg.validate();
    const auto& tc = cfg.train;
    check_frames(synthetic, tc.K, "synthetic");
    if (target) check_frames(*target, tc.K, "target");

    std::vector<std::pair<std::size_t, std::size_t>> frames;
    for (std::size_t s = 0; s < synthetic.scenes.size(); ++s) {
        for (std::size_t f = 0; f < synthetic.scenes[s].frames.size(); ++f) {
            frames.emplace_back(s, f);
        }
    }
    // Separate streams keep the synthetic branch identical with or without a target.
    Rng rng(tc.seed);
    Rng target_rng(stream_seed(tc.seed, 0x7a49));
    train::Optimizer opt(train::parameters(model), tc);
    std::optional<train::Optimizer> disc_opt;
    if (disc) disc_opt.emplace(parameters(*disc), disc_optimizer_config(cfg));
    const net::ForwardOptions options{net::Mode::Train, net::NoiseType::Off};

    UdaResult result;
    const std::size_t total_steps = frames.size() * static_cast<std::size_t>(tc.P * tc.epochs);
    std::size_t global_step = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const double lr = tc.lr / (1.0 + tc.lr_decay * epoch);
        const double disc_lr = cfg.disc_lr / (1.0 + tc.lr_decay * epoch);
        std::shuffle(frames.begin(), frames.end(), rng);
        double task = 0.0, adv = 0.0;
        std::size_t steps = 0, correct = 0;
        for (const auto& [s, f] : frames) {
            const auto& scene = synthetic.scenes[s];
            const auto& frame = scene.frames[f];
            for (int p = 0; p < tc.P; ++p) {
                const auto idx = train::sample_views(scene.cameras.size(), tc.K, rng);
                const auto patches =
                    train::sample_patches(scene.grid, tc.patches_per_frame, tc.patch_size, rng);
                const auto views = train::gather_views(scene, frame, idx);
                Tape tape;
                const auto fused = net::fuse(model, views, scene.grid, options, rng);
                Tensor density = net::decode(model, fused.pooled);
                Tensor loss = scale(train::mse_loss(density, frame.density, patches),
                                    net::loss_scale(model.config));
                if (!std::isfinite(loss.item())) {
                    throw Error("uda: non-finite task loss at epoch " + std::to_string(epoch));
                }
                task += loss.item();
                if (target) {
                    const Sample ts = draw(*target, tc.K, target_rng);
                    Tensor target_pooled = pooled_of(model, *target, ts, target_rng);
                    Tensor ls = discriminate(*disc, grad_reverse(fused.pooled, cfg.lambda));
                    Tensor lt = discriminate(*disc, grad_reverse(target_pooled, cfg.lambda));
                    correct += (ls.item() > 0) + (lt.item() <= 0);
                    Tensor d = scale(add(bce_with_logits(ls, kSyntheticLabel),
                                         bce_with_logits(lt, kTargetLabel)),
                                     0.5);
                    if (!std::isfinite(d.item())) {
                        throw Error("uda: non-finite discriminator loss at epoch " +
                                    std::to_string(epoch));
                    }
                    adv += d.item();
                    loss = add(loss, d);
                }
                tape.backward(loss);
                opt.step(lr * train::annealed(tc, global_step++, total_steps));
                if (disc_opt) disc_opt->step(disc_lr);
                ++steps;
            }
        }
        const double n = static_cast<double>(steps);
        result.task_loss.push_back(task / n);
        if (target) {
            result.disc_loss.push_back(adv / n);
            result.disc_accuracy.push_back(static_cast<double>(correct) / (2.0 * n));
        }
    }
    return result;
}

}  // namespace

Discriminator init_discriminator(int channels, int width, std::uint64_t seed) {
    if (channels < 1 || width < 1) throw Error("discriminator: channels and width must be >= 1");
    Rng rng(seed);
    Discriminator d;
    d.convs.push_back(make_layer(channels, width, 3, rng));
    d.convs.push_back(make_layer(width, width, 3, rng));
    d.head = make_layer(width, 1, 1, rng);
    return d;
}

std::vector<Tensor> parameters(const Discriminator& disc) {
    std::vector<Tensor> out;
    for (const auto& l : disc.convs) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    out.push_back(disc.head.weight);
    out.push_back(disc.head.bias);
    return out;
}

Tensor discriminate(const Discriminator& disc, const Tensor& pooled) {
    Tensor x = pooled;
    for (const auto& l : disc.convs) x = relu(conv2d(x, l.weight, l.bias, 1, 2));
    x = conv2d(global_avg_pool(x), disc.head.weight, disc.head.bias, 0, 1);
    return reshape(x, {1});
}

Tensor bce_with_logits(const Tensor& logit, double label) {
    if (logit.size() != 1) throw Error("bce_with_logits: expected a single logit");
    if (label < 0.0 || label > 1.0) throw Error("bce_with_logits: label outside [0, 1]");
    const double z = logit.data()[0];
    // max(z, 0) - z y + log(1 + exp(-|z|))
    Tensor out = Tensor::scalar(std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z))));
    if (needs_grad({&logit})) {
        out.set_requires_grad(true);
        Tape::active()->record([logit = logit, out, z, label]() mutable {
            if (!out.has_grad()) return;
            const double sigmoid = 1.0 / (1.0 + std::exp(-z));
            logit.mutable_grad()[0] += out.grad()[0] * (sigmoid - label);
        });
    }
    return out;
}

void UdaConfig::validate() const {
    train.validate();
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("uda: lambda must be >= 0");
    if (disc_width < 1) throw Error("uda: discriminator width must be >= 1");
    if (!(disc_lr > 0)) throw Error("uda: discriminator lr must be > 0");
}

UdaResult uda_finetune(net::Model& model, Discriminator& disc, const sim::Dataset& synthetic,
                       const sim::Dataset& target, const UdaConfig& cfg) {
    if (disc.convs.empty() ||
        disc.convs.front().weight.dim(1) != static_cast<std::size_t>(model.config.fusion_channels())) {
        throw Error("uda: discriminator input channels do not match the fusion plane");
    }
    return run(model, &disc, synthetic, &target, cfg);
}

UdaResult finetune(net::Model& model, const sim::Dataset& synthetic, const UdaConfig& cfg) {
    return run(model, nullptr, synthetic, nullptr, cfg);
}

std::vector<Tensor> pooled_features(const net::Model& model, const sim::Dataset& data, int K,
                                    std::size_t count, std::uint64_t seed) {
    check_frames(data, K, "feature");
    Rng rng(seed);
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < count; ++i) {
        const Sample s = draw(data, K, rng);
        const auto& scene = data.scenes[s.scene];
        const auto views = train::gather_views(scene, scene.frames[s.frame], s.views);
        out.push_back(net::fuse(model, views, scene.grid, {net::Mode::Eval}, rng).pooled);
    }
    return out;
}

Discriminator fit_discriminator(const std::vector<Tensor>& synthetic,
                                const std::vector<Tensor>& target, int width, int epochs,
                                double lr, std::uint64_t seed) {
    if (synthetic.empty() || target.empty()) throw Error("fit_discriminator: empty feature set");
    Discriminator disc = init_discriminator(static_cast<int>(synthetic.front().dim(1)), width, seed);
    train::TrainConfig tc;
    tc.lr = lr;
    tc.weight_decay = 0.0;
    train::Optimizer opt(parameters(disc), tc);
    std::vector<std::pair<const Tensor*, double>> items;
    for (const auto& t : synthetic) items.emplace_back(&t, kSyntheticLabel);
    for (const auto& t : target) items.emplace_back(&t, kTargetLabel);
    Rng rng(stream_seed(seed, 0xd15c));
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(items.begin(), items.end(), rng);
        for (const auto& [feature, label] : items) {
            Tape tape;
            tape.backward(bce_with_logits(discriminate(disc, *feature), label));
            opt.step(lr);
        }
    }
    return disc;
}

double discriminator_accuracy(const Discriminator& disc, const std::vector<Tensor>& synthetic,
                              const std::vector<Tensor>& target) {
    if (synthetic.empty() && target.empty()) throw Error("discriminator_accuracy: no features");
    std::size_t correct = 0;
    for (const auto& t : synthetic) correct += discriminate(disc, t).item() > 0;
    for (const auto& t : target) correct += discriminate(disc, t).item() <= 0;
    return static_cast<double>(correct) / static_cast<double>(synthetic.size() + target.size());
}

}  // namespace cvcs::uda
