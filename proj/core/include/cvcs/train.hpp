#pragma once

// Supervised training on scene-plane density maps and count evaluation.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvcs/model.hpp"
#include "cvcs/sim.hpp"
#include "json.hpp"

namespace cvcs::train {

using Rng = std::mt19937_64;

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& text);

struct TrainConfig {
    double lr = 1e-3;
    double lr_decay = 1e-4;  // lr_epoch = lr / (1 + lr_decay * epoch)
    // Per-step linear ramp of the rate from 1 to this factor over the whole
    // run, applied on top of lr_decay. 1 disables it.
    double lr_final = 1.0;
    double weight_decay = 1e-4;
    double momentum = 0.0;  // SGD only
    OptimizerKind optimizer = OptimizerKind::Adam;
    int epochs = 1;
    int K = 5;                  // views per sample
    int P = 5;                  // view resamples per frame per epoch
    int patches_per_frame = 4;
    int patch_size = 32;        // grid cells
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; the result is validated.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Factor of the lr_final ramp at `step` of `total_steps`.
double annealed(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

struct Rect {
    int row = 0, col = 0, rows = 0, cols = 0;
};

/// Mean squared error over the union of the patch pixels.
Tensor mse_loss(const Tensor& pred, const Tensor& gt, std::span<const Rect> patches);

/// SGD (optional momentum) or Adam with L2 weight decay folded into the
/// gradient. Parameters are updated in place; grads are zeroed after a step.
class Optimizer {
public:
    Optimizer(std::vector<Tensor> params, const TrainConfig& cfg);
    void step(double lr);
    void zero_grad();

private:
    std::vector<Tensor> params_;
    OptimizerKind kind_;
    double weight_decay_;
    double momentum_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

std::vector<Tensor> parameters(const net::Model& model);

/// Uniform random K-subset of view indices, in sampled order.
std::vector<std::size_t> sample_views(std::size_t available, int K, Rng& rng);
std::vector<Rect> sample_patches(const geom::ScenePlaneGrid& grid, int count, int size, Rng& rng);
std::vector<net::View> gather_views(const sim::Scene& scene, const sim::CrowdFrame& frame,
                                    std::span<const std::size_t> indices);

struct TrainResult {
    std::vector<double> epoch_loss;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Trains in place. Deterministic given cfg.seed.
TrainResult train(net::Model& model, const sim::Dataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct CountRecord {
    int scene = 0;
    int frame = 0;
    int trial = 0;
    double predicted = 0.0;
    double truth = 0.0;
};

struct EvalReport {
    std::vector<CountRecord> records;
    double mae = 0.0;
    double nae = 0.0;
    std::size_t frames = 0;  // records entering MAE
};

/// MAE over all pairs; NAE over pairs with truth > 0.
EvalReport summarize(std::vector<CountRecord> records);

/// Draws `trials` random K-subsets per frame (trials <= 0: ceil(V/K) + 1) and
/// compares summed density with the ground-truth count.
EvalReport evaluate(const net::Model& model, const sim::Dataset& data, int K, int trials,
                    std::uint64_t seed, int threads = 1);

/// Scenes [0, n_train) for training, the remaining scenes for testing.
std::pair<sim::Dataset, sim::Dataset> split_scenes(const sim::Dataset& data, std::size_t n_train);

std::string loss_curve_csv(std::span<const double> epoch_loss);

}  // namespace cvcs::train
