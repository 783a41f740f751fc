#pragma once

// Unsupervised domain adaptation: a feature discriminator on the view-pooled
// scene-plane features, trained adversarially through gradient reversal while
// the counting loss is computed on labeled synthetic data only.

#include <cstdint>
#include <vector>

#include "cvcs/model.hpp"
#include "cvcs/sim.hpp"
#include "cvcs/train.hpp"

namespace cvcs::uda {

using Rng = std::mt19937_64;

/// conv3x3/2 -> relu -> conv3x3/2 -> relu -> global average -> 1x1 head.
struct Discriminator {
    std::vector<net::ConvLayer> convs;
    net::ConvLayer head;
};

Discriminator init_discriminator(int channels, int width, std::uint64_t seed);
std::vector<Tensor> parameters(const Discriminator& disc);

/// Logit of "synthetic" for one pooled feature [1, C, Hs, Ws]; shape {1}.
Tensor discriminate(const Discriminator& disc, const Tensor& pooled);

/// Numerically stable binary cross-entropy on a logit of shape {1}.
Tensor bce_with_logits(const Tensor& logit, double label);

inline constexpr double kSyntheticLabel = 1.0;
inline constexpr double kTargetLabel = 0.0;

struct UdaConfig {
    double lambda = 0.1;
    train::TrainConfig train;  // lr schedule, K, P, patches, epochs, seed
    int disc_width = 16;
    double disc_lr = 1e-3;

    void validate() const;
};

struct UdaResult {
    std::vector<double> task_loss;           // per-epoch mean synthetic MSE
    std::vector<double> disc_loss;           // per-epoch mean discriminator BCE
    std::vector<double> disc_accuracy;       // per-epoch running accuracy
};

/// Adversarial fine-tuning. `target` is read for images and cameras only; its
/// labels are never touched. Noise views are disabled in both branches.
UdaResult uda_finetune(net::Model& model, Discriminator& disc, const sim::Dataset& synthetic,
                       const sim::Dataset& target, const UdaConfig& cfg);

/// The same synthetic sampling and updates as uda_finetune without the
/// target branch; uda_finetune with lambda = 0 reproduces it exactly.
UdaResult finetune(net::Model& model, const sim::Dataset& synthetic, const UdaConfig& cfg);

/// View-pooled features of `count` random (frame, K-subset) draws, no tape.
std::vector<Tensor> pooled_features(const net::Model& model, const sim::Dataset& data, int K,
                                    std::size_t count, std::uint64_t seed);

/// Fits a fresh discriminator to separate two cached feature sets.
Discriminator fit_discriminator(const std::vector<Tensor>& synthetic,
                                const std::vector<Tensor>& target, int width, int epochs,
                                double lr, std::uint64_t seed);

/// Fraction of features classified correctly (logit > 0 means synthetic).
double discriminator_accuracy(const Discriminator& disc, const std::vector<Tensor>& synthetic,
                              const std::vector<Tensor>& target);

}  // namespace cvcs::uda
