#pragma once

// Ablation harness: trains and evaluates each configuration of a suite over a
// list of seeds and tabulates the per-seed metrics.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cvcs/model.hpp"
#include "cvcs/sim.hpp"
#include "cvcs/train.hpp"

namespace cvcs::ablation {

enum class Suite { CamSel, Noise, Combine, Views };

std::string to_string(Suite s);
Suite parse_suite(const std::string& text);

struct Variant {
    std::string name;
    net::ModelConfig model;
    int eval_K = 0;  // <= 0: the training K
};

/// camsel:  Backbone and the three selection mappings.
/// noise:   Backbone and noise types A-G.
/// combine: Backbone and {1x1, 3-conv} selection x noise types D-G.
/// views:   the full model (1x1 selection, type D) at K = 3, 5, 7, 9, 11.
std::vector<Variant> suite_variants(Suite suite, const net::ModelConfig& base);

struct Options {
    net::ModelConfig base;       // channel widths shared by every variant
    train::TrainConfig train;    // seed is overridden per run
    std::size_t n_train = 12;    // scenes [0, n_train) train, the rest test
    int eval_trials = 0;         // <= 0: ceil(V/K) + 1
    int threads = 1;
    std::function<void(const std::string&)> log;
};

struct Row {
    std::string config;
    std::uint64_t seed = 0;
    double mae = 0.0;
    double nae = 0.0;
    std::size_t frames = 0;
};

/// Trains a model for one (config, seed) pair. The init and training seeds
/// are both derived from `seed`.
net::Model train_variant(const sim::Dataset& train_set, const net::ModelConfig& config,
                         const train::TrainConfig& cfg, std::uint64_t seed);

/// One row per (variant, seed), variants in suite order. Variants sharing a
/// model configuration (the views suite) reuse a single trained model per seed.
std::vector<Row> run_suite(const sim::Dataset& data, Suite suite,
                           const std::vector<std::uint64_t>& seeds, const Options& options);

/// Header `config,seed,mae,nae,frames`.
std::string rows_csv(const std::vector<Row>& rows);

struct Summary {
    std::string config;
    double mae_mean = 0.0, mae_sd = 0.0;
    double nae_mean = 0.0, nae_sd = 0.0;
    std::size_t runs = 0;
};

/// Mean and sample standard deviation per config, in first-seen order.
std::vector<Summary> summarize(const std::vector<Row>& rows);
std::string summary_table(const std::vector<Summary>& summary);

}  // namespace cvcs::ablation
