#include "cvcs/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cvcs/parallel.hpp"

namespace cvcs::train {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& text) {
    if (text == "sgd") return OptimizerKind::Sgd;
    if (text == "adam") return OptimizerKind::Adam;
    throw Error("unknown optimizer '" + text + "' (sgd|adam)");
}

void TrainConfig::validate() const {
    if (K < 1) throw Error("train config: K must be >= 1");
    if (P < 1) throw Error("train config: P must be >= 1");
    if (epochs < 0) throw Error("train config: epochs must be >= 0");
    if (patches_per_frame < 1) throw Error("train config: need at least one patch");
    if (patch_size < 1) throw Error("train config: patch size must be >= 1");
    if (!(lr > 0)) throw Error("train config: lr must be > 0");
    if (!(lr_decay >= 0)) throw Error("train config: lr_decay must be >= 0");
    if (!(lr_final > 0 && lr_final <= 1)) throw Error("train config: lr_final must be in (0, 1]");
    if (!(weight_decay >= 0)) throw Error("train config: weight_decay must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw Error("train config: momentum must be in [0, 1)");
}

double annealed(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (total_steps <= 1) return 1.0;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return 1.0 + (cfg.lr_final - 1.0) * t;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"lr_decay", c.lr_decay},
            {"lr_final", c.lr_final},
            {"weight_decay", c.weight_decay},
            {"momentum", c.momentum},
            {"optimizer", to_string(c.optimizer)},
            {"epochs", c.epochs},
            {"K", c.K},
            {"P", c.P},
            {"patches_per_frame", c.patches_per_frame},
            {"patch_size", c.patch_size},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (!j.is_object()) throw Error("train config: expected a JSON object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "lr") c.lr = value.get<double>();
            else if (key == "lr_decay") c.lr_decay = value.get<double>();
            else if (key == "lr_final") c.lr_final = value.get<double>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "momentum") c.momentum = value.get<double>();
            else if (key == "optimizer") c.optimizer = parse_optimizer(value.get<std::string>());
            else if (key == "epochs") c.epochs = value.get<int>();
            else if (key == "K") c.K = value.get<int>();
            else if (key == "P") c.P = value.get<int>();
            else if (key == "patches_per_frame") c.patches_per_frame = value.get<int>();
            else if (key == "patch_size") c.patch_size = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw Error("train config: unknown key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

Tensor mse_loss(const Tensor& pred, const Tensor& gt, std::span<const Rect> patches) {
    if (patches.empty()) throw Error("mse_loss: empty patch list");
    if (pred.size() != gt.size() || pred.ndim() < 2) {
        throw Error("mse_loss: prediction " + shape_string(pred.shape()) +
                    " does not match ground truth " + shape_string(gt.shape()));
    }
    const std::size_t rows = pred.dim(pred.ndim() - 2), cols = pred.dim(pred.ndim() - 1);
    if (rows * cols != pred.size()) throw Error("mse_loss: expected a single-channel map");
    std::vector<std::uint8_t> in(rows * cols, 0);
    for (const auto& r : patches) {
        if (r.row < 0 || r.col < 0 || r.rows < 1 || r.cols < 1 ||
            static_cast<std::size_t>(r.row + r.rows) > rows ||
            static_cast<std::size_t>(r.col + r.cols) > cols) {
            throw Error("mse_loss: patch outside the grid");
        }
        for (int i = r.row; i < r.row + r.rows; ++i) {
            std::fill_n(in.begin() + static_cast<long>(static_cast<std::size_t>(i) * cols + r.col),
                        r.cols, 1);
        }
    }
    const double count = static_cast<double>(std::count(in.begin(), in.end(), 1));
    auto p = pred.data();
    auto g = gt.data();
    double total = 0.0;
    for (std::size_t q = 0; q < in.size(); ++q) {
        if (in[q]) total += (p[q] - g[q]) * (p[q] - g[q]);
    }
    Tensor out = Tensor::scalar(total / count);
    ensure_finite(out, "mse_loss");
    if (needs_grad({&pred})) {
        out.set_requires_grad(true);
        Tape::active()->record([pred = pred, gt = gt, out, in = std::move(in), count]() mutable {
            if (!out.has_grad()) return;
            const double go = out.grad()[0];
            auto p = pred.data();
            auto g = gt.data();
            auto gp = pred.mutable_grad();
            for (std::size_t q = 0; q < in.size(); ++q) {
                if (in[q]) gp[q] += go * 2.0 * (p[q] - g[q]) / count;
            }
        });
    }
    return out;
}

Optimizer::Optimizer(std::vector<Tensor> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      kind_(cfg.optimizer),
      weight_decay_(cfg.weight_decay),
      momentum_(cfg.momentum) {
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        if (kind_ == OptimizerKind::Adam) v_.emplace_back(p.size(), 0.0);
    }
}

void Optimizer::step(double lr) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        auto w = p.mutable_data();
        auto g = p.grad();
        auto& m = m_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double grad = g[j] + weight_decay_ * w[j];
            if (kind_ == OptimizerKind::Sgd) {
                m[j] = momentum_ * m[j] + grad;
                w[j] -= lr * m[j];
            } else {
                auto& v = v_[i];
                m[j] = kBeta1 * m[j] + (1 - kBeta1) * grad;
                v[j] = kBeta2 * v[j] + (1 - kBeta2) * grad * grad;
                w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + kEps);
            }
        }
    }
    zero_grad();
}

void Optimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

std::vector<Tensor> parameters(const net::Model& model) {
    std::vector<Tensor> out;
    for (auto& [name, t] : model.params.named()) out.push_back(t);
    return out;
}

std::vector<std::size_t> sample_views(std::size_t available, int K, Rng& rng) {
    if (K < 1 || static_cast<std::size_t>(K) > available) {
        throw Error("sample_views: K=" + std::to_string(K) + " but only " +
                    std::to_string(available) + " views are available");
    }
    std::vector<std::size_t> idx(available);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(K); ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, available - 1)(rng);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(K));
    return idx;
}

std::vector<Rect> sample_patches(const geom::ScenePlaneGrid& grid, int count, int size, Rng& rng) {
    const int rows = std::min(size, grid.rows), cols = std::min(size, grid.cols);
    std::vector<Rect> out;
    for (int i = 0; i < count; ++i) {
        const int r = std::uniform_int_distribution<int>(0, grid.rows - rows)(rng);
        const int c = std::uniform_int_distribution<int>(0, grid.cols - cols)(rng);
        out.push_back({r, c, rows, cols});
    }
    return out;
}

std::vector<net::View> gather_views(const sim::Scene& scene, const sim::CrowdFrame& frame,
                                    std::span<const std::size_t> indices) {
    std::vector<net::View> views;
    for (auto i : indices) views.push_back({frame.images.at(i), scene.cameras.at(i)});
    return views;
}

TrainResult train(net::Model& model, const sim::Dataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.frame_count() == 0) throw Error("train: dataset has no frames");
    for (const auto& s : data.scenes) {
        if (static_cast<std::size_t>(cfg.K) > s.cameras.size()) {
            throw Error("train: K=" + std::to_string(cfg.K) + " exceeds the " +
                        std::to_string(s.cameras.size()) + " views of scene " +
                        std::to_string(s.id));
        }
    }
    std::vector<std::pair<std::size_t, std::size_t>> frames;
    for (std::size_t s = 0; s < data.scenes.size(); ++s) {
        for (std::size_t f = 0; f < data.scenes[s].frames.size(); ++f) frames.emplace_back(s, f);
    }

    Rng rng(cfg.seed);
    Optimizer opt(parameters(model), cfg);
    const net::ForwardOptions options{net::Mode::Train, model.config.noise};
    TrainResult result;
    const std::size_t total_steps = frames.size() * static_cast<std::size_t>(cfg.P * cfg.epochs);
    std::size_t global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double epoch_lr = cfg.lr / (1.0 + cfg.lr_decay * epoch);
        std::shuffle(frames.begin(), frames.end(), rng);
        double total = 0.0;
        std::size_t steps = 0;
        for (const auto& [s, f] : frames) {
            const auto& scene = data.scenes[s];
            const auto& frame = scene.frames[f];
            for (int p = 0; p < cfg.P; ++p) {
                const auto idx = sample_views(scene.cameras.size(), cfg.K, rng);
                const auto patches = sample_patches(scene.grid, cfg.patches_per_frame,
                                                    cfg.patch_size, rng);
                const auto views = gather_views(scene, frame, idx);
                Tape tape;
                Tensor pred = net::forward(model, views, scene.grid, options, rng);
                Tensor loss = scale(mse_loss(pred, frame.density, patches),
                                    net::loss_scale(model.config));
                if (!std::isfinite(loss.item())) {
                    throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                ", scene " + std::to_string(scene.id) + ", frame " +
                                std::to_string(f));
                }
                tape.backward(loss);
                opt.step(epoch_lr * annealed(cfg, global_step++, total_steps));
                total += loss.item();
                ++steps;
            }
        }
        result.epoch_loss.push_back(total / static_cast<double>(steps));
        if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
    }
    return result;
}

EvalReport summarize(std::vector<CountRecord> records) {
    EvalReport r;
    r.records = std::move(records);
    double abs_sum = 0.0, norm_sum = 0.0;
    std::size_t normalized = 0;
    for (const auto& rec : r.records) {
        const double err = std::abs(rec.predicted - rec.truth);
        abs_sum += err;
        if (rec.truth > 0) {
            norm_sum += err / rec.truth;
            ++normalized;
        }
    }
    r.frames = r.records.size();
    r.mae = r.frames ? abs_sum / static_cast<double>(r.frames) : 0.0;
    r.nae = normalized ? norm_sum / static_cast<double>(normalized) : 0.0;
    return r;
}

EvalReport evaluate(const net::Model& model, const sim::Dataset& data, int K, int trials,
                    std::uint64_t seed, int threads) {
    std::vector<std::pair<std::size_t, std::size_t>> frames;
    for (std::size_t s = 0; s < data.scenes.size(); ++s) {
        const std::size_t V = data.scenes[s].cameras.size();
        if (K < 1 || static_cast<std::size_t>(K) > V) {
            throw Error("evaluate: K=" + std::to_string(K) + " exceeds the " + std::to_string(V) +
                        " views of scene " + std::to_string(data.scenes[s].id));
        }
        for (std::size_t f = 0; f < data.scenes[s].frames.size(); ++f) frames.emplace_back(s, f);
    }
    std::vector<std::vector<CountRecord>> per_frame(frames.size());
    parallel_for(frames.size(), threads, [&](std::size_t i) {
        const auto [s, f] = frames[i];
        const auto& scene = data.scenes[s];
        const auto& frame = scene.frames[f];
        const std::size_t V = scene.cameras.size();
        const int n = trials > 0 ? trials
                                 : static_cast<int>((V + static_cast<std::size_t>(K) - 1) /
                                                    static_cast<std::size_t>(K)) + 1;
        std::seed_seq sequence{seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(f)};
        Rng rng(sequence);
        double truth = 0.0;
        for (double v : frame.density.data()) truth += v;
        truth = std::round(truth);
        if (!frame.people.empty()) truth = static_cast<double>(frame.people.size());
        for (int t = 0; t < n; ++t) {
            const auto idx = sample_views(V, K, rng);
            const auto views = gather_views(scene, frame, idx);
            Tensor pred = net::forward(model, views, scene.grid, {net::Mode::Eval}, rng);
            double count = 0.0;
            for (double v : pred.data()) count += v;
            per_frame[i].push_back({scene.id, static_cast<int>(f), t, count, truth});
        }
    });
    std::vector<CountRecord> all;
    for (auto& v : per_frame) all.insert(all.end(), v.begin(), v.end());
    return summarize(std::move(all));
}

std::pair<sim::Dataset, sim::Dataset> split_scenes(const sim::Dataset& data, std::size_t n_train) {
    if (n_train > data.scenes.size()) throw Error("split_scenes: not enough scenes");
    sim::Dataset a, b;
    a.scenes.assign(data.scenes.begin(), data.scenes.begin() + static_cast<long>(n_train));
    b.scenes.assign(data.scenes.begin() + static_cast<long>(n_train), data.scenes.end());
    return {a, b};
}

std::string loss_curve_csv(std::span<const double> epoch_loss) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < epoch_loss.size(); ++e) os << e << ',' << epoch_loss[e] << '\n';
    return os.str();
}

}  // namespace cvcs::train
