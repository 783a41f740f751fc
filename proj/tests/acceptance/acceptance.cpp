// Acceptance harness: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cvcs/ablation.hpp"
#include "cvcs/cvt_io.hpp"
#include "cvcs/geometry.hpp"
#include "cvcs/model.hpp"
#include "cvcs/sim.hpp"
#include "cvcs/train.hpp"
#include "cvcs/uda.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace cvcs;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

void log(const std::string& line) { std::cerr << "  . " << line << std::endl; }

// --- toy benchmark and recipe ---------------------------------------------

constexpr std::uint64_t kDataSeed = 0;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};
constexpr std::size_t kTrainScenes = 12;

std::vector<sim::SceneSpec> toy_specs(std::size_t count, std::uint64_t first_seed = 0,
                                      sim::Style style = sim::Style::SynthA) {
    std::vector<sim::SceneSpec> specs(count);
    for (std::size_t i = 0; i < count; ++i) {
        specs[i].seed = first_seed + i;
        specs[i].style = style;
    }
    return specs;
}

const sim::Dataset& toy() {
    static const sim::Dataset data = sim::generate_dataset(toy_specs(16), kDataSeed);
    return data;
}

net::ModelConfig base_model() {
    net::ModelConfig c;
    c.extractor_channels = {8, 8, 16, 16};
    c.decoder_channels = {16, 8, 1};
    return c;
}

// Adam with a linear anneal to 2% of the rate; P = 4 view draws per frame
// keeps the four criterion-4 configurations x 3 seeds under 30 CPU minutes.
train::TrainConfig recipe() {
    train::TrainConfig t;
    t.optimizer = train::OptimizerKind::Adam;
    t.lr = 1e-3;
    t.lr_final = 0.02;
    t.epochs = 3;
    t.P = 4;
    return t;
}

net::ModelConfig variant(net::CamSel camsel, net::NoiseType noise) {
    net::ModelConfig c = base_model();
    c.camsel = camsel;
    c.noise = noise;
    return c;
}

// Trained models and their toy test-set MAE, shared across criteria.
struct Trained {
    std::vector<net::Model> models;  // one per seed
    std::vector<double> mae;
    double mean() const { return std::accumulate(mae.begin(), mae.end(), 0.0) / mae.size(); }
};

std::map<std::string, Trained>& cache() {
    static std::map<std::string, Trained> c;
    return c;
}

const Trained& trained(const std::string& name, const net::ModelConfig& config) {
    auto it = cache().find(name);
    if (it != cache().end()) return it->second;
    const auto [train_set, test_set] = train::split_scenes(toy(), kTrainScenes);
    Trained t;
    for (std::uint64_t seed : kSeeds) {
        const double start = cpu_seconds();
        t.models.push_back(ablation::train_variant(train_set, config, recipe(), seed));
        const auto r = train::evaluate(t.models.back(), test_set, recipe().K, 0,
                                       sim::mix_seed(seed, 3));
        t.mae.push_back(r.mae);
        log(name + " seed " + std::to_string(seed) + ": MAE " + fmt("%.3f", r.mae) + " (" +
            fmt("%.0f", cpu_seconds() - start) + " s cpu)");
    }
    return cache().emplace(name, std::move(t)).first->second;
}

const Trained& backbone() { return trained("Backbone", variant(net::CamSel::None, net::NoiseType::Off)); }
const Trained& camsel() { return trained("CamSel", variant(net::CamSel::Conv1x1, net::NoiseType::Off)); }
const Trained& noise(net::NoiseType n) {
    return trained("NoiseV-" + net::to_string(n), variant(net::CamSel::None, n));
}
const Trained& cvcs_full() { return trained("CVCS", variant(net::CamSel::Conv1x1, net::NoiseType::D)); }

// --- 1: gradient suite ------------------------------------------------------

struct GradSuite {
    std::vector<std::string> failures;
    double worst = 0.0;
    std::size_t cases = 0;

    void check(const std::string& name, const testing::GradCheck& r, double tol = 1e-4) {
        ++cases;
        worst = std::max(worst, r.relative_error());
        if (!(r.relative_error() < tol) || r.checked == 0) failures.push_back(name);
    }
};

sim::Scene grad_scene() {
    sim::SceneSpec s;
    s.seed = 21;
    s.extent = 6;
    s.people_min = 4;
    s.people_max = 8;
    s.n_views = 4;
    s.n_frames = 1;
    s.image_width = 24;
    s.image_height = 16;
    return sim::generate_scene(0, s);
}

Verdict gradient_suite() {
    const double start = cpu_seconds();
    std::mt19937_64 rng(1);
    using testing::gradient_check;
    using testing::random_tensor;
    using testing::weighted_sum;
    GradSuite g;

    {
        Tensor x = random_tensor({2, 3, 7, 8}, rng), k = random_tensor({4, 3, 3, 3}, rng);
        Tensor b = random_tensor({4}, rng);
        g.check("conv2d pad1", gradient_check([&] { return weighted_sum(conv2d(x, k, b, 1, 1)); },
                                              {x, k, b}));
        g.check("conv2d stride2", gradient_check([&] { return weighted_sum(conv2d(x, k, b, 0, 2)); },
                                                 {x, k, b}));
    }
    {
        // Values kept away from the relu kink and from max-pool ties.
        Tensor x = random_tensor({1, 2, 6, 6}, rng);
        for (double& v : x.mutable_data()) v += v > 0 ? 0.05 : -0.05;
        g.check("relu", gradient_check([&] { return weighted_sum(relu(x)); }, {x}));
        g.check("max_pool2d", gradient_check([&] { return weighted_sum(max_pool2d(x, 2, 2)); }, {x}));
        g.check("global_avg_pool",
                gradient_check([&] { return weighted_sum(global_avg_pool(x)); }, {x}));
        g.check("reshape", gradient_check([&] { return weighted_sum(reshape(x, {2, 36})); }, {x}));
        g.check("scale", gradient_check([&] { return weighted_sum(scale(x, -1.7)); }, {x}));
        g.check("reduce_sum", gradient_check([&] { return scale(reduce_sum(mul(x, x)), 0.5); }, {x}));
    }
    {
        Tensor f = random_tensor({1, 2, 5, 6}, rng);
        SamplingGrid grid;
        grid.rows = 4;
        grid.cols = 7;
        std::uniform_real_distribution<double> u(-0.7, 5.6);
        for (std::size_t i = 0; i < grid.rows * grid.cols; ++i) {
            grid.uv.push_back(u(rng));
            grid.uv.push_back(u(rng) * 0.75);
        }
        g.check("bilinear_sample",
                gradient_check([&] { return weighted_sum(bilinear_sample(f, grid).values); }, {f}));
    }
    {
        std::vector<Tensor> views;
        for (int i = 0; i < 3; ++i) views.push_back(random_tensor({1, 2, 3, 4}, rng));
        g.check("stack_max", gradient_check([&] { return weighted_sum(stack_max(views)); }, views));
        Tensor a = random_tensor({1, 3, 4, 5}, rng), b = random_tensor({1, 1, 4, 5}, rng);
        g.check("add", gradient_check([&] { return weighted_sum(add(a, b)); }, {a, b}));
        g.check("sub", gradient_check([&] { return weighted_sum(sub(a, b)); }, {a, b}));
        g.check("mul", gradient_check([&] { return weighted_sum(mul(a, b)); }, {a, b}));
        Tensor c = random_tensor({1, 3, 4, 5}, rng);
        g.check("maximum", gradient_check([&] { return weighted_sum(maximum(a, c)); }, {a, c}));
    }
    {
        // Forward identity, backward -lambda: compare the tape with -lambda
        // times the finite difference of the forward.
        Tensor x = random_tensor({1, 2, 3, 3}, rng);
        const auto fd = gradient_check([&] { return weighted_sum(x); }, {x});
        x.zero_grad();
        {
            Tape tape;
            tape.backward(weighted_sum(grad_reverse(x, 0.4)));
        }
        const std::vector<double> reversed(x.grad().begin(), x.grad().end());
        x.zero_grad();
        {
            Tape tape;
            tape.backward(weighted_sum(x));
        }
        testing::GradCheck r = fd;
        r.max_abs_error = 0.0;
        for (std::size_t i = 0; i < reversed.size(); ++i) {
            r.max_abs_error = std::max(r.max_abs_error, std::abs(reversed[i] + 0.4 * x.grad()[i]));
        }
        g.check("grad_reverse", r);
    }
    {
        Tensor pred = random_tensor({1, 6, 6}, rng);
        const Tensor gt = random_tensor({1, 6, 6}, rng, 0, 1, false);
        const train::Rect patches[] = {{0, 0, 4, 4}, {3, 2, 3, 4}};
        g.check("mse_loss",
                gradient_check([&] { return train::mse_loss(pred, gt, patches); }, {pred}));
        Tensor z = random_tensor({1}, rng, -2, 2);
        g.check("bce_with_logits",
                gradient_check([&] { return uda::bce_with_logits(z, 1.0); }, {z}));
        std::vector<Tensor> maps, masks;
        for (int v = 0; v < 3; ++v) {
            maps.push_back(random_tensor({1, 1, 4, 5}, rng, 0.5, 2.5));
            Tensor m({4, 5}, 1.0);
            m.mutable_data()[static_cast<std::size_t>(v * 4)] = 0.0;
            masks.push_back(m);
        }
        g.check("camera_weight_maps", gradient_check([&] {
                    Tensor s;
                    const auto w = geom::camera_weight_maps(maps, masks);
                    for (std::size_t k = 0; k < w.size(); ++k) {
                        const Tensor t = weighted_sum(w[k], 20 + k);
                        s = s.defined() ? add(s, t) : t;
                    }
                    return s;
                }, maps));
    }

    // End-to-end forward for every selection mapping and noise type.
    const sim::Scene scene = grad_scene();
    std::vector<net::View> views;
    for (std::size_t i = 0; i < 3; ++i) views.push_back({scene.frames[0].images[i], scene.cameras[i]});
    std::vector<std::pair<net::CamSel, net::NoiseType>> cases;
    for (auto c : {net::CamSel::None, net::CamSel::NoConv, net::CamSel::Conv1x1, net::CamSel::Conv3}) {
        cases.emplace_back(c, net::NoiseType::Off);
    }
    for (auto n : {net::NoiseType::A, net::NoiseType::B, net::NoiseType::C, net::NoiseType::D,
                   net::NoiseType::E, net::NoiseType::F, net::NoiseType::G}) {
        cases.emplace_back(net::CamSel::None, n);
        cases.emplace_back(net::CamSel::Conv3, n);
    }
    for (const auto& [cs, nz] : cases) {
        net::ModelConfig c;
        c.extractor_channels = {3, 4};
        c.decoder_channels = {3, 1};
        c.selection_channels = {2, 2, 1};
        c.camsel = cs;
        c.noise = nz;
        net::Model m = net::init_model(c, 8);
        std::mt19937_64 init(12);
        std::uniform_real_distribution<double> u(0.02, 0.1);
        std::vector<Tensor> params;
        for (auto& [name, t] : m.params.named()) {
            if (name.ends_with(".bias")) {
                for (double& b : t.mutable_data()) b = u(init);
            }
            params.push_back(t);
        }
        const net::Mode mode = nz == net::NoiseType::Off ? net::Mode::Eval : net::Mode::Train;
        auto loss = [&] {
            net::Rng r(17);
            return weighted_sum(net::forward(m, views, scene.grid, {mode, nz}, r), 4);
        };
        g.check("forward " + net::to_string(cs) + "+" + net::to_string(nz),
                gradient_check(loss, params, 1e-6, 6));
    }

    const double secs = cpu_seconds() - start;
    std::string detail = std::to_string(g.cases) + " checks, worst rel err " +
                         fmt("%.2e", g.worst) + ", " + fmt("%.1f", secs) + " s cpu (< 120)";
    for (const auto& f : g.failures) detail += "; failed: " + f;
    return {g.failures.empty() && secs < 120.0, detail};
}

// --- 2: geometry oracles ----------------------------------------------------

// Independent back-projection: camera center C = -R^T T, ray direction
// R^T K^-1 [u, v, 1], intersected with z = h.
std::optional<geom::Vec3> oracle_plane_point(const geom::CameraParams& cam, double u, double v,
                                             double h) {
    const auto& R = cam.R;
    const double C[3] = {-(R[0] * cam.T[0] + R[3] * cam.T[1] + R[6] * cam.T[2]),
                         -(R[1] * cam.T[0] + R[4] * cam.T[1] + R[7] * cam.T[2]),
                         -(R[2] * cam.T[0] + R[5] * cam.T[1] + R[8] * cam.T[2])};
    const double r[3] = {(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
    const double d[3] = {R[0] * r[0] + R[3] * r[1] + R[6] * r[2],
                         R[1] * r[0] + R[4] * r[1] + R[7] * r[2],
                         R[2] * r[0] + R[5] * r[1] + R[8] * r[2]};
    if (std::abs(d[2]) < 1e-12) return std::nullopt;
    const double t = (h - C[2]) / d[2];
    if (t <= 0) return std::nullopt;
    return geom::Vec3{C[0] + t * d[0], C[1] + t * d[1], h};
}

Verdict geometry_oracles() {
    const sim::Scene& scene = toy().scenes[0];
    double dist_err = 0.0, trip_err = 0.0;
    std::size_t mask_mismatch = 0, pixels = 0, trips = 0;
    for (const auto& cam : scene.cameras) {
        for (auto [rows, cols] : {std::pair{cam.height / 4, cam.width / 4},
                                  std::pair{cam.height, cam.width}}) {
            const geom::DistanceMap dm = geom::distance_map(cam, scene.grid, rows, cols);
            for (int r = 0; r < rows; ++r) {
                for (int c = 0; c < cols; ++c) {
                    const double u = (c + 0.5) * cam.width / cols - 0.5;
                    const double v = (r + 0.5) * cam.height / rows - 0.5;
                    const auto X = oracle_plane_point(cam, u, v, scene.grid.h_avg);
                    const std::size_t i = static_cast<std::size_t>(r * cols + c);
                    if (!X) {
                        mask_mismatch += dm.valid[i] != 0;
                        continue;
                    }
                    mask_mismatch += dm.valid[i] != 1;
                    const geom::Vec3 C = cam.center();
                    const double oracle = std::log(std::hypot((*X)[0] - C[0], (*X)[1] - C[1],
                                                              (*X)[2] - C[2]));
                    dist_err = std::max(dist_err, std::abs(dm.values[i] - oracle));
                    ++pixels;
                }
            }
        }
        for (int r = 0; r < scene.grid.rows; r += 3) {
            for (int c = 0; c < scene.grid.cols; c += 3) {
                const geom::Vec3 X = scene.grid.world(r, c);
                const auto p = geom::world_to_image(cam, X);
                if (!p.visible) continue;
                const auto back = geom::image_to_world_plane(cam, p.u, p.v, scene.grid.h_avg);
                if (!back) {
                    trip_err = INFINITY;
                    continue;
                }
                trip_err = std::max(trip_err, std::hypot((*back)[0] - X[0], (*back)[1] - X[1],
                                                         (*back)[2] - X[2]));
                ++trips;
            }
        }
    }

    auto scalar_map = [](double v) { return Tensor({1, 1, 1, 1}, v); };
    auto mask = [](double v) { return Tensor({1, 1}, v); };
    bool units = true;
    {
        // Nearest camera: raw weight exp(0) = 1, so w_near * sum(raw) == 1.
        const Tensor maps[] = {scalar_map(0.8), scalar_map(1.1), scalar_map(1.9)};
        const Tensor masks[] = {mask(1), mask(1), mask(1)};
        const double raw_sum = 1.0 + std::exp(-0.09) + std::exp(-1.21);
        const auto w = geom::camera_weight_maps(maps, masks);
        units = units && std::abs(w[0].item() * raw_sum - 1.0) < 1e-12;
        const Tensor one[] = {scalar_map(2.4)};
        const Tensor one_mask[] = {mask(1)};
        units = units && geom::camera_weight_maps(one, one_mask)[0].item() == 1.0;
    }
    {
        const Tensor maps[] = {scalar_map(1.3), scalar_map(1.3)};
        const Tensor masks[] = {mask(1), mask(1)};
        const auto w = geom::camera_weight_maps(maps, masks);
        units = units && w[0].item() == 0.5 && w[1].item() == 0.5;
    }
    double three_err = 0.0;
    {
        // log-distances 1, 1.5, 2: raw 1, e^-0.25, e^-1.
        const Tensor maps[] = {scalar_map(1.0), scalar_map(1.5), scalar_map(2.0)};
        const Tensor masks[] = {mask(1), mask(1), mask(1)};
        const auto w = geom::camera_weight_maps(maps, masks);
        const double raw[] = {1.0, std::exp(-0.25), std::exp(-1.0)};
        const double sum = raw[0] + raw[1] + raw[2];
        for (int k = 0; k < 3; ++k) three_err = std::max(three_err, std::abs(w[k].item() - raw[k] / sum));
    }
    const bool pass = dist_err < 1e-9 && mask_mismatch == 0 && pixels > 0 && trip_err < 1e-9 &&
                      trips > 0 && units && three_err < 1e-9;
    return {pass, "distance map max err " + fmt("%.1e", dist_err) + " over " +
                      std::to_string(pixels) + " px, " + std::to_string(mask_mismatch) +
                      " mask mismatches; round trip " + fmt("%.1e", trip_err) + " m over " +
                      std::to_string(trips) + " points; unit cases " + (units ? "exact" : "WRONG") +
                      "; three-view err " + fmt("%.1e", three_err)};
}

// --- 3: fusion invariances ----------------------------------------------------

Verdict fusion_invariances() {
    const sim::Scene& scene = toy().scenes[1];
    const auto& frame = scene.frames[0];
    double perm_err = 0.0;
    bool all_k = true;
    std::mt19937_64 rng(3);
    for (auto cs : {net::CamSel::None, net::CamSel::NoConv, net::CamSel::Conv1x1,
                    net::CamSel::Conv3}) {
        net::ModelConfig c = base_model();
        c.camsel = cs;
        const net::Model m = net::init_model(c, 5);
        auto run = [&](const std::vector<std::size_t>& idx) {
            net::Rng r(0);
            return net::forward(m, train::gather_views(scene, frame, idx), scene.grid, {}, r);
        };
        std::vector<std::size_t> idx = {0, 3, 5, 8, 13};
        const Tensor ref = run(idx);
        for (int p = 0; p < 3; ++p) {
            std::shuffle(idx.begin(), idx.end(), rng);
            const Tensor out = run(idx);
            for (std::size_t i = 0; i < ref.size(); ++i) {
                perm_err = std::max(perm_err, std::abs(out.data()[i] - ref.data()[i]));
            }
        }
        if (cs == net::CamSel::Conv1x1) {
            for (std::size_t k = 1; k <= 16; ++k) {
                try {
                    std::vector<std::size_t> all(k);
                    std::iota(all.begin(), all.end(), 0);
                    const Tensor d = run(all);
                    all_k = all_k && d.shape() == Shape{1, 64, 64};
                } catch (const std::exception& e) {
                    log(std::string("K=") + std::to_string(k) + ": " + e.what());
                    all_k = false;
                }
            }
        }
    }
    double mass_err = 0.0;
    std::size_t frames = 0;
    for (const auto& s : toy().scenes) {
        for (const auto& f : s.frames) {
            const auto& d = f.density.data();
            mass_err = std::max(mass_err, std::abs(std::accumulate(d.begin(), d.end(), 0.0) -
                                                   static_cast<double>(f.people.size())));
            ++frames;
        }
    }
    return {perm_err <= 1e-9 && all_k && mass_err <= 1e-6,
            "permutation max diff " + fmt("%.1e", perm_err) + "; K=1..16 " +
                (all_k ? "ran" : "FAILED") + "; density mass err " + fmt("%.1e", mass_err) +
                " over " + std::to_string(frames) + " frames"};
}

// --- 4-6: ablations ---------------------------------------------------------

std::string maes(const Trained& t) {
    std::string s = fmt("%.3f", t.mean()) + " [";
    for (std::size_t i = 0; i < t.mae.size(); ++i) s += (i ? " " : "") + fmt("%.2f", t.mae[i]);
    return s + "]";
}

Verdict directional_ablation() {
    const double start = cpu_seconds();
    const Trained& b = backbone();
    const Trained& c = camsel();
    const Trained& d = noise(net::NoiseType::D);
    const Trained& full = cvcs_full();
    const double secs = cpu_seconds() - start;
    const double gain = 1.0 - full.mean() / b.mean();
    const bool pass = gain >= 0.10 && c.mean() < b.mean() && d.mean() < b.mean() && secs < 1800;
    return {pass, "MAE Backbone " + maes(b) + ", +CamSel " + maes(c) + ", +NoiseV-D " + maes(d) +
                      ", CamSel+NoiseV-D " + maes(full) + "; improvement " +
                      fmt("%.1f", 100 * gain) + "% (>= 10); " + fmt("%.0f", secs) +
                      " s cpu (< 1800)"};
}

Verdict noise_ordering() {
    const double b = backbone().mean();
    const Trained& a = noise(net::NoiseType::A);
    const Trained& d = noise(net::NoiseType::D);
    bool beat = true;
    std::string detail = "Backbone " + fmt("%.3f", b) + ", A " + maes(a);
    for (auto n : {net::NoiseType::D, net::NoiseType::E, net::NoiseType::F, net::NoiseType::G}) {
        const Trained& t = noise(n);
        beat = beat && t.mean() < b;
        detail += ", " + net::to_string(n) + " " + maes(t);
    }
    return {a.mean() > d.mean() && beat, detail};
}

Verdict camera_count_stability() {
    const Trained& full = cvcs_full();
    const auto test_set = train::split_scenes(toy(), kTrainScenes).second;
    double lo = INFINITY, hi = 0.0;
    std::string detail = "K=5 model, mean MAE at";
    try {
        for (int k : {3, 5, 7, 9, 11}) {
            double sum = 0.0;
            for (std::size_t i = 0; i < kSeeds.size(); ++i) {
                sum += train::evaluate(full.models[i], test_set, k, 0, sim::mix_seed(kSeeds[i], 3)).mae;
            }
            const double mae = sum / kSeeds.size();
            lo = std::min(lo, mae);
            hi = std::max(hi, mae);
            detail += " K=" + std::to_string(k) + " " + fmt("%.3f", mae);
        }
    } catch (const std::exception& e) {
        return {false, detail + "; error: " + e.what()};
    }
    return {hi <= 1.5 * lo, detail + "; max/min " + fmt("%.3f", hi / lo) + " (<= 1.5)"};
}

// --- 7: domain adaptation -----------------------------------------------------

Verdict domain_adaptation(const fs::path& work) {
    const auto [source, test_a] = train::split_scenes(toy(), kTrainScenes);
    const sim::Dataset test_b = sim::restyle(test_a, sim::Style::SynthB);
    // Unlabeled target scenes, disjoint from the evaluation scenes, read back
    // from disk under an access audit.
    const fs::path target_dir = work / "target_b";
    fs::remove_all(target_dir);
    sim::write_dataset(target_dir, sim::generate_dataset(toy_specs(4, 100, sim::Style::SynthB),
                                                         kDataSeed + 1));
    std::vector<fs::path> opened;
    sim::Dataset target;
    bool labels_absent = true;
    {
        ScopedAccessObserver audit([&](const fs::path& p) { opened.push_back(p); });
        target = sim::read_unlabeled(target_dir);
    }
    for (const auto& s : target.scenes) {
        for (const auto& f : s.frames) labels_absent = labels_absent && !f.density.defined() && f.people.empty();
    }
    std::size_t label_reads = 0;
    for (const auto& p : opened) label_reads += p.filename() == "gt.cvt" || p.filename() == "dots.csv";

    const Trained& base = cvcs_full();
    double before = 0.0, after = 0.0, control = 0.0, acc_before = 0.0, acc_after = 0.0;
    std::string per_seed;
    for (std::size_t i = 0; i < kSeeds.size(); ++i) {
        const std::uint64_t seed = kSeeds[i];
        const net::Model& m0 = base.models[i];
        auto probe = [&](const net::Model& m) {
            const auto s_fit = uda::pooled_features(m, source, 5, 60, sim::mix_seed(seed, 40));
            const auto t_fit = uda::pooled_features(m, target, 5, 60, sim::mix_seed(seed, 41));
            const auto s_ev = uda::pooled_features(m, source, 5, 60, sim::mix_seed(seed, 42));
            const auto t_ev = uda::pooled_features(m, target, 5, 60, sim::mix_seed(seed, 43));
            const auto d = uda::fit_discriminator(s_fit, t_fit, 16, 10, 1e-3, sim::mix_seed(seed, 44));
            return uda::discriminator_accuracy(d, s_ev, t_ev);
        };
        const std::uint64_t eval_seed = sim::mix_seed(seed, 3);
        const double mae0 = train::evaluate(m0, test_b, 5, 0, eval_seed).mae;
        const double acc0 = probe(m0);

        uda::UdaConfig cfg;
        cfg.lambda = 0.1;
        cfg.train = recipe();
        cfg.train.epochs = 1;
        cfg.train.P = 1;
        cfg.train.seed = sim::mix_seed(seed, 50);
        net::Model adapted = net::clone_model(m0);
        uda::Discriminator disc =
            uda::init_discriminator(adapted.config.fusion_channels(), cfg.disc_width, sim::mix_seed(seed, 51));
        uda::uda_finetune(adapted, disc, source, target, cfg);
        net::Model tuned = net::clone_model(m0);
        uda::finetune(tuned, source, cfg);

        const double mae1 = train::evaluate(adapted, test_b, 5, 0, eval_seed).mae;
        const double mae_ctrl = train::evaluate(tuned, test_b, 5, 0, eval_seed).mae;
        const double acc1 = probe(adapted);
        log("uda seed " + std::to_string(seed) + ": MAE " + fmt("%.3f", mae0) + " -> " +
            fmt("%.3f", mae1) + " (synthetic-only finetune " + fmt("%.3f", mae_ctrl) +
            "), probe acc " + fmt("%.3f", acc0) + " -> " + fmt("%.3f", acc1));
        before += mae0 / kSeeds.size();
        after += mae1 / kSeeds.size();
        control += mae_ctrl / kSeeds.size();
        acc_before += acc0 / kSeeds.size();
        acc_after += acc1 / kSeeds.size();
    }
    fs::remove_all(target_dir);
    const bool pass = after < before && acc_before >= 0.85 && acc_after <= 0.65 &&
                      label_reads == 0 && labels_absent && !opened.empty();
    return {pass, "SynthB MAE " + fmt("%.3f", before) + " -> " + fmt("%.3f", after) +
                      " (synthetic-only finetune control " + fmt("%.3f", control) +
                      "); probe accuracy " + fmt("%.3f", acc_before) + " -> " +
                      fmt("%.3f", acc_after) + "; target files opened " +
                      std::to_string(opened.size()) + ", label reads " +
                      std::to_string(label_reads)};
}

// --- 8: determinism -----------------------------------------------------------

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Every file under `dir` except run manifests (they carry wall-clock timings).
std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().string().ends_with(".manifest.json")) continue;
        out[fs::relative(e.path(), dir).string()] = read_bytes(e.path());
    }
    return out;
}

int run(const std::string& cli, const std::string& args) {
    return std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
}

Verdict determinism(const fs::path& work, const std::string& cli) {
    const fs::path root = work / "determinism";
    fs::remove_all(root);
    const std::string gen = "gen --scenes 3 --views 6 --frames 3 --grid 32 --img 64x48 --seed 11";
    const std::string cfg = (root / "cfg.json").string();
    bool ok = true;
    std::string detail;
    for (const char* run_id : {"a", "b"}) {
        const fs::path d = root / run_id;
        fs::create_directories(d);
        if (run_id[0] == 'a') {
            std::ofstream(cfg) << R"({"model": {"extractor_channels": [4, 8], "decoder_channels": [8, 1],
                                     "camsel": "conv1x1", "noise": "D"},
                                     "train": {"K": 3, "P": 2, "epochs": 2, "patch_size": 16}})";
        }
        ok = ok && run(cli, gen + " --out " + (d / "data").string()) == 0;
        ok = ok && run(cli, "train --data " + (d / "data").string() + " --config " + cfg +
                                " --seed 4 --out " + (d / "model.ckpt").string()) == 0;
        ok = ok && run(cli, "eval --data " + (d / "data").string() + " --model " +
                                (d / "model.ckpt").string() + " --k 3 --seed 6 --csv " +
                                (d / "eval.csv").string()) == 0;
    }
    if (!ok) return {false, "a command failed"};
    const auto a = tree(root / "a"), b = tree(root / "b");
    std::size_t same = 0;
    for (const auto& [name, bytes] : a) {
        auto it = b.find(name);
        if (it != b.end() && it->second == bytes) ++same;
        else detail += " differs: " + name;
    }
    ok = same == a.size() && a.size() == b.size() && a.count("model.ckpt") && a.count("eval.csv");
    fs::remove_all(root);
    return {ok, std::to_string(same) + "/" + std::to_string(a.size()) +
                    " gen/train/eval outputs byte-identical across two runs" + detail};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria for the cross-view crowd counting pipeline"};
    std::string work = (fs::temp_directory_path() / "cvcs_acceptance").string();
    std::string cli = CVCS_CLI_PATH;
    std::vector<int> only;
    app.add_option("--work", work, "Scratch directory")->capture_default_str();
    app.add_option("--cli", cli, "Path to the cvcs tool")->capture_default_str();
    app.add_option("--only", only, "Run only these criteria (1-8)");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"gradient suite", gradient_suite},
        {"geometry oracles", geometry_oracles},
        {"fusion invariances", fusion_invariances},
        {"directional ablation", directional_ablation},
        {"noise-type ordering", noise_ordering},
        {"camera-count stability", camera_count_stability},
        {"domain adaptation", [&] { return domain_adaptation(work); }},
        {"determinism", [&] { return determinism(work, cli); }},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        all = all && v.pass;
        std::cout << (v.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": "
                  << v.detail << std::endl;
    }
    return all ? 0 : 1;
}
