// cvcs: dataset generation, training, evaluation, ablations, domain
// adaptation and visualization for the cross-view crowd counting pipeline.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cvcs/ablation.hpp"
#include "cvcs/checkpoint.hpp"
#include "cvcs/cvt_io.hpp"
#include "cvcs/geometry.hpp"
#include "cvcs/model.hpp"
#include "cvcs/parallel.hpp"
#include "cvcs/pgm.hpp"
#include "cvcs/sim.hpp"
#include "cvcs/train.hpp"
#include "cvcs/uda.hpp"
#include "cvcs/version.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

// Written next to every output as `<output>.manifest.json`.
struct RunManifest {
    explicit RunManifest(std::string cmd) : command(std::move(cmd)) {}

    std::string command;
    json config = json::object();
    std::uint64_t seed = 0;
    std::vector<std::string> outputs;
    Clock::time_point start = Clock::now();

    void write(const fs::path& anchor) const {
        const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
        json j{{"command", command},
               {"config", config},
               {"seed", seed},
               {"version", cvcs::version()},
               {"duration_seconds", seconds},
               {"outputs", outputs}};
        fs::path path = anchor;
        if (path.has_filename()) {
            path += ".manifest.json";
        } else {
            path = path.parent_path();
            path += ".manifest.json";
        }
        cvcs::write_file_atomic(path, j.dump(2) + "\n");
    }
};

json read_json(const fs::path& path) {
    auto is = cvcs::open_for_read(path);
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw cvcs::Error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            seeds.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw cvcs::Error("bad seed '" + item + "' in --seeds");
        }
    }
    if (seeds.empty()) throw cvcs::Error("--seeds is empty");
    return seeds;
}

std::pair<int, int> parse_image_size(const std::string& text) {
    const auto x = text.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(text);
        return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw cvcs::Error("bad --img '" + text + "' (expected WIDTHxHEIGHT, e.g. 128x96)");
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    cvcs::write_file_atomic(path, text);
}

// Model and training settings from an optional JSON file:
//   {"model": {ModelConfig keys}, "train": {TrainConfig keys}}
struct Settings {
    cvcs::net::ModelConfig model;
    cvcs::train::TrainConfig train;
};

Settings load_settings(const std::string& path) {
    Settings s;
    if (path.empty()) return s;
    const json j = read_json(path);
    if (!j.is_object()) throw cvcs::Error("config " + path + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "model") s.model = cvcs::net::config_from_json(value);
        else if (key == "train") s.train = cvcs::train::train_config_from_json(value);
        else throw cvcs::Error("config " + path + ": unknown section '" + key + "'");
    }
    return s;
}

json settings_json(const Settings& s) {
    return {{"model", cvcs::net::config_to_json(s.model)},
            {"train", cvcs::train::train_config_to_json(s.train)}};
}

void log_line(const std::string& line) {
    std::cerr << line << '\n';
}

// --- gen -------------------------------------------------------------------

struct GenArgs {
    int scenes = 16, views = 16, frames = 20, people_min = 20, people_max = 60, grid = 64;
    std::string img = "128x96", style = "a", out;
    std::uint64_t seed = 0;
};

void cmd_gen(const GenArgs& a) {
    RunManifest m{"gen"};
    const auto [w, h] = parse_image_size(a.img);
    if (a.scenes < 1) throw cvcs::Error("--scenes must be >= 1");
    if (a.grid < 8) throw cvcs::Error("--grid must be >= 8");
    std::vector<cvcs::sim::SceneSpec> specs(static_cast<std::size_t>(a.scenes));
    for (std::size_t i = 0; i < specs.size(); ++i) {
        auto& s = specs[i];
        s.seed = i;
        s.n_views = a.views;
        s.n_frames = a.frames;
        s.people_min = a.people_min;
        s.people_max = a.people_max;
        s.extent = a.grid * s.meters_per_pixel;
        s.image_width = w;
        s.image_height = h;
        s.style = cvcs::sim::parse_style(a.style);
        s.validate();
    }
    const auto data = cvcs::sim::generate_dataset(specs, a.seed, cvcs::max_threads());
    cvcs::sim::write_dataset(a.out, data);
    m.seed = a.seed;
    m.config = {{"scenes", a.scenes}, {"views", a.views},          {"frames", a.frames},
                {"people_min", a.people_min}, {"people_max", a.people_max}, {"grid", a.grid},
                {"img", a.img},       {"style", cvcs::sim::to_string(specs[0].style)}};
    m.outputs = {a.out};
    m.write(fs::path(a.out).lexically_normal());
    std::cout << "wrote " << data.scenes.size() << " scenes, " << data.frame_count()
              << " frames to " << a.out << '\n';
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
    std::string data, config, out;
    int k = 0, epochs = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void cmd_train(const TrainArgs& a) {
    RunManifest m{"train"};
    Settings s = load_settings(a.config);
    if (a.k > 0) s.train.K = a.k;
    if (a.epochs >= 0) s.train.epochs = a.epochs;
    if (a.seed_set) s.train.seed = a.seed;
    s.train.validate();
    const auto data = cvcs::sim::read_dataset(a.data);
    auto model = cvcs::net::init_model(s.model, cvcs::sim::mix_seed(s.train.seed, 1));
    const auto result = cvcs::train::train(model, data, s.train, [](int epoch, double loss) {
        std::fprintf(stderr, "epoch %d mean loss %.6g\n", epoch, loss);
    });
    cvcs::net::save_model(a.out, model);
    const std::string curve = a.out + ".loss.csv";
    write_text(curve, cvcs::train::loss_curve_csv(result.epoch_loss));
    m.seed = s.train.seed;
    m.config = settings_json(s);
    m.config["data"] = a.data;
    m.outputs = {a.out, curve};
    m.write(a.out);
    std::cout << "saved " << a.out << '\n';
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string data, model, csv;
    int k = 5, trials = 0;
    std::uint64_t seed = 0;
};

void cmd_eval(const EvalArgs& a) {
    RunManifest m{"eval"};
    const auto model = cvcs::net::load_model(a.model);
    const auto data = cvcs::sim::read_dataset(a.data);
    const auto report =
        cvcs::train::evaluate(model, data, a.k, a.trials, a.seed, cvcs::max_threads());
    const std::string name = fs::path(a.model).stem().string();
    const std::vector<cvcs::ablation::Row> rows{
        {name, a.seed, report.mae, report.nae, report.frames}};
    write_text(a.csv, cvcs::ablation::rows_csv(rows));

    std::ostringstream records;
    records.precision(10);
    records << "scene,frame,trial,predicted,truth\n";
    for (const auto& r : report.records) {
        records << r.scene << ',' << r.frame << ',' << r.trial << ',' << r.predicted << ','
                << r.truth << '\n';
    }
    const std::string per_frame = a.csv + ".records.csv";
    write_text(per_frame, records.str());

    m.seed = a.seed;
    m.config = {{"data", a.data}, {"model", a.model}, {"k", a.k}, {"trials", a.trials}};
    m.outputs = {a.csv, per_frame};
    m.write(a.csv);
    std::printf("MAE %.4f  NAE %.4f  (%zu predictions)\n", report.mae, report.nae, report.frames);
}

// --- ablate ----------------------------------------------------------------

struct AblateArgs {
    std::string suite, data, seeds = "1,2,3", out, config;
    int n_train = 0, trials = 0;
};

void cmd_ablate(const AblateArgs& a) {
    RunManifest m{"ablate"};
    const Settings s = load_settings(a.config);
    const auto suite = cvcs::ablation::parse_suite(a.suite);
    const auto seeds = parse_seeds(a.seeds);
    const auto data = cvcs::sim::read_dataset(a.data);
    cvcs::ablation::Options opt;
    opt.base = s.model;
    opt.train = s.train;
    opt.n_train = a.n_train > 0 ? static_cast<std::size_t>(a.n_train) : data.scenes.size() * 3 / 4;
    opt.eval_trials = a.trials;
    opt.threads = cvcs::max_threads();
    opt.log = log_line;
    const auto rows = cvcs::ablation::run_suite(data, suite, seeds, opt);
    write_text(a.out, cvcs::ablation::rows_csv(rows));
    std::cout << cvcs::ablation::summary_table(cvcs::ablation::summarize(rows));
    m.config = settings_json(s);
    m.config["suite"] = a.suite;
    m.config["seeds"] = seeds;
    m.config["data"] = a.data;
    m.config["n_train"] = opt.n_train;
    m.config["trials"] = a.trials;
    m.seed = seeds.front();
    m.outputs = {a.out};
    m.write(a.out);
}

// --- uda -------------------------------------------------------------------

struct UdaArgs {
    std::string model, source, target, out, config;
    double lambda = 0.1;
    int epochs = 1, k = 0, disc_width = 16;
    std::uint64_t seed = 0;
};

void cmd_uda(const UdaArgs& a) {
    RunManifest m{"uda"};
    const Settings s = load_settings(a.config);
    auto model = cvcs::net::load_model(a.model);
    const auto source = cvcs::sim::read_dataset(a.source);
    const auto target = cvcs::sim::read_unlabeled(a.target);
    cvcs::uda::UdaConfig cfg;
    cfg.lambda = a.lambda;
    cfg.train = s.train;
    cfg.train.epochs = a.epochs;
    cfg.train.seed = a.seed;
    if (a.k > 0) cfg.train.K = a.k;
    cfg.disc_width = a.disc_width;
    auto disc = cvcs::uda::init_discriminator(model.config.fusion_channels(), cfg.disc_width,
                                              cvcs::sim::mix_seed(a.seed, 2));
    const auto r = cvcs::uda::uda_finetune(model, disc, source, target, cfg);
    for (std::size_t e = 0; e < r.task_loss.size(); ++e) {
        std::fprintf(stderr, "epoch %zu task loss %.6g  disc loss %.4f  disc acc %.3f\n", e,
                     r.task_loss[e], r.disc_loss[e], r.disc_accuracy[e]);
    }
    cvcs::net::save_model(a.out, model);
    m.seed = a.seed;
    m.config = {{"model", a.model},   {"source", a.source},
                {"target", a.target}, {"lambda", a.lambda},
                {"disc_width", cfg.disc_width},
                {"train", cvcs::train::train_config_to_json(cfg.train)}};
    m.outputs = {a.out};
    m.write(a.out);
    std::cout << "saved " << a.out << '\n';
}

// --- viz -------------------------------------------------------------------

struct VizArgs {
    std::string model, data, out;
    int scene = 0, frame = 0;
};

void cmd_viz(const VizArgs& a) {
    RunManifest m{"viz"};
    const auto model = cvcs::net::load_model(a.model);
    const auto data = cvcs::sim::read_dataset(a.data);
    if (a.scene < 0 || static_cast<std::size_t>(a.scene) >= data.scenes.size()) {
        throw cvcs::Error("--scene " + std::to_string(a.scene) + " out of range");
    }
    const auto& scene = data.scenes[static_cast<std::size_t>(a.scene)];
    if (a.frame < 0 || static_cast<std::size_t>(a.frame) >= scene.frames.size()) {
        throw cvcs::Error("--frame " + std::to_string(a.frame) + " out of range");
    }
    const auto& frame = scene.frames[static_cast<std::size_t>(a.frame)];
    const fs::path dir(a.out);
    fs::create_directories(dir);
    std::vector<std::string> outputs;
    auto emit = [&](const std::string& name, const cvcs::Tensor& t) {
        cvcs::save_pgm(dir / name, t);
        outputs.push_back((dir / name).string());
    };

    std::vector<cvcs::net::View> views;
    for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
        const auto& cam = scene.cameras[v];
        views.push_back({frame.images[v], cam});
        const std::string id = std::to_string(cam.id);
        emit("view_" + id + ".pgm", frame.images[v]);
        emit("distance_" + id + ".pgm",
             cvcs::geom::distance_map(cam, scene.grid, cam.height, cam.width).tensor());
    }
    // Models without learned selection show the geometric (no-conv) weights.
    auto weight_config = model.config;
    if (weight_config.camsel == cvcs::net::CamSel::None) {
        weight_config.camsel = cvcs::net::CamSel::NoConv;
    }
    const auto weights = cvcs::net::selection_weights(model.params, weight_config, scene.cameras,
                                                      scene.grid);
    for (std::size_t v = 0; v < weights.size(); ++v) {
        emit("weight_" + std::to_string(scene.cameras[v].id) + ".pgm", weights[v]);
    }
    cvcs::net::Rng rng(0);
    const auto pred = cvcs::net::forward(model, views, scene.grid, {}, rng);
    emit("pred.pgm", pred);
    emit("gt.pgm", frame.density);
    cvcs::save_cvt(dir / "pred.cvt", pred);
    outputs.push_back((dir / "pred.cvt").string());

    double count = 0.0;
    for (double v : pred.data()) count += v;
    m.config = {{"model", a.model}, {"data", a.data}, {"scene", a.scene}, {"frame", a.frame}};
    m.outputs = outputs;
    m.write(dir.lexically_normal());
    std::printf("predicted %.2f people, ground truth %zu; wrote %zu files to %s\n", count,
                frame.people.size(), outputs.size(), a.out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-view crowd counting across camera layouts and scenes"};
    app.set_version_flag("--version", std::string(cvcs::version()));
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a procedural multi-view crowd dataset");
    g->add_option("--scenes", gen.scenes, "Number of scenes")->capture_default_str();
    g->add_option("--views", gen.views, "Cameras per scene")->capture_default_str();
    g->add_option("--frames", gen.frames, "Frames per scene")->capture_default_str();
    g->add_option("--people-min", gen.people_min, "Minimum crowd size")->capture_default_str();
    g->add_option("--people-max", gen.people_max, "Maximum crowd size")->capture_default_str();
    g->add_option("--grid", gen.grid, "Scene-plane cells per side (0.5 m each)")
        ->capture_default_str();
    g->add_option("--img", gen.img, "Image size WIDTHxHEIGHT")->capture_default_str();
    g->add_option("--style", gen.style, "Rendering style")
        ->check(CLI::IsMember({"a", "b"}))
        ->capture_default_str();
    g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
    g->add_option("--out", gen.out, "Output dataset directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a model on a dataset");
    t->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    t->add_option("--config", tr.config, "JSON with optional \"model\" and \"train\" sections")
        ->check(CLI::ExistingFile);
    t->add_option("--k", tr.k, "Views per training sample (overrides config)");
    t->add_option("--epochs", tr.epochs, "Epochs (overrides config)");
    t->add_option("--seed", tr.seed, "Seed (overrides config)")->each([&](const std::string&) {
        tr.seed_set = true;
    });
    t->add_option("--out", tr.out, "Checkpoint path")->required();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate counting accuracy (MAE/NAE)");
    e->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    e->add_option("--model", ev.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    e->add_option("--k", ev.k, "Views per prediction")->capture_default_str();
    e->add_option("--trials", ev.trials, "View subsets per frame (0: ceil(V/K)+1)")
        ->capture_default_str();
    e->add_option("--seed", ev.seed, "View sampling seed")->capture_default_str();
    e->add_option("--csv", ev.csv, "Metrics CSV output")->required();

    AblateArgs ab;
    auto* b = app.add_subcommand("ablate", "Run an ablation suite over several seeds");
    b->add_option("--suite", ab.suite, "Suite")
        ->required()
        ->check(CLI::IsMember({"camsel", "noise", "combine", "views"}));
    b->add_option("--data", ab.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    b->add_option("--seeds", ab.seeds, "Comma-separated seeds")->capture_default_str();
    b->add_option("--out", ab.out, "Per-seed metrics CSV")->required();
    b->add_option("--config", ab.config, "Base model/train JSON")->check(CLI::ExistingFile);
    b->add_option("--n-train", ab.n_train, "Training scenes (default: first 3/4)");
    b->add_option("--trials", ab.trials, "Eval view subsets per frame (0: ceil(V/K)+1)");

    UdaArgs ud;
    auto* u = app.add_subcommand("uda", "Unsupervised domain adaptation to unlabeled target images");
    u->add_option("--model", ud.model, "Source-trained checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    u->add_option("--source", ud.source, "Labeled synthetic dataset")
        ->required()
        ->check(CLI::ExistingDirectory);
    u->add_option("--target", ud.target, "Target dataset (labels are never read)")
        ->required()
        ->check(CLI::ExistingDirectory);
    u->add_option("--lambda", ud.lambda, "Gradient reversal weight")->capture_default_str();
    u->add_option("--epochs", ud.epochs, "Fine-tuning epochs")->capture_default_str();
    u->add_option("--seed", ud.seed, "Seed")->capture_default_str();
    u->add_option("--k", ud.k, "Views per sample (overrides config)");
    u->add_option("--config", ud.config, "Train settings JSON")->check(CLI::ExistingFile);
    u->add_option("--out", ud.out, "Adapted checkpoint path")->required();

    VizArgs vz;
    auto* z = app.add_subcommand("viz", "Write PGM renderings of views, maps and densities");
    z->add_option("--model", vz.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    z->add_option("--data", vz.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    z->add_option("--scene", vz.scene, "Scene index")->capture_default_str();
    z->add_option("--frame", vz.frame, "Frame index within the scene")->capture_default_str();
    z->add_option("--out", vz.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& h) {
        return app.exit(h);
    } catch (const CLI::CallForAllHelp& h) {
        return app.exit(h);
    } catch (const CLI::CallForVersion& h) {
        return app.exit(h);
    } catch (const CLI::ParseError& err) {
        std::cerr << "error: " << err.what() << "\n\n";
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        std::cerr << sub->help();
        return 2;
    }

    try {
        if (*g) cmd_gen(gen);
        else if (*t) cmd_train(tr);
        else if (*e) cmd_eval(ev);
        else if (*b) cmd_ablate(ab);
        else if (*u) cmd_uda(ud);
        else if (*z) cmd_viz(vz);
    } catch (const std::exception& err) {
        const CLI::App* sub = app.get_subcommands().front();
        std::cerr << "error: " << err.what() << "\nusage: " << argv[0] << ' ' << sub->get_name()
                  << " --help\n";
        return 1;
    }
    return 0;
}
