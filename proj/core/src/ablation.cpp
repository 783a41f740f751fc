#include "cvcs/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace cvcs::ablation {

namespace {

constexpr std::uint64_t kInitStream = 1, kTrainStream = 2, kEvalStream = 3;

net::ModelConfig with(const net::ModelConfig& base, net::CamSel camsel, net::NoiseType noise) {
    net::ModelConfig c = base;
    c.camsel = camsel;
    c.noise = noise;
    return c;
}

}  // namespace

std::string to_string(Suite s) {
    switch (s) {
        case Suite::CamSel: return "camsel";
        case Suite::Noise: return "noise";
        case Suite::Combine: return "combine";
        case Suite::Views: return "views";
    }
    return "?";
}

Suite parse_suite(const std::string& text) {
    for (Suite s : {Suite::CamSel, Suite::Noise, Suite::Combine, Suite::Views}) {
        if (to_string(s) == text) return s;
    }
    throw Error("unknown suite '" + text + "' (camsel|noise|combine|views)");
}

std::vector<Variant> suite_variants(Suite suite, const net::ModelConfig& base) {
    using net::CamSel;
    using net::NoiseType;
    const Variant backbone{"Backbone", with(base, CamSel::None, NoiseType::Off)};
    std::vector<Variant> out;
    switch (suite) {
        case Suite::CamSel:
            out.push_back(backbone);
            for (CamSel c : {CamSel::NoConv, CamSel::Conv1x1, CamSel::Conv3}) {
                out.push_back({"CamSel-" + net::to_string(c), with(base, c, NoiseType::Off)});
            }
            break;
        case Suite::Noise:
            out.push_back(backbone);
            for (NoiseType n : {NoiseType::A, NoiseType::B, NoiseType::C, NoiseType::D,
                                NoiseType::E, NoiseType::F, NoiseType::G}) {
                out.push_back({"NoiseV-" + net::to_string(n), with(base, CamSel::None, n)});
            }
            break;
        case Suite::Combine:
            out.push_back(backbone);
            for (CamSel c : {CamSel::Conv1x1, CamSel::Conv3}) {
                for (NoiseType n : {NoiseType::D, NoiseType::E, NoiseType::F, NoiseType::G}) {
                    out.push_back({"CamSel-" + net::to_string(c) + "+NoiseV-" + net::to_string(n),
                                   with(base, c, n)});
                }
            }
            break;
        case Suite::Views:
            for (int k : {3, 5, 7, 9, 11}) {
                out.push_back({"K=" + std::to_string(k),
                               with(base, CamSel::Conv1x1, NoiseType::D), k});
            }
            break;
    }
    return out;
}

net::Model train_variant(const sim::Dataset& train_set, const net::ModelConfig& config,
                         const train::TrainConfig& cfg, std::uint64_t seed) {
    net::Model model = net::init_model(config, sim::mix_seed(seed, kInitStream));
    train::TrainConfig tc = cfg;
    tc.seed = sim::mix_seed(seed, kTrainStream);
    train::train(model, train_set, tc);
    return model;
}

std::vector<Row> run_suite(const sim::Dataset& data, Suite suite,
                           const std::vector<std::uint64_t>& seeds, const Options& options) {
    if (seeds.empty()) throw Error("ablation: no seeds given");
    if (options.n_train == 0 || options.n_train >= data.scenes.size()) {
        throw Error("ablation: need at least one training and one test scene, got " +
                    std::to_string(data.scenes.size()) + " scenes with n_train=" +
                    std::to_string(options.n_train));
    }
    const auto [train_set, test_set] = train::split_scenes(data, options.n_train);
    const auto variants = suite_variants(suite, options.base);
    std::vector<Row> rows;
    // Variants with an identical model configuration share one training run per seed.
    std::vector<std::pair<net::ModelConfig, std::uint64_t>> trained_keys;
    std::vector<net::Model> trained;
    for (const auto& v : variants) {
        for (std::uint64_t seed : seeds) {
            const net::Model* model = nullptr;
            for (std::size_t i = 0; i < trained_keys.size(); ++i) {
                if (trained_keys[i].first == v.model && trained_keys[i].second == seed) {
                    model = &trained[i];
                }
            }
            if (!model) {
                if (options.log) options.log("train " + v.name + " seed " + std::to_string(seed));
                trained.push_back(train_variant(train_set, v.model, options.train, seed));
                trained_keys.emplace_back(v.model, seed);
                model = &trained.back();
            }
            const int K = v.eval_K > 0 ? v.eval_K : options.train.K;
            const auto report = train::evaluate(*model, test_set, K, options.eval_trials,
                                                sim::mix_seed(seed, kEvalStream), options.threads);
            rows.push_back({v.name, seed, report.mae, report.nae, report.frames});
            if (options.log) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "%s seed %llu: MAE %.4f NAE %.4f", v.name.c_str(),
                              static_cast<unsigned long long>(seed), report.mae, report.nae);
                options.log(buf);
            }
        }
    }
    return rows;
}

std::string rows_csv(const std::vector<Row>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "config,seed,mae,nae,frames\n";
    for (const auto& r : rows) {
        os << r.config << ',' << r.seed << ',' << r.mae << ',' << r.nae << ',' << r.frames << '\n';
    }
    return os.str();
}

std::vector<Summary> summarize(const std::vector<Row>& rows) {
    std::vector<Summary> out;
    std::vector<std::vector<const Row*>> groups;
    for (const auto& r : rows) {
        std::size_t g = 0;
        while (g < out.size() && out[g].config != r.config) ++g;
        if (g == out.size()) {
            out.push_back({r.config});
            groups.emplace_back();
        }
        groups[g].push_back(&r);
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        const auto& members = groups[g];
        const double n = static_cast<double>(members.size());
        double mae = 0, nae = 0;
        for (const Row* r : members) {
            mae += r->mae;
            nae += r->nae;
        }
        mae /= n;
        nae /= n;
        double vm = 0, vn = 0;
        for (const Row* r : members) {
            vm += (r->mae - mae) * (r->mae - mae);
            vn += (r->nae - nae) * (r->nae - nae);
        }
        out[g].mae_mean = mae;
        out[g].nae_mean = nae;
        out[g].mae_sd = members.size() > 1 ? std::sqrt(vm / (n - 1)) : 0.0;
        out[g].nae_sd = members.size() > 1 ? std::sqrt(vn / (n - 1)) : 0.0;
        out[g].runs = members.size();
    }
    return out;
}

std::string summary_table(const std::vector<Summary>& summary) {
    std::ostringstream os;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-28s %18s %18s\n", "config", "MAE (mean±sd)", "NAE (mean±sd)");
    os << buf;
    for (const auto& s : summary) {
        std::snprintf(buf, sizeof buf, "%-28s %9.3f ± %-6.3f %9.4f ± %-6.4f\n", s.config.c_str(),
                      s.mae_mean, s.mae_sd, s.nae_mean, s.nae_sd);
        os << buf;
    }
    return os.str();
}

}  // namespace cvcs::ablation
