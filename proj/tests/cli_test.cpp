#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cvcs/checkpoint.hpp"
#include "cvcs/cvt_io.hpp"
#include "cvcs/sim.hpp"
#include "json.hpp"

namespace cvcs {
namespace {

namespace fs = std::filesystem;

struct Outcome {
    int status;
    std::string out;  // stdout and stderr
};

Outcome cli(const std::string& args) {
    const std::string cmd = std::string(CVCS_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed");
    std::string out;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    const int raw = pclose(pipe);
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
protected:
    static fs::path root() { return fs::temp_directory_path() / "cvcs_cli_test"; }
    static std::string data() { return (root() / "data").string(); }
    static std::string config() { return (root() / "tiny.json").string(); }

    static void SetUpTestSuite() {
        fs::remove_all(root());
        fs::create_directories(root());
        const Outcome g = cli("gen --scenes 2 --views 4 --frames 2 --people-min 3 --people-max 8 "
                              "--grid 16 --img 32x24 --seed 5 --out " + data());
        ASSERT_EQ(g.status, 0) << g.out;
        std::ofstream(config()) << R"({"model": {"extractor_channels": [4, 4],
                                                 "decoder_channels": [4, 1]},
                                       "train": {"K": 3, "P": 1, "patches_per_frame": 2,
                                                 "patch_size": 8, "epochs": 1}})";
    }
    static void TearDownTestSuite() { fs::remove_all(root()); }

    static std::string train(const std::string& name) {
        const std::string out = (root() / name).string();
        const Outcome r = cli("train --data " + data() + " --config " + config() + " --seed 2 --out " +
                              out);
        EXPECT_EQ(r.status, 0) << r.out;
        return out;
    }
};

TEST_F(Cli, GenIsDeterministicAndWritesAManifest) {
    const std::string again = (root() / "data2").string();
    ASSERT_EQ(cli("gen --scenes 2 --views 4 --frames 2 --people-min 3 --people-max 8 --grid 16 "
                  "--img 32x24 --seed 5 --out " + again).status,
              0);
    EXPECT_EQ(sim::read_dataset(data()), sim::read_dataset(again));
    const fs::path manifest = root() / "data.manifest.json";
    ASSERT_TRUE(fs::exists(manifest));
    const auto j = nlohmann::json::parse(read_bytes(manifest));
    EXPECT_EQ(j.at("command"), "gen");
    EXPECT_EQ(j.at("seed"), 5);
    EXPECT_EQ(j.at("config").at("views"), 4);
    EXPECT_TRUE(j.contains("version"));
    EXPECT_TRUE(j.contains("duration_seconds"));
}

TEST_F(Cli, TrainIsByteDeterministic) {
    const std::string a = train("a.ckpt"), b = train("b.ckpt");
    EXPECT_EQ(read_bytes(a), read_bytes(b));
    EXPECT_EQ(read_bytes(a + ".loss.csv"), read_bytes(b + ".loss.csv"));
    EXPECT_TRUE(fs::exists(a + ".manifest.json"));
    const net::Model m = net::load_model(a);
    EXPECT_EQ(m.config.extractor_channels, (std::vector<int>{4, 4}));
}

TEST_F(Cli, ZeroModelEvaluatesToUnitNae) {
    net::Model m = net::init_model(net::load_model(train("z.ckpt")).config, 1);
    net::zero_model(m);
    const std::string path = (root() / "zero.ckpt").string();
    net::save_model(path, m);
    const std::string csv = (root() / "zero.csv").string();
    const Outcome r = cli("eval --data " + data() + " --model " + path + " --k 3 --csv " + csv);
    ASSERT_EQ(r.status, 0) << r.out;
    EXPECT_NE(r.out.find("NAE 1.0000"), std::string::npos) << r.out;
    EXPECT_TRUE(fs::exists(csv + ".records.csv"));
    EXPECT_TRUE(fs::exists(csv + ".manifest.json"));
}

TEST_F(Cli, EvalIsByteDeterministic) {
    const std::string model = train("e.ckpt");
    const std::string a = (root() / "ea.csv").string(), b = (root() / "eb.csv").string();
    ASSERT_EQ(cli("eval --data " + data() + " --model " + model + " --k 3 --seed 4 --csv " + a)
                  .status,
              0);
    ASSERT_EQ(cli("eval --data " + data() + " --model " + model + " --k 3 --seed 4 --csv " + b)
                  .status,
              0);
    EXPECT_EQ(read_bytes(a), read_bytes(b));
    EXPECT_EQ(read_bytes(a + ".records.csv"), read_bytes(b + ".records.csv"));
}

TEST_F(Cli, VizWritesValidPgms) {
    const std::string model = train("v.ckpt");
    const fs::path out = root() / "viz";
    const Outcome r = cli("viz --model " + model + " --data " + data() + " --scene 1 --out " +
                          out.string());
    ASSERT_EQ(r.status, 0) << r.out;
    std::size_t pgms = 0;
    for (const auto& entry : fs::directory_iterator(out)) {
        if (entry.path().extension() != ".pgm") continue;
        ++pgms;
        const std::string bytes = read_bytes(entry.path());
        std::istringstream is(bytes);
        std::string magic;
        int cols = 0, rows = 0, maxval = 0;
        is >> magic >> cols >> rows >> maxval;
        is.get();
        EXPECT_EQ(magic, "P5");
        EXPECT_EQ(maxval, 255);
        EXPECT_EQ(bytes.size(), static_cast<std::size_t>(is.tellg()) + cols * rows)
            << entry.path();
    }
    // 4 views x (image, distance, weight) + prediction + ground truth.
    EXPECT_EQ(pgms, 14u);
    EXPECT_TRUE(fs::exists(out / "pred.cvt"));
    EXPECT_TRUE(fs::exists(root() / "viz.manifest.json"));
}

TEST_F(Cli, UdaReadsOnlyTargetImages) {
    const std::string model = train("u.ckpt");
    const fs::path target = root() / "target";
    ASSERT_EQ(cli("gen --scenes 1 --views 4 --frames 2 --people-min 3 --people-max 8 --grid 16 "
                  "--img 32x24 --style b --seed 9 --out " + target.string())
                  .status,
              0);
    for (const auto& e : fs::recursive_directory_iterator(target)) {
        if (e.path().filename() == "gt.cvt" || e.path().filename() == "dots.csv") {
            fs::remove(e.path());
        }
    }
    const std::string out = (root() / "adapted.ckpt").string();
    const Outcome r = cli("uda --model " + model + " --source " + data() + " --target " +
                          target.string() + " --config " + config() + " --out " + out);
    ASSERT_EQ(r.status, 0) << r.out;
    EXPECT_NO_THROW(net::load_model(out));
}

TEST_F(Cli, BadInputsFailWithUsage) {
    const Outcome flag = cli("gen --bogus 3 --out " + (root() / "x").string());
    EXPECT_NE(flag.status, 0);
    EXPECT_NE(flag.out.find("--bogus"), std::string::npos) << flag.out;
    EXPECT_NE(cli("eval --data /nonexistent --model /nonexistent --csv x.csv").status, 0);
    EXPECT_NE(cli("").status, 0);
    EXPECT_NE(cli("gen --img 32by24 --out " + (root() / "y").string()).status, 0);

    const fs::path bad = root() / "bad.json";
    std::ofstream(bad) << "{\"model\": {";
    const Outcome malformed = cli("train --data " + data() + " --config " + bad.string() +
                                  " --out " + (root() / "m.ckpt").string());
    EXPECT_EQ(malformed.status, 1);
    EXPECT_NE(malformed.out.find("malformed JSON"), std::string::npos) << malformed.out;
    const fs::path unknown = root() / "unknown.json";
    std::ofstream(unknown) << R"({"optim": {}})";
    EXPECT_EQ(cli("train --data " + data() + " --config " + unknown.string() + " --out " +
                  (root() / "m.ckpt").string())
                  .status,
              1);
    EXPECT_EQ(cli("ablate --suite nope --data " + data() + " --out " + (root() / "a.csv").string())
                  .status,
              2);
}

}  // namespace
}  // namespace cvcs
