#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cvcs/cvt_io.hpp"
#include "cvcs/sim.hpp"
#include "json.hpp"

namespace cvcs::sim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string pad3(int n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", n);
    return buf;
}

std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

json camera_to_json(const geom::CameraParams& c) {
    return {{"id", c.id}, {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
            {"R", c.R},   {"T", c.T},   {"w", c.width}, {"h", c.height}};
}

geom::CameraParams camera_from_json(const json& j) {
    geom::CameraParams c;
    c.id = j.at("id").get<int>();
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.R = j.at("R").get<geom::Mat3>();
    c.T = j.at("T").get<geom::Vec3>();
    c.width = j.at("w").get<int>();
    c.height = j.at("h").get<int>();
    c.validate();
    return c;
}

json meta_json(const Scene& s) {
    json cams = json::array();
    for (const auto& c : s.cameras) cams.push_back(camera_to_json(c));
    const auto& g = s.grid;
    const auto& p = s.spec;
    return {{"cameras", cams},
            {"grid",
             {{"origin", {g.origin_x, g.origin_y}},
              {"mpp", g.meters_per_pixel},
              {"Hs", g.rows},
              {"Ws", g.cols},
              {"h_avg", g.h_avg}}},
            {"scene",
             {{"id", s.id},
              {"seed", p.seed},
              {"extent", p.extent},
              {"people_min", p.people_min},
              {"people_max", p.people_max},
              {"frames", p.n_frames},
              {"style", to_string(p.style)},
              {"image_width", p.image_width},
              {"image_height", p.image_height},
              {"background_cells", p.background_cells}}}};
}

json read_json(const fs::path& path) {
    auto is = open_for_read(path);
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw Error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

Scene scene_from_meta(const json& meta, const fs::path& path) {
    Scene s;
    try {
        for (const auto& c : meta.at("cameras")) s.cameras.push_back(camera_from_json(c));
        const auto& g = meta.at("grid");
        s.grid.origin_x = g.at("origin").at(0).get<double>();
        s.grid.origin_y = g.at("origin").at(1).get<double>();
        s.grid.meters_per_pixel = g.at("mpp").get<double>();
        s.grid.rows = g.at("Hs").get<int>();
        s.grid.cols = g.at("Ws").get<int>();
        s.grid.h_avg = g.at("h_avg").get<double>();
        s.grid.validate();
        const auto& sc = meta.at("scene");
        s.id = sc.at("id").get<int>();
        s.spec.seed = sc.at("seed").get<std::uint64_t>();
        s.spec.extent = sc.at("extent").get<double>();
        s.spec.people_min = sc.at("people_min").get<int>();
        s.spec.people_max = sc.at("people_max").get<int>();
        s.spec.n_frames = sc.at("frames").get<int>();
        s.spec.style = parse_style(sc.at("style").get<std::string>());
        s.spec.image_width = sc.at("image_width").get<int>();
        s.spec.image_height = sc.at("image_height").get<int>();
        s.spec.background_cells = sc.at("background_cells").get<int>();
        s.spec.n_views = static_cast<int>(s.cameras.size());
        s.spec.meters_per_pixel = s.grid.meters_per_pixel;
        s.spec.h_avg = s.grid.h_avg;
    } catch (const json::exception& e) {
        throw Error("malformed scene metadata in " + path.string() + ": " + e.what());
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + " (in " + path.string() + ")");
    }
    return s;
}

std::vector<Person> read_dots_csv(const fs::path& path) {
    auto is = open_for_read(path);
    std::string line;
    if (!std::getline(is, line) || line != "id,x,y") {
        throw Error("dots file lacks the 'id,x,y' header: " + path.string());
    }
    std::vector<Person> people;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        Person p;
        const char* b = line.data();
        const char* e = b + line.size();
        auto r1 = std::from_chars(b, e, p.id);
        if (r1.ec != std::errc() || r1.ptr == e || *r1.ptr != ',') goto bad;
        {
            auto r2 = std::from_chars(r1.ptr + 1, e, p.x);
            if (r2.ec != std::errc() || r2.ptr == e || *r2.ptr != ',') goto bad;
            auto r3 = std::from_chars(r2.ptr + 1, e, p.y);
            if (r3.ec != std::errc() || r3.ptr != e) goto bad;
        }
        people.push_back(p);
        continue;
    bad:
        throw Error("malformed dots row " + std::to_string(lineno) + " in " + path.string());
    }
    return people;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error("missing directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory()) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

Dataset read_impl(const fs::path& dir, bool labels) {
    Dataset ds;
    for (const auto& scene_dir : sorted_subdirs(dir / "scenes")) {
        const fs::path meta_path = scene_dir / "meta.json";
        if (!fs::exists(meta_path)) throw Error("missing scene metadata: " + meta_path.string());
        Scene scene = scene_from_meta(read_json(meta_path), meta_path);
        for (const auto& frame_dir : sorted_subdirs(scene_dir / "frames")) {
            CrowdFrame frame;
            for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
                const fs::path view =
                    frame_dir / ("view_" + std::to_string(scene.cameras[v].id) + ".cvt");
                if (!fs::exists(view)) throw Error("missing view image: " + view.string());
                frame.images.push_back(load_cvt(view));
            }
            if (labels) {
                const fs::path gt = frame_dir / "gt.cvt";
                if (!fs::exists(gt)) {
                    throw Error("missing ground truth for frame " + frame_dir.string() +
                                " (expected " + gt.string() + ")");
                }
                frame.density = load_cvt(gt);
                const fs::path dots = frame_dir / "dots.csv";
                if (!fs::exists(dots)) throw Error("missing dots file: " + dots.string());
                frame.people = read_dots_csv(dots);
                for (const auto& cam : scene.cameras) {
                    frame.dots.push_back(project_dots(cam, frame.people, scene.grid.h_avg));
                }
            }
            scene.frames.push_back(std::move(frame));
        }
        if (static_cast<int>(scene.frames.size()) != scene.spec.n_frames) {
            throw Error("scene " + scene_dir.string() + " declares " +
                        std::to_string(scene.spec.n_frames) + " frames but holds " +
                        std::to_string(scene.frames.size()));
        }
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

}  // namespace

void write_dataset(const fs::path& dir, const Dataset& dataset) {
    for (const auto& scene : dataset.scenes) {
        const fs::path scene_dir = dir / "scenes" / pad3(scene.id);
        write_file_atomic(scene_dir / "meta.json", meta_json(scene).dump(2) + "\n");
        for (std::size_t f = 0; f < scene.frames.size(); ++f) {
            const auto& frame = scene.frames[f];
            const fs::path frame_dir = scene_dir / "frames" / pad3(static_cast<int>(f));
            for (std::size_t v = 0; v < frame.images.size(); ++v) {
                save_cvt(frame_dir / ("view_" + std::to_string(scene.cameras[v].id) + ".cvt"),
                         frame.images[v], DType::F32);
            }
            save_cvt(frame_dir / "gt.cvt", frame.density, DType::F64);
            std::string csv = "id,x,y\n";
            for (const auto& p : frame.people) {
                csv += std::to_string(p.id) + "," + fmt_double(p.x) + "," + fmt_double(p.y) + "\n";
            }
            write_file_atomic(frame_dir / "dots.csv", csv);
        }
    }
}

Dataset read_dataset(const fs::path& dir) { return read_impl(dir, true); }

Dataset read_unlabeled(const fs::path& dir) { return read_impl(dir, false); }

}  // namespace cvcs::sim
