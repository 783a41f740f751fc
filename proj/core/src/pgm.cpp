#include "cvcs/pgm.hpp"

#include <algorithm>
#include <cmath>

#include "cvcs/cvt_io.hpp"

namespace cvcs {

std::string encode_pgm(const Tensor& t) {
    if (t.ndim() < 2) throw Error("pgm: need at least two dims, got " + shape_string(t.shape()));
    const std::size_t rows = t.dim(t.ndim() - 2), cols = t.dim(t.ndim() - 1);
    if (rows * cols != t.size()) throw Error("pgm: expected a single-channel map");
    ensure_finite(t, "pgm input");
    const auto d = t.data();
    const double peak = std::max(0.0, *std::max_element(d.begin(), d.end()));
    std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
    out.reserve(out.size() + d.size());
    for (double v : d) {
        const double n = peak > 0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(n * 255.0))));
    }
    return out;
}

void save_pgm(const std::filesystem::path& path, const Tensor& t) {
    write_file_atomic(path, encode_pgm(t));
}

}  // namespace cvcs
