#include "cvcs/cvt_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

namespace cvcs {

static_assert(std::endian::native == std::endian::little, "CVT1 I/O assumes a little-endian host");

namespace {

std::mutex g_observer_mutex;
AccessObserver g_observer;

constexpr std::array<char, 4> kMagic{'C', 'V', 'T', '1'};

template <typename T>
void put(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& source) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw Error("cvt: truncated header in " + source);
    return value;
}

}  // namespace

void write_cvt(std::ostream& os, const Tensor& t, DType dtype) {
    if (t.ndim() > 255) throw Error("cvt: too many dimensions");
    os.write(kMagic.data(), kMagic.size());
    put<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.shape()) {
        if (d > 0xffffffffu) throw Error("cvt: dimension exceeds u32");
        put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    }
    auto data = t.data();
    if (dtype == DType::F64) {
        os.write(reinterpret_cast<const char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)));
    } else {
        std::vector<float> narrow(data.begin(), data.end());
        os.write(reinterpret_cast<const char*>(narrow.data()),
                 static_cast<std::streamsize>(narrow.size() * sizeof(float)));
    }
    if (!os) throw Error("cvt: write failed");
}

Tensor read_cvt(std::istream& is, const std::string& source) {
    std::array<char, 4> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) throw Error("cvt: bad magic in " + source);
    const auto dtype = get<std::uint8_t>(is, source);
    if (dtype > 1) throw Error("cvt: unknown dtype " + std::to_string(dtype) + " in " + source);
    const auto ndim = get<std::uint8_t>(is, source);
    Shape shape(ndim);
    for (auto& d : shape) d = get<std::uint32_t>(is, source);
    const std::size_t n = shape_size(shape);
    std::vector<double> values(n);
    if (dtype == 0) {
        is.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        std::vector<float> narrow(n);
        is.read(reinterpret_cast<char*>(narrow.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        std::copy(narrow.begin(), narrow.end(), values.begin());
    }
    if (!is) throw Error("cvt: truncated payload in " + source);
    return Tensor(std::move(shape), std::move(values));
}

void save_cvt(const std::filesystem::path& path, const Tensor& t, DType dtype) {
    std::ostringstream os(std::ios::binary);
    write_cvt(os, t, dtype);
    write_file_atomic(path, os.str());
}

Tensor load_cvt(const std::filesystem::path& path) {
    auto is = open_for_read(path);
    return read_cvt(is, path.string());
}

ScopedAccessObserver::ScopedAccessObserver(AccessObserver observer) {
    std::lock_guard lock(g_observer_mutex);
    previous_ = std::move(g_observer);
    g_observer = std::move(observer);
}

ScopedAccessObserver::~ScopedAccessObserver() {
    std::lock_guard lock(g_observer_mutex);
    g_observer = std::move(previous_);
}

std::ifstream open_for_read(const std::filesystem::path& path) {
    {
        std::lock_guard lock(g_observer_mutex);
        if (g_observer) g_observer(path);
    }
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path.string());
    return is;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot write " + tmp.string());
        os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!os) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace cvcs
