#pragma once

// "CVT1" tensor files: magic `CVT1`, u8 dtype (0 = f64, 1 = f32), u8 ndim,
// ndim x u32 little-endian dims, then the row-major little-endian payload.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <string>

#include "cvcs/tensor.hpp"

namespace cvcs {

enum class DType : std::uint8_t { F64 = 0, F32 = 1 };

void write_cvt(std::ostream& os, const Tensor& t, DType dtype = DType::F64);
Tensor read_cvt(std::istream& is, const std::string& source = "<stream>");

void save_cvt(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F64);
Tensor load_cvt(const std::filesystem::path& path);

/// Every file the library opens for reading is reported to the installed
/// observer. Tests use this to audit which files a pipeline touched.
using AccessObserver = std::function<void(const std::filesystem::path&)>;

class ScopedAccessObserver {
public:
    explicit ScopedAccessObserver(AccessObserver observer);
    ~ScopedAccessObserver();
    ScopedAccessObserver(const ScopedAccessObserver&) = delete;
    ScopedAccessObserver& operator=(const ScopedAccessObserver&) = delete;

private:
    AccessObserver previous_;
};

/// Opens `path` for binary reading and reports it to the access observer.
std::ifstream open_for_read(const std::filesystem::path& path);

/// Writes `contents` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace cvcs
