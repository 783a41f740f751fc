#pragma once

// 8-bit binary PGM (P5) output for inspection images.

#include <filesystem>
#include <string>

#include "cvcs/tensor.hpp"

namespace cvcs {

/// Encodes the trailing two dims of `t` as P5. Values are divided by the
/// maximum (negatives clamp to 0) so the largest pixel maps to 255; an
/// all-zero map stays black.
std::string encode_pgm(const Tensor& t);
void save_pgm(const std::filesystem::path& path, const Tensor& t);

}  // namespace cvcs
