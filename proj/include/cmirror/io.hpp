#pragma once

#include "cmirror/image.hpp"
#include "cmirror/seidelconv.hpp"

#include <filesystem>
#include <iosfwd>

namespace cmirror {

/// Grayscale Portable Float Map ("Pf"). Rows are stored bottom-up on disk and returned
/// top-down. Both byte orders are accepted on read; writes are little-endian.
Image read_pfm(const std::filesystem::path& path);
Image read_pfm(std::istream& in, const std::string& source = "stream");

/// Refuses non-finite pixels.
void write_pfm(const Image& img, const std::filesystem::path& path);
void write_pfm(const Image& img, std::ostream& out);

/// Model container, little-endian:
///   "SCNV" | u16 version | u16 Q | u16 N | u16 K | u16 H | u16 W
///   [version 2 only: u16 weight_downsample | u16 reserved]
///   then for k in 0..N-1, q in 0..Q-1: 6 f32 affine (row-major [R | t]),
///   K·K f32 kernel, weight-grid f32 values.
/// Version 1 is written for full-resolution weights, version 2 otherwise.
inline constexpr std::uint16_t kModelVersionFull = 1;
inline constexpr std::uint16_t kModelVersionGrid = 2;

void save_model(const SeidelConvModel& model, const std::filesystem::path& path);
SeidelConvModel load_model(const std::filesystem::path& path);

/// Focal stack directory: 0.pfm … (N−1).pfm plus stack.txt (z0, dz, n, corrected).
void write_stack(const FocalStack& stack, const std::filesystem::path& dir);
FocalStack read_stack(const std::filesystem::path& dir);

} // namespace cmirror
