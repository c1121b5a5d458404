#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "hyperinv/tensor.hpp"

namespace hyperinv {

enum class ArchiveDType : std::uint8_t { F32 = 0, F64 = 1 };

/// HTA1 tensor archive: "HTA1", u32 count, then per record u16 name length,
/// name, u8 dtype, u8 ndim, ndim x u32 dims, little-endian payload; a
/// trailing u64 FNV-1a checksum covers every preceding byte.
std::string archive_encode(const NamedTensors& tensors, ArchiveDType dtype = ArchiveDType::F64);
NamedTensors archive_decode(std::string_view bytes);

void archive_write(const std::filesystem::path& path, const NamedTensors& tensors,
                   ArchiveDType dtype = ArchiveDType::F64);
NamedTensors archive_read(const std::filesystem::path& path);

/// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Binary P6 with maxval 255. Pixels map to [-1,1] as v/127.5 - 1.
Tensor image_decode_ppm(std::string_view bytes);
std::string image_encode_ppm(const Tensor& image);
Tensor image_read_ppm(const std::filesystem::path& path);
/// Accepts [3,H,W] or [1,3,H,W]. Values are rounded half away from zero
/// and clamped to 0..255.
void image_write_ppm(const std::filesystem::path& path, const Tensor& image);

/// Inverse of the read mapping for a single value.
std::uint8_t quantize_pixel(double v);

/// Binary P5 heat map of an [H,W] tensor: byte = round(clamp(v*scale, 0, 1) * 255).
std::string heatmap_encode_pgm(const Tensor& map, double scale = 1.0);
void heatmap_write_pgm(const std::filesystem::path& path, const Tensor& map, double scale = 1.0);

}  // namespace hyperinv
