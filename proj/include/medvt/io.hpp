#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "medvt/tensor.hpp"

namespace medvt::io {

// "MVT1" tensor file: magic MVT1, u8 dtype code (0=f32, 1=f64), u8 rank,
// rank x u32 little-endian extents, row-major payload little-endian.
void write_mvt1(const std::string& path, const Tensor& t);
Tensor read_mvt1(const std::string& path);

// 8-bit binary PGM (P5), one class index per pixel.
void write_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int64_t h, int64_t w);
std::vector<uint8_t> read_pgm(const std::string& path, int64_t* h, int64_t* w);

// Mask helpers: [H,W] (or [T,H,W]) tensor of class indices <-> PGM bytes.
void write_mask_pgm(const std::string& path, const Tensor& mask_hw);
Tensor read_mask_pgm(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

}  // namespace medvt::io
