#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "disentune/core/tensor.hpp"

namespace disentune::io {

// Whole-file helpers; failures raise IoError naming the path.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);
void append_file(const std::filesystem::path& path, std::string_view bytes);
void ensure_directory(const std::filesystem::path& dir);

// Channel value v in [-1, 1] maps to round((v + 1) * 127.5), half up, clamped
// to [0, 255]. Decoding maps a byte b back to b / 127.5 - 1.
std::uint8_t quantize(double v);
double dequantize(std::uint8_t b);

// Binary portable pixmap, header "P6 <W> <H> 255\n". x: [3, H, W].
std::string encode_ppm(const Tensor& x);
Tensor decode_ppm(std::string_view bytes, DType dt = default_dtype());
void write_ppm(const std::filesystem::path& path, const Tensor& x);
Tensor read_ppm(const std::filesystem::path& path, DType dt = default_dtype());

// Tiles images [3, H, W] row-major into one image with `cols` columns and a
// one-pixel gray gutter.
Tensor image_grid(const std::vector<Tensor>& images, int cols);

// Minimal CSV: fields containing commas or quotes are quoted.
std::string csv_field(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace disentune::io
