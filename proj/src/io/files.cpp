#include "disentune/io/files.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace disentune::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) {
        throw IoError("read failed for '" + path.string() + "'");
    }
    return ss.str();
}

namespace {

void write_mode(const fs::path& path, std::string_view bytes, std::ios::openmode mode) {
    std::ofstream out(path, std::ios::binary | mode);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

}  // namespace

void write_file(const fs::path& path, std::string_view bytes) { write_mode(path, bytes, std::ios::trunc); }

void append_file(const fs::path& path, std::string_view bytes) { write_mode(path, bytes, std::ios::app); }

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError("cannot create directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
    }
}

std::uint8_t quantize(double v) {
    const double q = std::floor((v + 1.0) * 127.5 + 0.5);
    return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

double dequantize(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

std::string encode_ppm(const Tensor& x) {
    if (x.rank() != 3 || x.dim(0) != 3) {
        throw DimensionError("encode_ppm: expected [3,H,W], got " + shape_str(x.shape()));
    }
    const auto h = x.dim(1);
    const auto w = x.dim(2);
    std::string out = "P6 " + std::to_string(w) + " " + std::to_string(h) + " 255\n";
    out.reserve(out.size() + static_cast<std::size_t>(3 * h * w));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t xx = 0; xx < w; ++xx) {
            for (std::int64_t c = 0; c < 3; ++c) {
                out.push_back(static_cast<char>(quantize(x.at((c * h + y) * w + xx))));
            }
        }
    }
    return out;
}

Tensor decode_ppm(std::string_view bytes, DType dt) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&](const char* what) {
        skip_space();
        std::int64_t v = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])) && digits < 9) {
            v = v * 10 + (bytes[pos] - '0');
            ++pos;
            ++digits;
        }
        if (digits == 0) {
            throw FormatError(std::string("malformed pixmap: bad ") + what);
        }
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw FormatError("malformed pixmap: missing P6 magic");
    }
    pos = 2;
    const auto w = number("width");
    const auto h = number("height");
    const auto maxval = number("maxval");
    if (w < 1 || h < 1 || maxval != 255) {
        throw FormatError("malformed pixmap: unsupported dimensions or maxval");
    }
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw FormatError("malformed pixmap: missing header terminator");
    }
    ++pos;
    if (bytes.size() - pos != static_cast<std::size_t>(3 * w * h)) {
        throw FormatError("malformed pixmap: payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(3 * w * h));
    }
    Tensor x = Tensor::zeros({3, h, w}, dt);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t xx = 0; xx < w; ++xx) {
            for (std::int64_t c = 0; c < 3; ++c) {
                x.set((c * h + y) * w + xx, dequantize(static_cast<std::uint8_t>(bytes[pos++])));
            }
        }
    }
    return x;
}

void write_ppm(const fs::path& path, const Tensor& x) { write_file(path, encode_ppm(x)); }

Tensor read_ppm(const fs::path& path, DType dt) {
    try {
        return decode_ppm(read_file(path), dt);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

Tensor image_grid(const std::vector<Tensor>& images, int cols) {
    if (images.empty() || cols < 1) {
        throw InputError("image_grid: no images");
    }
    const auto h = images.front().dim(1);
    const auto w = images.front().dim(2);
    const int n = static_cast<int>(images.size());
    const int rows = (n + cols - 1) / cols;
    const int used_cols = std::min(cols, n);
    const auto gh = rows * (h + 1) + 1;
    const auto gw = used_cols * (w + 1) + 1;
    Tensor grid = Tensor::full({3, gh, gw}, 0.0, DType::f64);
    for (int i = 0; i < n; ++i) {
        const auto& img = images[static_cast<std::size_t>(i)];
        if (img.shape() != images.front().shape()) {
            throw DimensionError("image_grid: mixed image shapes");
        }
        const auto oy = (i / cols) * (h + 1) + 1;
        const auto ox = (i % cols) * (w + 1) + 1;
        for (std::int64_t c = 0; c < 3; ++c) {
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t x = 0; x < w; ++x) {
                    grid.set((c * gh + oy + y) * gw + ox + x, img.at((c * h + y) * w + x));
                }
            }
        }
    }
    return grid;
}

std::string csv_field(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_field(fields[i]);
    }
    return out + "\n";
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n') {
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
            any = false;
        } else if (c != '\r') {
            field += c;
            any = true;
        }
    }
    if (quoted) {
        throw FormatError("csv: unterminated quoted field");
    }
    if (any) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace disentune::io
