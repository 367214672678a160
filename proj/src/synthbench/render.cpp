#include "disentune/synthbench/render.hpp"

#include <cmath>
#include <cstdlib>

namespace disentune::synthbench {

namespace {

constexpr std::string_view kShapeWords[] = {"circle", "square", "triangle", "cross"};
constexpr std::string_view kColorWords[] = {"red", "green", "blue", "yellow", "cyan", "magenta", "white", "black"};
constexpr std::string_view kTextureWords[] = {"plain", "stripes", "checker"};
constexpr std::string_view kMarkerWords[] = {"nodots", "onedot", "twodots", "threedots"};
constexpr std::string_view kPositionWords[] = {"topleft", "top",        "topright", "left",       "center",
                                               "right",   "bottomleft", "bottom",   "bottomright"};
constexpr std::string_view kScaleWords[] = {"small", "medium"};

constexpr std::array<std::array<double, 3>, kNumColors> kPalette = {{
    {0.90, 0.10, 0.10},  // red
    {0.10, 0.75, 0.15},  // green
    {0.10, 0.20, 0.90},  // blue
    {0.95, 0.85, 0.10},  // yellow
    {0.10, 0.85, 0.90},  // cyan
    {0.85, 0.10, 0.85},  // magenta
    {0.95, 0.95, 0.95},  // white
    {0.05, 0.05, 0.05},  // black
}};

constexpr int kTile = 4;

bool in_shape(ShapeKind shape, int dx, int dy, int r) {
    switch (shape) {
        case ShapeKind::square:
            return std::abs(dx) <= r && std::abs(dy) <= r;
        case ShapeKind::circle:
            return dx * dx + dy * dy <= r * r + r;
        case ShapeKind::triangle:
            // apex up, base along dy = r
            return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
        case ShapeKind::cross: {
            const int arm = std::max(1, r / 3);
            return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
        }
    }
    return false;
}

// Marker dots sit in a row just below the center.
bool in_marker(int markers, Scale scale, int dx, int dy) {
    if (markers <= 0) {
        return false;
    }
    const bool medium = scale == Scale::medium;
    const int spacing = medium ? 3 : 2;
    const int dot = medium ? 2 : 1;
    const int row = medium ? 1 : 0;
    const int first = -spacing * (markers - 1) / 2;
    for (int m = 0; m < markers; ++m) {
        const int x0 = first + m * spacing;
        if (dx >= x0 && dx < x0 + dot && dy >= row && dy < row + dot) {
            return true;
        }
    }
    return false;
}

std::array<double, 3> marker_rgb(Color fill) {
    const auto c = color_rgb(fill);
    const double luma = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    return luma > 0.5 ? std::array<double, 3>{0.0, 0.0, 0.0} : std::array<double, 3>{1.0, 1.0, 1.0};
}

}  // namespace

std::string_view shape_word(ShapeKind s) { return kShapeWords[static_cast<int>(s)]; }
std::string_view color_word(Color c) { return kColorWords[static_cast<int>(c)]; }
std::string_view texture_word(Texture t) { return kTextureWords[static_cast<int>(t)]; }
std::string_view marker_word(int markers) { return kMarkerWords[markers]; }
std::string_view position_word(int position) { return kPositionWords[position]; }
std::string_view scale_word(Scale s) { return kScaleWords[static_cast<int>(s)]; }

int SceneSpec::index() const {
    return ((static_cast<int>(background) * kNumTextures + static_cast<int>(texture)) * kNumPositions + position) *
               kNumScales +
           static_cast<int>(scale);
}

SceneSpec SceneSpec::from_index(int index) {
    SceneSpec s;
    s.scale = static_cast<Scale>(index % kNumScales);
    index /= kNumScales;
    s.position = index % kNumPositions;
    index /= kNumPositions;
    s.texture = static_cast<Texture>(index % kNumTextures);
    index /= kNumTextures;
    s.background = static_cast<Color>(index);
    return s;
}

std::array<double, 3> color_rgb(Color c) { return kPalette[static_cast<std::size_t>(c)]; }

std::array<double, 3> shade_rgb(Color c) {
    auto rgb = color_rgb(c);
    for (auto& v : rgb) {
        v = 0.55 * v + 0.2;
    }
    return rgb;
}

std::array<int, 2> cell_center(int position, int size) {
    const int col = position % 3;
    const int row = position / 3;
    auto center = [&](int i) { return static_cast<int>(std::lround(size * (2.0 * i + 1.0) / 6.0)); };
    return {center(col), center(row)};
}

int half_extent(Scale scale, int size) {
    const int r = static_cast<int>(std::lround(size * (scale == Scale::medium ? 5.0 : 3.0) / 32.0));
    return std::max(r, 1);
}

bool subject_covers(const SubjectSpec& subject, const SceneSpec& scene, int size, int x, int y) {
    const auto [cx, cy] = cell_center(scene.position, size);
    const int r = half_extent(scene.scale, size);
    return in_shape(subject.shape, x - cx, y - cy, r) || in_marker(subject.markers, scene.scale, x - cx, y - cy);
}

Tensor render(const std::optional<SubjectSpec>& subject, const SceneSpec& scene, int size, DType dt) {
    Tensor img = Tensor::zeros({3, size, size}, dt);
    const auto base = color_rgb(scene.background);
    const auto shade = shade_rgb(scene.background);
    const auto [cx, cy] = cell_center(scene.position, size);
    const int r = half_extent(scene.scale, size);
    dispatch(dt, [&]<class T>() {
        auto v = img.values<T>();
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                bool alt = false;
                if (scene.texture == Texture::stripes) {
                    alt = (y / kTile) % 2 == 1;
                } else if (scene.texture == Texture::checker) {
                    alt = ((y / kTile) + (x / kTile)) % 2 == 1;
                }
                std::array<double, 3> rgb = alt ? shade : base;
                if (subject) {
                    const int dx = x - cx;
                    const int dy = y - cy;
                    if (in_marker(subject->markers, scene.scale, dx, dy)) {
                        rgb = marker_rgb(subject->fill);
                    } else if (in_shape(subject->shape, dx, dy, r)) {
                        rgb = color_rgb(subject->fill);
                    }
                }
                for (int c = 0; c < 3; ++c) {
                    v[static_cast<std::size_t>((c * size + y) * size + x)] = static_cast<T>(2.0 * rgb[c] - 1.0);
                }
            }
        }
    });
    return img;
}

}  // namespace disentune::synthbench
