#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "disentune/core/tensor.hpp"

namespace disentune::synthbench {

inline constexpr int kNumShapes = 4;
inline constexpr int kNumColors = 8;
inline constexpr int kNumMarkers = 4;
inline constexpr int kNumTextures = 3;
inline constexpr int kNumPositions = 9;
inline constexpr int kNumScales = 2;
inline constexpr int kNumScenes = kNumColors * kNumTextures * kNumPositions * kNumScales;

enum class ShapeKind : std::uint8_t { circle, square, triangle, cross };
enum class Color : std::uint8_t { red, green, blue, yellow, cyan, magenta, white, black };
enum class Texture : std::uint8_t { plain, stripes, checker };
enum class Scale : std::uint8_t { small, medium };

std::string_view shape_word(ShapeKind s);
std::string_view color_word(Color c);
std::string_view texture_word(Texture t);
std::string_view marker_word(int markers);
std::string_view position_word(int position);
std::string_view scale_word(Scale s);

// Identity factors: everything that determines the subject's appearance.
struct SubjectSpec {
    ShapeKind shape = ShapeKind::square;
    Color fill = Color::red;
    int markers = 0;  // 0..3 interior dots

    bool operator==(const SubjectSpec&) const = default;
};

// Identity-irrelevant factors.
struct SceneSpec {
    Color background = Color::white;
    Texture texture = Texture::plain;
    int position = 4;  // 3x3 grid cell, row-major
    Scale scale = Scale::medium;

    bool operator==(const SceneSpec&) const = default;
    int index() const;
    static SceneSpec from_index(int index);
};

std::array<double, 3> color_rgb(Color c);
// Secondary tone used by stripes and checker backgrounds.
std::array<double, 3> shade_rgb(Color c);

// Integer pixel center of a grid cell for a square image of side `size`.
std::array<int, 2> cell_center(int position, int size);
int half_extent(Scale scale, int size);

// Deterministic rasterization into [3, size, size] with values in [-1, 1].
// Without a subject only the background is drawn.
Tensor render(const std::optional<SubjectSpec>& subject, const SceneSpec& scene, int size = 32,
              DType dt = default_dtype());

inline Tensor render(const SubjectSpec& subject, const SceneSpec& scene, int size = 32, DType dt = default_dtype()) {
    return render(std::optional<SubjectSpec>(subject), scene, size, dt);
}

// True if pixel (x, y) lies on the subject's body (markers included).
bool subject_covers(const SubjectSpec& subject, const SceneSpec& scene, int size, int x, int y);

}  // namespace disentune::synthbench
