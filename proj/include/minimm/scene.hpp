#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "minimm/rng.hpp"

namespace minimm {

// Procedurally rendered grid scenes: colored shapes and digit glyphs placed on
// a grid of cells, at most one object per cell. Rendering is deterministic
// and every object's pixels stay inside its own cell, so objects never touch.

enum class ShapeKind : int { square = 1, circle = 2, triangle = 3, glyph = 4 };

constexpr int kNumColors = 8;
const std::array<std::array<uint8_t, 3>, kNumColors>& palette();
const std::string& color_name(int color);
const std::string& shape_name(ShapeKind k);
const std::string& shape_plural(ShapeKind k);

struct SceneObject {
    ShapeKind kind = ShapeKind::square;
    int digit = 0; // glyphs only
    int color = 0; // palette index
    int row = 0, col = 0;
    int size = 1; // 0 small, 1 large
};

struct SceneGraph {
    std::vector<SceneObject> objects;
};

struct Image {
    int h = 0, w = 0;
    std::vector<uint8_t> rgb; // row-major, 3 bytes per pixel
};

struct SceneSpec {
    int image_size = 64;
    int grid = 4;
    int min_objects = 0;
    int max_objects = 5; // hard cap 8
    bool require_glyph = false;
};

struct RenderedScene {
    SceneGraph graph;
    Image image;
    std::vector<int> owner; // per pixel: object index, -1 background
    int image_size = 0, grid = 0;
};

RenderedScene render_scene(const SceneGraph& graph, int image_size, int grid);
RenderedScene generate_scene(uint64_t seed, const SceneSpec& spec);

struct ProbeLabels {
    int dominant_class = 0;     // ShapeKind as int, 0 when scene is empty
    std::vector<uint8_t> mask;  // patch grid row-major; 0 background, else ShapeKind
    int grid_h = 0, grid_w = 0;
};

// mask assigns each patch the class of the object covering its center pixel.
ProbeLabels probe_labels(const RenderedScene& scene, int patch_size);

void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

} // namespace minimm
