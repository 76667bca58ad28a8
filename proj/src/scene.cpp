#include "minimm/scene.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace minimm {

namespace {

constexpr uint8_t kBackground = 16;

// 5x7 digit bitmaps, one row per byte (bit 4 = leftmost column).
constexpr uint8_t kGlyphs[10][7] = {
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, // 0
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}, // 1
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, // 2
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}, // 3
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, // 4
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}, // 5
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, // 6
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}, // 7
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, // 8
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}, // 9
};

const std::array<std::string, kNumColors> kColorNames = {
    "red", "green", "blue", "yellow", "purple", "orange", "cyan", "white"};

const std::array<std::string, 4> kShapeNames = {"square", "circle", "triangle", "glyph"};
const std::array<std::string, 4> kShapePlurals = {"squares", "circles", "triangles", "glyphs"};

struct Painter {
    Image* img;
    std::vector<int>* owner;

    void set(int y, int x, const std::array<uint8_t, 3>& c, int obj) {
        const size_t p = size_t(y) * img->w + x;
        img->rgb[p * 3 + 0] = c[0];
        img->rgb[p * 3 + 1] = c[1];
        img->rgb[p * 3 + 2] = c[2];
        (*owner)[p] = obj;
    }
};

void paint_object(Painter& pt, const SceneObject& o, int obj_idx, int cell) {
    const int y0 = o.row * cell, x0 = o.col * cell;
    const auto& c = palette()[size_t(o.color)];
    const int cy = y0 + cell / 2, cx = x0 + cell / 2;
    switch (o.kind) {
    case ShapeKind::square: {
        const int side = o.size ? (cell * 3) / 4 : cell / 2; // 12 / 8 at cell 16
        const int t = cy - side / 2, l = cx - side / 2;
        for (int y = t; y < t + side; ++y)
            for (int x = l; x < l + side; ++x) pt.set(y, x, c, obj_idx);
        break;
    }
    case ShapeKind::circle: {
        const int r = o.size ? (cell * 3) / 8 : cell / 4; // 6 / 4 at cell 16
        for (int y = cy - r; y <= cy + r; ++y)
            for (int x = cx - r; x <= cx + r; ++x)
                if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
                    pt.set(y, x, c, obj_idx);
        break;
    }
    case ShapeKind::triangle: {
        const int h = o.size ? (cell * 3) / 4 : cell / 2;
        const int top = cy - h / 2;
        for (int dy = 0; dy < h; ++dy) {
            const int hw = dy * (h / 2) / std::max(1, h - 1);
            for (int x = cx - hw; x <= cx + hw; ++x) pt.set(top + dy, x, c, obj_idx);
        }
        break;
    }
    case ShapeKind::glyph: {
        const int s = std::max(1, cell / 8); // scale: 2 at cell 16
        const int gh = 7 * s, gw = 5 * s;
        const int t = cy - gh / 2, l = cx - gw / 2;
        for (int ry = 0; ry < 7; ++ry)
            for (int rx = 0; rx < 5; ++rx)
                if (kGlyphs[o.digit][ry] & (1 << (4 - rx)))
                    for (int sy = 0; sy < s; ++sy)
                        for (int sx = 0; sx < s; ++sx)
                            pt.set(t + ry * s + sy, l + rx * s + sx, c, obj_idx);
        break;
    }
    }
}

} // namespace

const std::array<std::array<uint8_t, 3>, kNumColors>& palette() {
    static const std::array<std::array<uint8_t, 3>, kNumColors> p = {{
        {220, 50, 40},   // red
        {60, 180, 75},   // green
        {0, 110, 230},   // blue
        {255, 210, 40},  // yellow
        {150, 60, 200},  // purple
        {245, 130, 30},  // orange
        {70, 220, 220},  // cyan
        {245, 245, 245}, // white
    }};
    return p;
}

const std::string& color_name(int color) { return kColorNames.at(size_t(color)); }
const std::string& shape_name(ShapeKind k) { return kShapeNames.at(size_t(int(k) - 1)); }
const std::string& shape_plural(ShapeKind k) { return kShapePlurals.at(size_t(int(k) - 1)); }

RenderedScene render_scene(const SceneGraph& graph, int image_size, int grid) {
    if (image_size % grid != 0)
        throw std::invalid_argument("render_scene: image size not divisible by grid");
    if (graph.objects.size() > 8)
        throw std::invalid_argument("render_scene: more than 8 objects");
    const int cell = image_size / grid;
    RenderedScene out;
    out.image_size = image_size;
    out.grid = grid;
    out.graph = graph;
    out.image.h = out.image.w = image_size;
    out.image.rgb.assign(size_t(image_size) * image_size * 3, kBackground);
    out.owner.assign(size_t(image_size) * image_size, -1);

    std::vector<int> used(size_t(grid) * grid, 0);
    for (size_t i = 0; i < graph.objects.size(); ++i) {
        const auto& o = graph.objects[i];
        if (o.row < 0 || o.row >= grid || o.col < 0 || o.col >= grid)
            throw std::invalid_argument("render_scene: object outside grid");
        if (used[size_t(o.row) * grid + o.col]++)
            throw std::invalid_argument("render_scene: two objects share a cell");
        if (o.kind == ShapeKind::glyph && (o.digit < 0 || o.digit > 9))
            throw std::invalid_argument("render_scene: glyph digit out of range");
        if (o.color < 0 || o.color >= kNumColors)
            throw std::invalid_argument("render_scene: color out of range");
        Painter pt{&out.image, &out.owner};
        paint_object(pt, o, int(i), cell);
    }
    return out;
}

RenderedScene generate_scene(uint64_t seed, const SceneSpec& spec) {
    if (spec.max_objects > 8 || spec.min_objects > spec.max_objects)
        throw std::invalid_argument("generate_scene: over-capacity spec");
    Rng rng(seed);
    const int count =
        spec.min_objects + rng.uniform_int(spec.max_objects - spec.min_objects + 1);
    std::vector<int> cells(size_t(spec.grid) * spec.grid);
    for (size_t i = 0; i < cells.size(); ++i) cells[i] = int(i);
    // Fisher-Yates; deterministic given the seed
    for (int i = int(cells.size()) - 1; i > 0; --i)
        std::swap(cells[size_t(i)], cells[size_t(rng.uniform_int(i + 1))]);

    SceneGraph g;
    for (int i = 0; i < count; ++i) {
        SceneObject o;
        o.kind = static_cast<ShapeKind>(1 + rng.uniform_int(4));
        if (spec.require_glyph && i == 0) o.kind = ShapeKind::glyph;
        o.digit = rng.uniform_int(10);
        o.color = rng.uniform_int(kNumColors);
        o.row = cells[size_t(i)] / spec.grid;
        o.col = cells[size_t(i)] % spec.grid;
        o.size = rng.uniform_int(2);
        g.objects.push_back(o);
    }
    return render_scene(g, spec.image_size, spec.grid);
}

ProbeLabels probe_labels(const RenderedScene& scene, int patch_size) {
    if (scene.image_size % patch_size != 0)
        throw std::invalid_argument("probe_labels: patch size does not divide image");
    const int g = scene.image_size / patch_size;
    ProbeLabels out;
    out.grid_h = out.grid_w = g;
    out.mask.assign(size_t(g) * g, 0);
    for (int pr = 0; pr < g; ++pr) {
        for (int pc = 0; pc < g; ++pc) {
            const int y = pr * patch_size + patch_size / 2;
            const int x = pc * patch_size + patch_size / 2;
            const int own = scene.owner[size_t(y) * scene.image_size + x];
            if (own >= 0)
                out.mask[size_t(pr) * g + pc] =
                    uint8_t(int(scene.graph.objects[size_t(own)].kind));
        }
    }
    // dominant category by painted pixel count; ties to the smaller class id
    std::array<long, 5> pixels{};
    for (int own : scene.owner)
        if (own >= 0) pixels[size_t(int(scene.graph.objects[size_t(own)].kind))]++;
    int best = 0;
    long best_count = 0;
    for (int k = 1; k <= 4; ++k)
        if (pixels[size_t(k)] > best_count) {
            best = k;
            best_count = pixels[size_t(k)];
        }
    out.dominant_class = best;
    return out;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              std::streamsize(img.rgb.size()));
    if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    in >> magic >> w >> h >> maxv;
    if (magic != "P6" || maxv != 255 || w <= 0 || h <= 0)
        throw std::runtime_error("read_ppm: unsupported header in " + path);
    in.get(); // single whitespace after header
    Image img;
    img.w = w;
    img.h = h;
    img.rgb.resize(size_t(w) * h * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()), std::streamsize(img.rgb.size()));
    if (in.gcount() != std::streamsize(img.rgb.size()))
        throw std::runtime_error("read_ppm: truncated file " + path);
    return img;
}

} // namespace minimm
