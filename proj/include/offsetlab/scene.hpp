#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "offsetlab/rng.hpp"
#include "offsetlab/tensor.hpp"

namespace offsetlab {

struct ImageGrid {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // row-major

    ImageGrid() = default;
    ImageGrid(int h, int w)
        : height(h), width(w), pixels(static_cast<size_t>(h) * static_cast<size_t>(w), 0.0) {}

    double& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
    double at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
};

struct Blob {
    double center_row = 0.0;
    double center_col = 0.0;
    double radius = 1.0;  // gaussian sigma in pixels

    bool operator==(const Blob&) const = default;
};

// Moving-blob scene for temporal stress tests. All blobs share one velocity;
// relative geometry still changes because blobs reflect off the borders at
// different times.
struct SceneSpec {
    int height = 16;
    int width = 16;
    int frames = 32;
    uint64_t seed = 11;
    double velocity_row = 0.0;  // pixels per frame
    double velocity_col = 0.0;
    std::vector<Blob> blobs;

    bool operator==(const SceneSpec&) const = default;
};

// Random blob placement from the scene seed; radii fixed per call.
inline SceneSpec make_scene(int height, int width, int frames, uint64_t seed,
                            double velocity_row, double velocity_col, int blob_count,
                            double blob_radius) {
    SceneSpec spec;
    spec.height = height;
    spec.width = width;
    spec.frames = frames;
    spec.seed = seed;
    spec.velocity_row = velocity_row;
    spec.velocity_col = velocity_col;
    SplitMix64 rng(seed);
    spec.blobs.reserve(static_cast<size_t>(blob_count));
    for (int i = 0; i < blob_count; ++i) {
        Blob b;
        b.center_row = rng.next_in(0.0, static_cast<double>(height - 1));
        b.center_col = rng.next_in(0.0, static_cast<double>(width - 1));
        b.radius = blob_radius;
        spec.blobs.push_back(b);
    }
    return spec;
}

namespace detail {

// Triangle-wave reflection of a coordinate into [0, size-1].
inline double reflect(double pos, int size) noexcept {
    if (size <= 1) return 0.0;
    double extent = 2.0 * (size - 1);
    double q = std::fmod(pos, extent);
    if (q < 0.0) q += extent;
    return q <= (size - 1) ? q : extent - q;
}

}  // namespace detail

// Grayscale grid in [0,1]: sum of gaussian blobs at frame-dependent centers
// (center + velocity * frame, reflected at the borders), clamped to [0,1].
inline ImageGrid synthetic_scene(const SceneSpec& spec, int frame) {
    if (frame < 0 || frame >= spec.frames) {
        throw Error("BadFrame", "frame " + std::to_string(frame) + " not below " +
                                    std::to_string(spec.frames));
    }
    ImageGrid img(spec.height, spec.width);
    for (const Blob& b : spec.blobs) {
        double cr = detail::reflect(b.center_row + spec.velocity_row * frame, spec.height);
        double cc = detail::reflect(b.center_col + spec.velocity_col * frame, spec.width);
        double inv = 1.0 / (2.0 * b.radius * b.radius);
        for (int r = 0; r < spec.height; ++r) {
            for (int c = 0; c < spec.width; ++c) {
                double dr = r - cr;
                double dc = c - cc;
                img.at(r, c) += std::exp(-(dr * dr + dc * dc) * inv);
            }
        }
    }
    for (double& p : img.pixels) p = std::min(1.0, std::max(0.0, p));
    return img;
}

// Splits an image into square patches of side patch_side, flattened
// row-major per patch; patch (pr, pc) becomes token pr * (width/patch_side) + pc.
inline Tensor3 patchify(const ImageGrid& img, int patch_side) {
    if (patch_side < 1 || img.height % patch_side != 0 || img.width % patch_side != 0) {
        throw Error("ShapeMismatch", "image " + std::to_string(img.height) + "x" +
                                         std::to_string(img.width) +
                                         " not divisible into patches of side " +
                                         std::to_string(patch_side));
    }
    int rows = img.height / patch_side;
    int cols = img.width / patch_side;
    Tensor3 out(1, rows * cols, patch_side * patch_side);
    for (int pr = 0; pr < rows; ++pr) {
        for (int pc = 0; pc < cols; ++pc) {
            auto tok = out.token(0, pr * cols + pc);
            int k = 0;
            for (int r = 0; r < patch_side; ++r) {
                for (int c = 0; c < patch_side; ++c) {
                    tok[k++] = img.at(pr * patch_side + r, pc * patch_side + c);
                }
            }
        }
    }
    return out;
}

// Inverse of patchify for one batch element; requires a square patch grid.
inline ImageGrid unpatchify(const Tensor3& t, int b, int grid_cols, int patch_side) {
    if (grid_cols < 1 || t.patches % grid_cols != 0 ||
        t.channels != patch_side * patch_side) {
        throw Error("ShapeMismatch", "unpatchify dims do not factor");
    }
    int grid_rows = t.patches / grid_cols;
    ImageGrid img(grid_rows * patch_side, grid_cols * patch_side);
    for (int pr = 0; pr < grid_rows; ++pr) {
        for (int pc = 0; pc < grid_cols; ++pc) {
            auto tok = t.token(b, pr * grid_cols + pc);
            int k = 0;
            for (int r = 0; r < patch_side; ++r) {
                for (int c = 0; c < patch_side; ++c) {
                    img.at(pr * patch_side + r, pc * patch_side + c) = tok[k++];
                }
            }
        }
    }
    return img;
}

}  // namespace offsetlab
