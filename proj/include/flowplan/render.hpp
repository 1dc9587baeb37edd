#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "flowplan/anchor.hpp"
#include "flowplan/diffusion.hpp"
#include "flowplan/field.hpp"
#include "flowplan/scene.hpp"

namespace flowplan {

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, top row first

    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}
    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || x >= width || y < 0 || y >= height) return;
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }
};

struct RenderOptions {
    int scale = 8;  // pixels per cell
    bool draw_mask_edge = true;
};

// Field heatmap underlay (pass nullptr for a plain background), lanes, agents,
// anchors, candidates colored by score, selected candidate and ground truth on
// top. Output depends only on the inputs.
Image render_scene(const Scene& scene, const EnergyField* field, const AnchorSet* anchors,
                   const CandidateSet* candidates, const RenderOptions& opts);

void write_ppm(const std::filesystem::path& path, const Image& img);

// Vector overlay of the same primitives (no heatmap).
void write_svg(const std::filesystem::path& path, const Scene& scene, const AnchorSet* anchors,
               const CandidateSet* candidates);

}  // namespace flowplan
