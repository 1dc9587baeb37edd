#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "flowplan/geometry.hpp"

namespace flowplan {

struct CellIndex {
    int row = 0;
    int col = 0;
    bool operator==(const CellIndex&) const = default;
};

// Uniform BEV grid. `origin` is the world position of the center of cell
// (0, 0); columns advance along +x, rows along +y.
struct GridSpec {
    int width_cells = 64;
    int height_cells = 64;
    double resolution = 1.0;  // meters per cell
    Vec2 origin{-16.0, -32.0};

    bool operator==(const GridSpec&) const = default;

    int cell_count() const { return width_cells * height_cells; }
    bool valid() const {
        return width_cells > 0 && height_cells > 0 && resolution > 0.0;
    }

    // Extent covers every cell plus its half-cell border.
    double min_x() const { return origin.x - 0.5 * resolution; }
    double max_x() const { return origin.x + (width_cells - 0.5) * resolution; }
    double min_y() const { return origin.y - 0.5 * resolution; }
    double max_y() const { return origin.y + (height_cells - 0.5) * resolution; }
    bool in_extent(const Vec2& p) const {
        return p.x >= min_x() && p.x <= max_x() && p.y >= min_y() && p.y <= max_y();
    }
};

inline Vec2 cell_to_world(const CellIndex& c, const GridSpec& g) {
    return {g.origin.x + c.col * g.resolution, g.origin.y + c.row * g.resolution};
}

// Total via sentinel: nullopt for points outside the grid.
inline std::optional<CellIndex> world_to_cell(const Vec2& p, const GridSpec& g) {
    const int col = static_cast<int>(std::floor((p.x - g.origin.x) / g.resolution + 0.5));
    const int row = static_cast<int>(std::floor((p.y - g.origin.y) / g.resolution + 0.5));
    if (col < 0 || col >= g.width_cells || row < 0 || row >= g.height_cells) return std::nullopt;
    return CellIndex{row, col};
}

template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {}

    int height() const { return height_; }
    int width() const { return width_; }

    T& at(int row, int col) { return data_[static_cast<std::size_t>(row) * width_ + col]; }
    const T& at(int row, int col) const { return data_[static_cast<std::size_t>(row) * width_ + col]; }

    const std::vector<T>& data() const { return data_; }
    std::vector<T>& data() { return data_; }

    bool operator==(const Grid&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using BoolGrid = Grid<std::uint8_t>;

// Row-major run-length encoding. First run counts false cells (may be 0),
// runs alternate false/true.
std::vector<int> rle_encode(const BoolGrid& g);
BoolGrid rle_decode(const std::vector<int>& runs, int height, int width);

}  // namespace flowplan
