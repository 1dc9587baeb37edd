#include "flowplan/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "flowplan/errors.hpp"

namespace flowplan {

namespace {

struct Rgb {
    std::uint8_t r, g, b;
};

// Fixed five-stop blue->teal->yellow->red map over [0, 1].
Rgb heat_color(double v) {
    static constexpr double stops[5][3] = {{20, 24, 60},
                                           {35, 90, 140},
                                           {60, 170, 150},
                                           {230, 200, 60},
                                           {220, 60, 40}};
    v = std::clamp(v, 0.0, 1.0) * 4.0;
    const int i = std::min(static_cast<int>(v), 3);
    const double f = v - i;
    return {static_cast<std::uint8_t>(stops[i][0] + f * (stops[i + 1][0] - stops[i][0])),
            static_cast<std::uint8_t>(stops[i][1] + f * (stops[i + 1][1] - stops[i][1])),
            static_cast<std::uint8_t>(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))};
}

struct Mapper {
    const GridSpec& grid;
    int scale;
    // World -> pixel. Image y axis points down; world y maps bottom-up.
    int px(double x) const {
        return static_cast<int>(std::lround((x - grid.min_x()) / grid.resolution * scale));
    }
    int py(double y) const {
        const int h = grid.height_cells * scale;
        return h - 1 - static_cast<int>(std::lround((y - grid.min_y()) / grid.resolution * scale));
    }
};

void draw_line(Image& img, int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        img.set(x0, y0, c.r, c.g, c.b);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void draw_disc(Image& img, int cx, int cy, int radius, Rgb c) {
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) img.set(cx + dx, cy + dy, c.r, c.g, c.b);
}

void draw_polyline(Image& img, const Mapper& m, const std::vector<Vec2>& pts, Rgb c) {
    for (std::size_t i = 0; i + 1 < pts.size(); ++i)
        draw_line(img, m.px(pts[i].x), m.py(pts[i].y), m.px(pts[i + 1].x), m.py(pts[i + 1].y), c);
}

std::vector<Vec2> trajectory_points(const Trajectory& t, const Vec2& start) {
    std::vector<Vec2> pts{start};
    for (const auto& p : t.poses) pts.push_back(p.position());
    return pts;
}

}  // namespace

Image render_scene(const Scene& scene, const EnergyField* field, const AnchorSet* anchors,
                   const CandidateSet* candidates, const RenderOptions& opts) {
    const auto& grid = scene.grid;
    const int scale = std::max(1, opts.scale);
    Image img(grid.width_cells * scale, grid.height_cells * scale);
    const Mapper m{grid, scale};

    // Underlay: field heatmap normalized to its own range, or dark background.
    double lo = 0.0, hi = 1.0;
    if (field) {
        lo = *std::min_element(field->value.data().begin(), field->value.data().end());
        hi = *std::max_element(field->value.data().begin(), field->value.data().end());
        if (hi - lo < 1e-12) hi = lo + 1.0;
    }
    for (int r = 0; r < grid.height_cells; ++r) {
        for (int c = 0; c < grid.width_cells; ++c) {
            Rgb col{24, 24, 28};
            if (field) col = heat_color((field->value.at(r, c) - lo) / (hi - lo));
            if (opts.draw_mask_edge && !scene.drivable.at(r, c)) {
                col.r = static_cast<std::uint8_t>(col.r * 0.55);
                col.g = static_cast<std::uint8_t>(col.g * 0.55);
                col.b = static_cast<std::uint8_t>(col.b * 0.55);
            }
            for (int yy = 0; yy < scale; ++yy)
                for (int xx = 0; xx < scale; ++xx)
                    img.set(c * scale + xx, (grid.height_cells - 1 - r) * scale + yy, col.r, col.g,
                            col.b);
        }
    }

    for (const auto& lane : scene.lanes) draw_polyline(img, m, lane.polyline(), {150, 150, 160});

    if (scene.stop_line) {
        const Rgb c = scene.stop_line->state == LightState::red ? Rgb{255, 40, 40} : Rgb{60, 220, 60};
        draw_line(img, m.px(scene.stop_line->a.x), m.py(scene.stop_line->a.y),
                  m.px(scene.stop_line->b.x), m.py(scene.stop_line->b.y), c);
    }

    for (const auto& a : scene.agents) {
        draw_disc(img, m.px(a.position.x), m.py(a.position.y),
                  std::max(1, static_cast<int>(std::lround(a.radius / grid.resolution * scale))),
                  {235, 120, 30});
    }

    if (anchors) {
        for (int k = 0; k < anchors->count(); ++k)
            for (int j = 0; j < anchors->t_f; ++j) {
                const Vec2 w = anchors->waypoint(k, j);
                draw_disc(img, m.px(w.x), m.py(w.y), std::max(1, scale / 4), {90, 90, 220});
            }
    }

    if (candidates) {
        for (std::size_t k = 0; k < candidates->trajectories.size(); ++k) {
            if (static_cast<int>(k) == candidates->selected) continue;
            const double s = candidates->scores(static_cast<Eigen::Index>(k));
            const auto shade = static_cast<std::uint8_t>(100 + 120 * std::clamp(s, 0.0, 1.0));
            draw_polyline(img, m, trajectory_points(candidates->trajectories[k], scene.ego.position),
                          {shade, shade, 255});
        }
        draw_polyline(img, m,
                      trajectory_points(candidates->trajectories[candidates->selected],
                                        scene.ego.position),
                      {255, 255, 255});
    }

    draw_polyline(img, m, trajectory_points(scene.gt, scene.ego.position), {40, 230, 90});
    draw_disc(img, m.px(scene.ego.position.x), m.py(scene.ego.position.y),
              std::max(1, scale / 2), {255, 230, 0});
    return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
}

void write_svg(const std::filesystem::path& path, const Scene& scene, const AnchorSet* anchors,
               const CandidateSet* candidates) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    const auto& g = scene.grid;
    char buf[256];
    const auto fmt = [&](const char* f, double a, double b) {
        std::snprintf(buf, sizeof(buf), f, a, b);
        return std::string(buf);
    };
    // World coordinates directly; y flipped via transform.
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\""
        << fmt("%.3f %.3f ", g.min_x(), -g.max_y())
        << fmt("%.3f %.3f", g.max_x() - g.min_x(), g.max_y() - g.min_y()) << "\">\n";
    out << "<g transform=\"scale(1,-1)\">\n";
    const auto polyline = [&](const std::vector<Vec2>& pts, const char* style) {
        out << "<polyline fill=\"none\" " << style << " points=\"";
        for (const auto& p : pts) out << fmt("%.3f,%.3f ", p.x, p.y);
        out << "\"/>\n";
    };
    for (const auto& lane : scene.lanes)
        polyline(lane.polyline(), "stroke=\"#999\" stroke-width=\"0.15\"");
    for (const auto& a : scene.agents)
        out << "<circle cx=\"" << a.position.x << "\" cy=\"" << a.position.y << "\" r=\"" << a.radius
            << "\" fill=\"#e07820\"/>\n";
    if (scene.stop_line) {
        out << "<line x1=\"" << scene.stop_line->a.x << "\" y1=\"" << scene.stop_line->a.y
            << "\" x2=\"" << scene.stop_line->b.x << "\" y2=\"" << scene.stop_line->b.y
            << "\" stroke=\"" << (scene.stop_line->state == LightState::red ? "#f22" : "#2c2")
            << "\" stroke-width=\"0.3\"/>\n";
    }
    if (anchors) {
        for (int k = 0; k < anchors->count(); ++k)
            for (int j = 0; j < anchors->t_f; ++j) {
                const Vec2 w = anchors->waypoint(k, j);
                out << "<circle cx=\"" << w.x << "\" cy=\"" << w.y
                    << "\" r=\"0.2\" fill=\"#55c\"/>\n";
            }
    }
    if (candidates) {
        for (std::size_t k = 0; k < candidates->trajectories.size(); ++k) {
            const bool sel = static_cast<int>(k) == candidates->selected;
            polyline(trajectory_points(candidates->trajectories[k], scene.ego.position),
                     sel ? "stroke=\"#fff\" stroke-width=\"0.3\""
                         : "stroke=\"#88f\" stroke-width=\"0.12\"");
        }
    }
    polyline(trajectory_points(scene.gt, scene.ego.position), "stroke=\"#2d5\" stroke-width=\"0.25\"");
    out << "<circle cx=\"" << scene.ego.position.x << "\" cy=\"" << scene.ego.position.y
        << "\" r=\"0.5\" fill=\"#fe0\"/>\n";
    out << "</g>\n</svg>\n";
}

}  // namespace flowplan
