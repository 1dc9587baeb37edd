#include "flowplan/scene_io.hpp"

#include <fstream>

#include "flowplan/errors.hpp"

namespace flowplan {

using nlohmann::json;

namespace {

json vec2_to_json(const Vec2& v) { return json::array({v.x, v.y}); }

Vec2 vec2_from_json(const json& j) {
    if (!j.is_array() || j.size() != 2) throw DataError("expected [x, y] pair");
    return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

json trajectory_to_json(const Trajectory& t) {
    json poses = json::array();
    for (const auto& p : t.poses) poses.push_back(json::array({p.x, p.y, p.heading}));
    return json{{"dt", t.dt}, {"poses", poses}};
}

Trajectory trajectory_from_json(const json& j) {
    Trajectory t;
    t.dt = j.at("dt").get<double>();
    for (const auto& p : j.at("poses")) {
        if (!p.is_array() || p.size() != 3) throw DataError("trajectory pose must be [x, y, heading]");
        t.poses.push_back({p[0].get<double>(), p[1].get<double>(), p[2].get<double>()});
    }
    return t;
}

json scene_to_json(const Scene& scene, int t_f) {
    json j;
    j["meta"] = {{"format_version", kSceneFormatVersion},
                 {"resolution", scene.grid.resolution},
                 {"dt", scene.gt.dt},
                 {"t_f", t_f},
                 {"scene_id", scene.id}};
    j["grid"] = {{"width_cells", scene.grid.width_cells},
                 {"height_cells", scene.grid.height_cells},
                 {"resolution", scene.grid.resolution},
                 {"origin", vec2_to_json(scene.grid.origin)}};
    j["ego"] = {{"position", vec2_to_json(scene.ego.position)},
                {"heading", scene.ego.heading},
                {"speed", scene.ego.speed}};
    json agents = json::array();
    for (const auto& a : scene.agents)
        agents.push_back({{"position", vec2_to_json(a.position)},
                          {"radius", a.radius},
                          {"velocity", vec2_to_json(a.velocity)}});
    j["agents"] = agents;
    json lanes = json::array();
    for (const auto& lane : scene.lanes) {
        json poly = json::array();
        for (const auto& p : lane.polyline()) poly.push_back(vec2_to_json(p));
        lanes.push_back({{"half_width", lane.half_width()}, {"polyline", poly}});
    }
    j["lanes"] = lanes;
    if (scene.stop_line) {
        j["stop_line"] = {{"a", vec2_to_json(scene.stop_line->a)},
                          {"b", vec2_to_json(scene.stop_line->b)},
                          {"state", scene.stop_line->state == LightState::red ? "red" : "green"}};
    } else {
        j["stop_line"] = nullptr;
    }
    j["gt"] = trajectory_to_json(scene.gt);
    j["drivable_rle"] = rle_encode(scene.drivable);
    return j;
}

Scene scene_from_json(const json& j) {
    try {
        const auto& meta = j.at("meta");
        if (meta.at("format_version").get<int>() != kSceneFormatVersion)
            throw DataError("unsupported scene format version");

        Scene scene;
        scene.id = meta.value("scene_id", 0);
        const auto& g = j.at("grid");
        scene.grid.width_cells = g.at("width_cells").get<int>();
        scene.grid.height_cells = g.at("height_cells").get<int>();
        scene.grid.resolution = g.at("resolution").get<double>();
        scene.grid.origin = vec2_from_json(g.at("origin"));

        const auto& e = j.at("ego");
        scene.ego.position = vec2_from_json(e.at("position"));
        scene.ego.heading = e.at("heading").get<double>();
        scene.ego.speed = e.at("speed").get<double>();

        for (const auto& a : j.at("agents")) {
            Agent agent;
            agent.position = vec2_from_json(a.at("position"));
            agent.radius = a.at("radius").get<double>();
            agent.velocity = vec2_from_json(a.at("velocity"));
            scene.agents.push_back(agent);
        }
        for (const auto& lane : j.at("lanes")) {
            std::vector<Vec2> poly;
            for (const auto& p : lane.at("polyline")) poly.push_back(vec2_from_json(p));
            scene.lanes.emplace_back(std::move(poly), lane.at("half_width").get<double>());
        }
        if (!j.at("stop_line").is_null()) {
            const auto& s = j.at("stop_line");
            const std::string state = s.at("state").get<std::string>();
            if (state != "red" && state != "green") throw DataError("unknown light state: " + state);
            scene.stop_line = StopLine{vec2_from_json(s.at("a")), vec2_from_json(s.at("b")),
                                       state == "red" ? LightState::red : LightState::green};
        }
        scene.gt = trajectory_from_json(j.at("gt"));
        scene.drivable = rle_decode(j.at("drivable_rle").get<std::vector<int>>(),
                                    scene.grid.height_cells, scene.grid.width_cells);
        return scene;
    } catch (const json::exception& e) {
        throw DataError(std::string("scene json: ") + e.what());
    }
}

std::string scene_to_string(const Scene& scene, int t_f) {
    return scene_to_json(scene, t_f).dump(1) + "\n";
}

void write_scene_file(const std::filesystem::path& path, const Scene& scene, int t_f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << scene_to_string(scene, t_f);
}

Scene read_scene_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open scene file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("scene file " + path.string() + ": " + e.what());
    }
    return scene_from_json(j);
}

}  // namespace flowplan
