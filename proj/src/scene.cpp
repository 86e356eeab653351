// SPDX-License-Identifier: Apache-2.0

#include "dtc/scene.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dtc::scene {

using nlohmann::json;

void AntennaArray::validate() const {
    if (element_spacing <= 0.0) throw ValidationError("antenna array: element spacing must be > 0");
    if (kind == ArrayKind::single) {
        if (rows != 1 || cols != 1)
            throw ValidationError("antenna array: single-element arrays require rows = cols = 1");
    } else {
        if (rows * cols < 2)
            throw ValidationError("antenna array: UPA requires rows * cols >= 2");
    }
}

double Trajectory::path_length() const {
    double total = 0.0;
    for (std::size_t i = 1; i < waypoints.size(); ++i)
        total += (waypoints[i] - waypoints[i - 1]).norm();
    return total;
}

void Trajectory::validate() const {
    if (waypoints.size() < 2) throw ValidationError("trajectory: needs at least 2 waypoints");
    if (speed <= 0.0) throw ValidationError("trajectory: speed must be > 0");
    if (slot_duration <= 0.0) throw ValidationError("trajectory: slot duration must be > 0");
}

// ---------------------------------------------------------------------------
// generation

namespace {

struct Block {
    Rect rect;
    bool central = false;
};

// Road grid: ceil(n/2) vertical strips, the rest horizontal, evenly spaced.
// The gaps between roads (and the bounds) form the buildable blocks.
std::vector<Rect> make_roads(const Rect& bounds, int road_count, double road_width) {
    std::vector<Rect> roads;
    const int n_v = (road_count + 1) / 2;
    const int n_h = road_count - n_v;
    for (int i = 0; i < n_v; ++i) {
        const double cx =
            bounds.min_x + bounds.width() * (i + 1) / static_cast<double>(n_v + 1);
        roads.push_back({cx - road_width / 2, bounds.min_y, cx + road_width / 2, bounds.max_y});
    }
    for (int i = 0; i < n_h; ++i) {
        const double cy =
            bounds.min_y + bounds.depth() * (i + 1) / static_cast<double>(n_h + 1);
        roads.push_back({bounds.min_x, cy - road_width / 2, bounds.max_x, cy + road_width / 2});
    }
    return roads;
}

std::vector<Block> make_blocks(const Rect& bounds, const std::vector<Rect>& roads) {
    std::vector<double> xs{bounds.min_x}, ys{bounds.min_y};
    for (const auto& r : roads) {
        if (r.depth() >= bounds.depth()) { // vertical strip
            xs.push_back(r.min_x);
            xs.push_back(r.max_x);
        } else {
            ys.push_back(r.min_y);
            ys.push_back(r.max_y);
        }
    }
    xs.push_back(bounds.max_x);
    ys.push_back(bounds.max_y);
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());

    std::vector<Block> blocks;
    for (std::size_t iy = 0; iy + 1 < ys.size(); iy += 2)
        for (std::size_t ix = 0; ix + 1 < xs.size(); ix += 2) {
            Block b;
            b.rect = {xs[ix], ys[iy], xs[ix + 1], ys[iy + 1]};
            if (b.rect.area() <= 1.0) continue;
            b.central = b.rect.contains(bounds.center_x(), bounds.center_y());
            blocks.push_back(b);
        }
    return blocks;
}

bool overlaps_any(const Rect& r, const std::vector<Box>& boxes) {
    for (const auto& b : boxes)
        if (r.overlap_area(b.footprint) > 0.0) return true;
    return false;
}

} // namespace

Scene generate_urban_scene(std::uint64_t seed, const SceneSpec& spec) {
    if (spec.extent_x <= 0 || spec.extent_y <= 0)
        throw ValidationError("scene spec: extents must be positive");
    if (spec.group_count < 0 || spec.road_count < 1)
        throw ValidationError("scene spec: need >= 0 groups and >= 1 road");
    if (spec.vehicles_min < 0 || spec.vehicles_max < spec.vehicles_min)
        throw ValidationError("scene spec: bad vehicle count range");

    Rng rng(seed_for(seed, "urban-scene"));

    Scene s;
    s.bounds = {-spec.extent_x / 2, -spec.extent_y / 2, spec.extent_x / 2, spec.extent_y / 2};
    s.roads = make_roads(s.bounds, spec.road_count, spec.road_width);

    auto blocks = make_blocks(s.bounds, s.roads);

    // central block first: one tall building whose rooftop hosts the BS
    auto central_it = std::find_if(blocks.begin(), blocks.end(), [](const Block& b) { return b.central; });
    if (central_it == blocks.end()) central_it = blocks.begin();
    {
        const Rect& br = central_it->rect;
        const double w = std::min(16.0, br.width() - 4.0);
        const double d = std::min(16.0, br.depth() - 4.0);
        if (w > 1.0 && d > 1.0) {
            Box b;
            b.footprint = {br.center_x() - w / 2, br.center_y() - d / 2, br.center_x() + w / 2,
                           br.center_y() + d / 2};
            b.height = rng.uniform(0.8 * spec.building_height_max, spec.building_height_max);
            s.buildings.push_back(b);
        }
    }

    // building groups fill the non-central blocks, corner-most blocks first
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < blocks.size(); ++i)
        if (&blocks[i] != &*central_it) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto d2 = [&](std::size_t i) {
            const double dx = blocks[i].rect.center_x() - s.bounds.center_x();
            const double dy = blocks[i].rect.center_y() - s.bounds.center_y();
            return dx * dx + dy * dy;
        };
        const double da = d2(a), db = d2(b);
        if (da != db) return da > db;
        return a < b;
    });
    if (static_cast<std::size_t>(spec.group_count) > order.size())
        throw ValidationError("scene spec: more building groups than road-grid blocks");

    for (int g = 0; g < spec.group_count; ++g) {
        const Rect& br = blocks[order[static_cast<std::size_t>(g)]].rect;
        const int n = spec.buildings_per_group_min +
                      static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                          spec.buildings_per_group_max - spec.buildings_per_group_min + 1)));
        for (int k = 0; k < n; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                const double margin = 2.0;
                const double wmax = std::min(28.0, br.width() - 2 * margin);
                const double dmax = std::min(28.0, br.depth() - 2 * margin);
                if (wmax < 8.0 || dmax < 8.0) break;
                const double w = rng.uniform(8.0, wmax);
                const double d = rng.uniform(8.0, dmax);
                const double x0 = rng.uniform(br.min_x + margin, br.max_x - margin - w);
                const double y0 = rng.uniform(br.min_y + margin, br.max_y - margin - d);
                Rect fp{x0, y0, x0 + w, y0 + d};
                if (overlaps_any(fp, s.buildings)) continue;
                Box b;
                b.footprint = fp;
                b.height = rng.uniform(spec.building_height_min, spec.building_height_max);
                s.buildings.push_back(b);
                placed = true;
            }
            // a crowded block simply ends up with fewer buildings
        }
    }

    // vehicles parked on the road strips
    const int want = spec.vehicles_min +
                     static_cast<int>(rng.uniform_int(
                         static_cast<std::uint64_t>(spec.vehicles_max - spec.vehicles_min + 1)));
    const double kVehLen = 4.5, kVehWid = 1.8, kVehHgt = 1.5;
    for (int v = 0; v < want; ++v) {
        bool placed = false;
        for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
            if (s.roads.empty()) break;
            const auto& road = s.roads[rng.uniform_int(s.roads.size())];
            const bool vertical = road.depth() >= road.width();
            const double along = vertical ? road.depth() : road.width();
            const double across = vertical ? road.width() : road.depth();
            if (along < kVehLen || across < kVehWid) break;
            const double a0 = rng.uniform(0.0, along - kVehLen);
            const double c0 = rng.uniform(0.0, across - kVehWid);
            Rect fp = vertical
                          ? Rect{road.min_x + c0, road.min_y + a0, road.min_x + c0 + kVehWid,
                                 road.min_y + a0 + kVehLen}
                          : Rect{road.min_x + a0, road.min_y + c0, road.min_x + a0 + kVehLen,
                                 road.min_y + c0 + kVehWid};
            if (overlaps_any(fp, s.vehicles)) continue;
            Box b;
            b.footprint = fp;
            b.height = kVehHgt;
            b.surface_class = SurfaceClass::vehicle;
            s.vehicles.push_back(b);
            placed = true;
        }
        if (!placed && want > 0 && !s.roads.empty())
            throw ValidationError("scene generation: could not place vehicle " +
                                  std::to_string(v) + " of " + std::to_string(want) +
                                  " after bounded retries (road area exhausted)");
    }

    validate(s);
    return s;
}

std::vector<Vec3> sample_trajectory(const Trajectory& traj, std::size_t n_slots) {
    traj.validate();
    if (n_slots == 0) return {};
    const double step = traj.speed * traj.slot_duration;
    const double need = step * static_cast<double>(n_slots - 1);
    const double have = traj.path_length();
    if (have + 1e-12 * std::max(1.0, have) < need) {
        std::ostringstream msg;
        msg << "trajectory too short: need " << need << " m but path has " << have
            << " m (deficit " << (need - have) << " m)";
        throw ValidationError(msg.str());
    }

    std::vector<Vec3> out;
    out.reserve(n_slots);
    std::size_t seg = 0;
    double seg_start = 0.0; // arc length at start of current segment
    double seg_len = (traj.waypoints[1] - traj.waypoints[0]).norm();
    for (std::size_t i = 0; i < n_slots; ++i) {
        const double target = step * static_cast<double>(i);
        while (seg + 2 < traj.waypoints.size() && target > seg_start + seg_len) {
            seg_start += seg_len;
            ++seg;
            seg_len = (traj.waypoints[seg + 1] - traj.waypoints[seg]).norm();
        }
        const double t = seg_len > 0.0 ? std::min(1.0, (target - seg_start) / seg_len) : 0.0;
        const Vec3 a = traj.waypoints[seg];
        const Vec3 b = traj.waypoints[seg + 1];
        out.push_back(a + (b - a) * t);
    }
    return out;
}

Trajectory road_trajectory(const Scene& scene, std::size_t road_index, double lane_offset,
                           double height, double speed, double slot_duration, bool reverse) {
    if (road_index >= scene.roads.size())
        throw ValidationError("road_trajectory: road index out of range");
    const Rect& r = scene.roads[road_index];
    const bool vertical = r.depth() >= r.width();
    Vec3 a, b;
    if (vertical) {
        a = {r.center_x() + lane_offset, r.min_y, height};
        b = {r.center_x() + lane_offset, r.max_y, height};
    } else {
        a = {r.min_x, r.center_y() + lane_offset, height};
        b = {r.max_x, r.center_y() + lane_offset, height};
    }
    if (reverse) std::swap(a, b);
    Trajectory t;
    t.waypoints = {a, b};
    t.speed = speed;
    t.slot_duration = slot_duration;
    return t;
}

std::optional<std::size_t> central_building(const Scene& scene) {
    if (scene.buildings.empty()) return std::nullopt;
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < scene.buildings.size(); ++i) {
        const auto& fp = scene.buildings[i].footprint;
        const double dx = fp.center_x() - scene.bounds.center_x();
        const double dy = fp.center_y() - scene.bounds.center_y();
        const double d2 = dx * dx + dy * dy;
        if (d2 < best_d2) {
            best_d2 = d2;
            best = i;
        }
    }
    return best;
}

Vec3 default_bs_position(const Scene& scene) {
    const auto idx = central_building(scene);
    if (!idx) return {scene.bounds.center_x(), scene.bounds.center_y(), 10.0};
    const Box& b = scene.buildings[*idx];
    // Antenna at the east roof edge: a roof-center mast would shadow every
    // street within ~4x the building height behind its own parapet.
    return {b.footprint.max_x - 0.5, b.footprint.center_y(), b.height + 2.0};
}

// ---------------------------------------------------------------------------
// validation

void validate(const Scene& scene) {
    std::vector<std::string> errs;
    if (scene.bounds.width() <= 0.0 || scene.bounds.depth() <= 0.0)
        errs.push_back("bounds are empty");

    auto check_box = [&](const Box& b, const std::string& what, std::size_t i) {
        if (b.height <= 0.0)
            errs.push_back(what + "[" + std::to_string(i) + "]: height must be > 0");
        if (b.footprint.area() <= 0.0)
            errs.push_back(what + "[" + std::to_string(i) + "]: footprint area must be > 0");
        if (!scene.bounds.contains(b.footprint))
            errs.push_back(what + "[" + std::to_string(i) + "]: footprint outside bounds");
    };
    for (std::size_t i = 0; i < scene.buildings.size(); ++i)
        check_box(scene.buildings[i], "buildings", i);
    for (std::size_t i = 0; i < scene.vehicles.size(); ++i)
        check_box(scene.vehicles[i], "vehicles", i);

    for (std::size_t i = 0; i < scene.buildings.size(); ++i)
        for (std::size_t j = i + 1; j < scene.buildings.size(); ++j)
            if (scene.buildings[i].footprint.overlap_area(scene.buildings[j].footprint) > 0.0)
                errs.push_back("buildings[" + std::to_string(i) + "] overlaps buildings[" +
                               std::to_string(j) + "]");

    for (std::size_t i = 0; i < scene.vehicles.size(); ++i) {
        bool on_road = false;
        for (const auto& r : scene.roads)
            if (r.contains(scene.vehicles[i].footprint)) {
                on_road = true;
                break;
            }
        if (!scene.roads.empty() && !on_road)
            errs.push_back("vehicles[" + std::to_string(i) + "] not contained in any road strip");
    }

    for (const auto& [name, r] : {std::pair{"building", scene.materials.building},
                                  {"vehicle", scene.materials.vehicle},
                                  {"ground", scene.materials.ground}})
        if (std::abs(r) > 1.0)
            errs.push_back(std::string("materials.") + name + ": |reflectivity| must be <= 1");

    if (!errs.empty()) {
        std::string msg = "scene validation failed:";
        for (const auto& e : errs) msg += "\n  - " + e;
        throw ValidationError(msg);
    }
}

// ---------------------------------------------------------------------------
// JSON I/O. Doubles round-trip exactly through nlohmann::json, so
// load(save(s)) == s holds bit-for-bit.

namespace {

json rect_to_json(const Rect& r) {
    return json{{"min_x", r.min_x}, {"min_y", r.min_y}, {"max_x", r.max_x}, {"max_y", r.max_y}};
}

Rect rect_from_json(const json& j) {
    return Rect{j.at("min_x").get<double>(), j.at("min_y").get<double>(),
                j.at("max_x").get<double>(), j.at("max_y").get<double>()};
}

json box_to_json(const Box& b) {
    json j = rect_to_json(b.footprint);
    j["height"] = b.height;
    return j;
}

Box box_from_json(const json& j, SurfaceClass cls) {
    Box b;
    b.footprint = rect_from_json(j);
    b.height = j.at("height").get<double>();
    b.surface_class = cls;
    return b;
}

json cplx_to_json(const cplx& c) { return json{{"re", c.real()}, {"im", c.imag()}}; }

cplx cplx_from_json(const json& j) {
    return {j.at("re").get<double>(), j.at("im").get<double>()};
}

} // namespace

std::string to_json(const Scene& s) {
    json j;
    j["version"] = s.version;
    j["bounds"] = rect_to_json(s.bounds);
    j["buildings"] = json::array();
    for (const auto& b : s.buildings) j["buildings"].push_back(box_to_json(b));
    j["roads"] = json::array();
    for (const auto& r : s.roads) j["roads"].push_back(rect_to_json(r));
    j["vehicles"] = json::array();
    for (const auto& v : s.vehicles) j["vehicles"].push_back(box_to_json(v));
    j["materials"] = json{{"building", cplx_to_json(s.materials.building)},
                          {"vehicle", cplx_to_json(s.materials.vehicle)},
                          {"ground", cplx_to_json(s.materials.ground)}};
    return j.dump(2) + "\n";
}

Scene from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw IoError(std::string("scene file: ") + e.what());
    }
    Scene s;
    try {
        s.version = j.at("version").get<int>();
        if (s.version != 1)
            throw IoError("scene file: unsupported version " + std::to_string(s.version));
        s.bounds = rect_from_json(j.at("bounds"));
        for (const auto& b : j.at("buildings"))
            s.buildings.push_back(box_from_json(b, SurfaceClass::building));
        for (const auto& r : j.at("roads")) s.roads.push_back(rect_from_json(r));
        for (const auto& v : j.at("vehicles"))
            s.vehicles.push_back(box_from_json(v, SurfaceClass::vehicle));
        const auto& m = j.at("materials");
        s.materials.building = cplx_from_json(m.at("building"));
        s.materials.vehicle = cplx_from_json(m.at("vehicle"));
        s.materials.ground = cplx_from_json(m.at("ground"));
    } catch (const json::exception& e) {
        throw IoError(std::string("scene file: missing or mistyped field: ") + e.what());
    }
    validate(s);
    return s;
}

void save_scene(const Scene& scene, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << to_json(scene);
    if (!f) throw IoError("write failed: " + path);
}

Scene load_scene(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_json(ss.str());
}

} // namespace dtc::scene
