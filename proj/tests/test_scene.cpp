// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dtc/scene.hpp"

#include <cstdio>

using namespace dtc;
using namespace dtc::scene;

namespace {

Scene make_scene(std::uint64_t seed = 11) { return generate_urban_scene(seed); }

bool inside_some_road(const Scene& s, const Rect& footprint) {
    for (const auto& road : s.roads)
        if (road.contains(footprint)) return true;
    return false;
}

} // namespace

TEST_CASE("generation is a pure function of the seed") {
    CHECK(make_scene(3) == make_scene(3));
    CHECK(make_scene(3) != make_scene(4));
}

TEST_CASE("generated scenes satisfy the structural invariants") {
    const SceneSpec spec;
    for (std::uint64_t seed : {1ULL, 7ULL, 11ULL, 23ULL}) {
        const Scene s = generate_urban_scene(seed, spec);
        CHECK_NOTHROW(validate(s));

        CHECK(s.roads.size() == static_cast<std::size_t>(spec.road_count));
        for (const auto& r : s.roads) {
            const bool vertical = r.width() == spec.road_width;
            const bool horizontal = r.depth() == spec.road_width;
            CHECK((vertical || horizontal));
        }

        CHECK(s.buildings.size() >=
              static_cast<std::size_t>(spec.group_count * spec.buildings_per_group_min));
        for (const auto& b : s.buildings) {
            CHECK(s.bounds.contains(b.footprint));
            CHECK(b.height >= spec.building_height_min);
            CHECK(b.height <= spec.building_height_max);
            CHECK(b.surface_class == SurfaceClass::building);
        }
        for (std::size_t i = 0; i < s.buildings.size(); ++i)
            for (std::size_t j = i + 1; j < s.buildings.size(); ++j)
                CHECK(s.buildings[i].footprint.overlap_area(s.buildings[j].footprint) == 0.0);

        CHECK(s.vehicles.size() >= static_cast<std::size_t>(spec.vehicles_min));
        CHECK(s.vehicles.size() <= static_cast<std::size_t>(spec.vehicles_max));
        for (const auto& v : s.vehicles) {
            CHECK(inside_some_road(s, v.footprint));
            CHECK(v.surface_class == SurfaceClass::vehicle);
        }
        for (std::size_t i = 0; i < s.vehicles.size(); ++i)
            for (std::size_t j = i + 1; j < s.vehicles.size(); ++j)
                CHECK(s.vehicles[i].footprint.overlap_area(s.vehicles[j].footprint) == 0.0);
    }
}

TEST_CASE("a tall central building exists and hosts the base station") {
    const Scene s = make_scene();
    const auto central = central_building(s);
    REQUIRE(central.has_value());
    const auto& b = s.buildings[*central];
    CHECK(b.height >= 0.8 * 40.0);
    // footprint near the middle of the map
    CHECK(std::abs(b.footprint.center_x()) < 30.0);
    CHECK(std::abs(b.footprint.center_y()) < 30.0);

    const Vec3 bs = default_bs_position(s);
    CHECK(bs.z == doctest::Approx(b.height + 2.0).epsilon(1e-12));
    CHECK(b.footprint.contains(bs.x, bs.y));
}

TEST_CASE("validate reports overlapping boxes") {
    Scene s = make_scene();
    Box clone = s.buildings[0];
    clone.footprint.min_x += 1.0; // overlaps the original
    clone.footprint.max_x += 1.0;
    s.buildings.push_back(clone);
    CHECK_THROWS_AS(validate(s), ValidationError);
}

TEST_CASE("validate rejects boxes outside the bounds") {
    Scene s = make_scene();
    Box stray = s.buildings[0];
    stray.footprint.min_x = s.bounds.max_x - 1.0;
    stray.footprint.max_x = s.bounds.max_x + 9.0;
    stray.footprint.min_y = s.bounds.min_y;
    stray.footprint.max_y = s.bounds.min_y + 5.0;
    s.buildings.push_back(stray);
    CHECK_THROWS_AS(validate(s), ValidationError);
}

TEST_CASE("scene json round trip is exact") {
    const Scene s = make_scene(17);
    const Scene back = from_json(to_json(s));
    CHECK(back == s);

    const std::string path = "scene_roundtrip_tmp.json";
    save_scene(s, path);
    const Scene loaded = load_scene(path);
    CHECK(loaded == s);
    std::remove(path.c_str());
}

TEST_CASE("malformed scene json is rejected") {
    CHECK_THROWS_AS(from_json("{"), IoError);
    CHECK_THROWS_AS(from_json("{\"version\": 99}"), IoError);
}

TEST_CASE("trajectories advance by speed times slot duration") {
    Trajectory t;
    t.waypoints = {{0, 0, 1.5}, {10, 0, 1.5}, {10, 20, 1.5}};
    t.speed = 2.0;
    t.slot_duration = 0.25; // 0.5 m per slot, 30 m path -> 61 slots max
    const auto pts = sample_trajectory(t, 20);
    REQUIRE(pts.size() == 20);
    CHECK(pts[0] == Vec3{0, 0, 1.5});
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double step = (pts[i + 1] - pts[i]).norm();
        CHECK(step == doctest::Approx(0.5).epsilon(1e-9));
    }
    // slot 20 is at arc length 10.0: exactly the first corner
    CHECK(pts[19].x == doctest::Approx(9.5).epsilon(1e-12));

    CHECK_THROWS_AS(sample_trajectory(t, 100), ValidationError); // path too short
}

TEST_CASE("road trajectories stay on their road") {
    const Scene s = make_scene();
    const Trajectory t = road_trajectory(s, 0, 2.0, 1.5, 10.0, 0.1, false);
    CHECK_NOTHROW(t.validate());
    const auto pts = sample_trajectory(t, 50);
    for (const auto& p : pts) {
        CHECK(s.roads[0].contains(p.x, p.y));
        CHECK(p.z == 1.5);
    }
}
