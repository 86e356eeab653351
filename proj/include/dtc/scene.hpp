// SPDX-License-Identifier: Apache-2.0
//
// Physical environment description: buildings, roads and vehicles on a flat
// ground plane, plus transceiver placements and motion trajectories. Both the
// ray tracer and the depth-view renderer consume these values.

#pragma once

#include "dtc/common.hpp"

#include <cstdint>
#include <optional>

namespace dtc::scene {

enum class SurfaceClass { building, vehicle, ground };

/// Axis-aligned box standing on the ground plane (z in [0, height]).
struct Box {
    Rect footprint;
    double height = 0.0;
    SurfaceClass surface_class = SurfaceClass::building;

    bool operator==(const Box&) const = default;
};

/// Complex reflection coefficient per surface class. Magnitudes must stay
/// <= 1 so every bounce loses energy.
struct Materials {
    cplx building{0.6, 0.0};
    cplx vehicle{0.4, 0.0};
    cplx ground{0.3, 0.0};

    bool operator==(const Materials&) const = default;

    cplx reflectivity(SurfaceClass c) const {
        switch (c) {
            case SurfaceClass::building: return building;
            case SurfaceClass::vehicle: return vehicle;
            default: return ground;
        }
    }
};

struct Scene {
    Rect bounds;
    std::vector<Box> buildings;
    std::vector<Rect> roads; // axis-aligned strips, drivable at z = 0
    std::vector<Box> vehicles;
    Materials materials;
    int version = 1;

    bool operator==(const Scene&) const = default;

    /// 2-D diagonal of the bounds; the depth renderer encodes ray misses
    /// with this value.
    double diagonal() const { return std::hypot(bounds.width(), bounds.depth()); }
};

enum class ArrayKind { single, upa };

/// Transmit antenna: a single element or a uniform planar array in the y-z
/// plane of its local frame (broadside +x before the bearing rotation).
struct AntennaArray {
    ArrayKind kind = ArrayKind::single;
    int rows = 1;
    int cols = 1;
    double element_spacing = 0.5; // in wavelengths

    bool operator==(const AntennaArray&) const = default;

    int num_elements() const { return rows * cols; }
    void validate() const;
};

struct Transceiver {
    Vec3 position;
    AntennaArray array;
    double tx_power_dbm = 30.0;
};

/// Piecewise-linear motion path sampled at constant arc-length steps.
struct Trajectory {
    std::vector<Vec3> waypoints;
    double speed = 1.0;         // m/s
    double slot_duration = 0.1; // s

    double path_length() const;
    void validate() const;
};

// ---------------------------------------------------------------------------
// generation

struct SceneSpec {
    double extent_x = 200.0; // bounds [-extent/2, extent/2]^2
    double extent_y = 200.0;
    int group_count = 4;
    int road_count = 4;
    double road_width = 10.0;
    int buildings_per_group_min = 3;
    int buildings_per_group_max = 6;
    double building_height_min = 10.0;
    double building_height_max = 40.0;
    int vehicles_min = 8;
    int vehicles_max = 16;
};

/// Deterministically generate an urban scene: `group_count` building groups
/// in the blocks of a road grid, one tall central building, and vehicles
/// parked on the road strips. Pure function of (seed, spec).
Scene generate_urban_scene(std::uint64_t seed, const SceneSpec& spec = {});

/// Positions at arc lengths {0, d, 2d, ...} with d = speed * slot_duration
/// along the waypoint path. Throws ValidationError (naming the deficit in
/// meters) when the path is shorter than (n_slots - 1) * d.
std::vector<Vec3> sample_trajectory(const Trajectory& traj, std::size_t n_slots);

/// Centerline path along road `road_index`, at `lane_offset` meters from the
/// center toward the +normal side and `height` above ground. Convenience for
/// building street trajectories from a generated scene.
Trajectory road_trajectory(const Scene& scene, std::size_t road_index, double lane_offset,
                           double height, double speed, double slot_duration,
                           bool reverse = false);

/// The building whose footprint center is nearest the bounds center, used to
/// place the base station on its rooftop. Empty scenes have none.
std::optional<std::size_t> central_building(const Scene& scene);

/// Rooftop BS position: central building top + 2 m, or 10 m above the bounds
/// center for an empty scene.
Vec3 default_bs_position(const Scene& scene);

// ---------------------------------------------------------------------------
// validation and I/O

/// Check all documented invariants (containment, overlap, positivity,
/// reflectivity magnitudes). Throws ValidationError listing every offender.
void validate(const Scene& scene);

std::string to_json(const Scene& scene);
Scene from_json(const std::string& text);

void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

} // namespace dtc::scene
