// SPDX-License-Identifier: Apache-2.0

#include "dtc/raytrace.hpp"

#include <algorithm>

namespace dtc::rt {

void RadioConfig::validate() const {
    if (carrier_freq <= 0.0) throw ValidationError("radio: carrier frequency must be > 0");
    if (subcarrier_spacing <= 0.0) throw ValidationError("radio: subcarrier spacing must be > 0");
    if (n_subcarriers < 1) throw ValidationError("radio: need >= 1 subcarrier");
}

// ---------------------------------------------------------------------------
// face collection

namespace {

void add_box_faces(std::vector<Face>& faces, const scene::Box& b, const scene::Materials& mats) {
    const Rect& f = b.footprint;
    const cplx r = mats.reflectivity(b.surface_class);
    auto push = [&](int axis, double offset, double sign, double u0, double u1, double v0,
                    double v1) {
        Face face;
        face.axis = axis;
        face.offset = offset;
        face.normal_sign = sign;
        face.u_min = u0;
        face.u_max = u1;
        face.v_min = v0;
        face.v_max = v1;
        face.surface_class = b.surface_class;
        face.reflectivity = r;
        face.id = static_cast<int>(faces.size());
        faces.push_back(face);
    };
    // x faces: (u, v) = (y, z); y faces: (u, v) = (x, z); z face: (x, y)
    push(0, f.min_x, -1.0, f.min_y, f.max_y, 0.0, b.height);
    push(0, f.max_x, +1.0, f.min_y, f.max_y, 0.0, b.height);
    push(1, f.min_y, -1.0, f.min_x, f.max_x, 0.0, b.height);
    push(1, f.max_y, +1.0, f.min_x, f.max_x, 0.0, b.height);
    push(2, b.height, +1.0, f.min_x, f.max_x, f.min_y, f.max_y);
}

double axis_coord(const Vec3& p, int axis) { return axis == 0 ? p.x : axis == 1 ? p.y : p.z; }

void face_uv(const Face& f, const Vec3& p, double& u, double& v) {
    if (f.axis == 0) {
        u = p.y;
        v = p.z;
    } else if (f.axis == 1) {
        u = p.x;
        v = p.z;
    } else {
        u = p.x;
        v = p.y;
    }
}

Vec3 mirror(const Vec3& p, const Face& f) {
    Vec3 m = p;
    if (f.axis == 0)
        m.x = 2.0 * f.offset - p.x;
    else if (f.axis == 1)
        m.y = 2.0 * f.offset - p.y;
    else
        m.z = 2.0 * f.offset - p.z;
    return m;
}

double signed_dist(const Vec3& p, const Face& f) {
    return (axis_coord(p, f.axis) - f.offset) * f.normal_sign;
}

// Intersection of segment a->b with the face plane. Returns false when the
// segment does not properly cross. On success `point` lies on the plane.
bool plane_crossing(const Vec3& a, const Vec3& b, const Face& f, Vec3& point) {
    const double da = axis_coord(a, f.axis) - f.offset;
    const double db = axis_coord(b, f.axis) - f.offset;
    if (da == db) return false;
    const double t = da / (da - db);
    if (t <= 0.0 || t >= 1.0) return false;
    point = a + (b - a) * t;
    // pin the plane coordinate exactly
    if (f.axis == 0)
        point.x = f.offset;
    else if (f.axis == 1)
        point.y = f.offset;
    else
        point.z = f.offset;
    return true;
}

bool on_face(const Face& f, const Vec3& p) {
    double u, v;
    face_uv(f, p, u, v);
    return u >= f.u_min && u <= f.u_max && v >= f.v_min && v <= f.v_max;
}

constexpr double kSegEps = 1e-9;   // parametric clip at segment endpoints
constexpr double kThickEps = 1e-12; // minimum interval width that counts as "inside"

bool box_blocks(const scene::Box& box, const Vec3& a, const Vec3& d) {
    // slab test of segment a + t*d, t in (0,1), against the solid box
    double t0 = kSegEps, t1 = 1.0 - kSegEps;
    const double lo[3] = {box.footprint.min_x, box.footprint.min_y, 0.0};
    const double hi[3] = {box.footprint.max_x, box.footprint.max_y, box.height};
    const double o[3] = {a.x, a.y, a.z};
    const double dir[3] = {d.x, d.y, d.z};
    for (int ax = 0; ax < 3; ++ax) {
        if (dir[ax] == 0.0) {
            if (o[ax] <= lo[ax] || o[ax] >= hi[ax]) return false;
        } else {
            double ta = (lo[ax] - o[ax]) / dir[ax];
            double tb = (hi[ax] - o[ax]) / dir[ax];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
            if (t0 >= t1) return false;
        }
    }
    return t1 - t0 > kThickEps;
}

} // namespace

std::vector<Face> collect_faces(const scene::Scene& scene) {
    std::vector<Face> faces;
    Face ground;
    ground.axis = 2;
    ground.offset = 0.0;
    ground.normal_sign = 1.0;
    ground.u_min = scene.bounds.min_x;
    ground.u_max = scene.bounds.max_x;
    ground.v_min = scene.bounds.min_y;
    ground.v_max = scene.bounds.max_y;
    ground.surface_class = scene::SurfaceClass::ground;
    ground.reflectivity = scene.materials.ground;
    ground.id = 0;
    faces.push_back(ground);
    for (const auto& b : scene.buildings) add_box_faces(faces, b, scene.materials);
    for (const auto& v : scene.vehicles) add_box_faces(faces, v, scene.materials);
    return faces;
}

bool segment_blocked(const Vec3& a, const Vec3& b, const scene::Scene& scene) {
    const Vec3 d = b - a;
    for (const auto& box : scene.buildings)
        if (box_blocks(box, a, d)) return true;
    for (const auto& box : scene.vehicles)
        if (box_blocks(box, a, d)) return true;
    return false;
}

namespace {

void set_angles(PropagationPath& p, const Vec3& tx, const Vec3& rx) {
    const Vec3 first = p.interactions.empty() ? rx : p.interactions.front().point;
    const Vec3 last = p.interactions.empty() ? tx : p.interactions.back().point;
    const Vec3 dep = (first - tx).normalized();
    const Vec3 arr = (last - rx).normalized(); // from rx back toward the ray
    p.aod_az = std::atan2(dep.y, dep.x);
    p.aod_el = std::atan2(dep.z, std::hypot(dep.x, dep.y));
    p.aoa_az = std::atan2(arr.y, arr.x);
    p.aoa_el = std::atan2(arr.z, std::hypot(arr.x, arr.y));
}

PropagationPath finish_path(const Vec3& tx, const Vec3& rx, std::vector<Interaction> inter,
                            cplx refl_product, double length, double wavelength) {
    PropagationPath p;
    p.interactions = std::move(inter);
    p.length = length;
    p.delay = length / kSpeedOfLight;
    const double amp = wavelength / (4.0 * kPi * length);
    const double phase = -2.0 * kPi * length / wavelength;
    p.gain = refl_product * std::polar(amp, phase);
    set_angles(p, tx, rx);
    return p;
}

} // namespace

std::vector<PropagationPath> trace_paths(const scene::Scene& scene, const Vec3& tx,
                                         const Vec3& rx, int max_order, double carrier_freq) {
    if (max_order < 0 || max_order > 2)
        throw ValidationError("trace_paths: reflection order " + std::to_string(max_order) +
                              " unsupported (0..2)");
    if (tx == rx) throw ValidationError("trace_paths: tx and rx coincide");
    if (carrier_freq <= 0.0) throw ValidationError("trace_paths: carrier frequency must be > 0");

    const double lambda = kSpeedOfLight / carrier_freq;
    const auto faces = collect_faces(scene);
    std::vector<PropagationPath> paths;

    // LOS
    if (!segment_blocked(tx, rx, scene))
        paths.push_back(finish_path(tx, rx, {}, cplx{1.0, 0.0}, (rx - tx).norm(), lambda));

    // first-order bounces
    if (max_order >= 1) {
        for (const auto& f : faces) {
            if (signed_dist(tx, f) <= 0.0) continue; // tx behind or on the plane
            const Vec3 img = mirror(tx, f);
            Vec3 p;
            if (!plane_crossing(img, rx, f, p)) continue;
            if (!on_face(f, p)) continue;
            if (segment_blocked(tx, p, scene) || segment_blocked(p, rx, scene)) continue;
            const double length = (p - tx).norm() + (rx - p).norm();
            paths.push_back(finish_path(tx, rx, {{f.id, p}}, f.reflectivity, length, lambda));
        }
    }

    // second-order bounces: mirror tx across f1, then across f2
    if (max_order >= 2) {
        for (const auto& f1 : faces) {
            if (signed_dist(tx, f1) <= 0.0) continue;
            const Vec3 img1 = mirror(tx, f1);
            for (const auto& f2 : faces) {
                if (f2.id == f1.id) continue;
                if (f1.axis == f2.axis && f1.offset == f2.offset) continue; // coplanar
                const Vec3 img2 = mirror(img1, f2);
                Vec3 p2;
                if (!plane_crossing(img2, rx, f2, p2)) continue;
                if (!on_face(f2, p2)) continue;
                Vec3 p1;
                if (!plane_crossing(img1, p2, f1, p1)) continue;
                if (!on_face(f1, p1)) continue;
                if (signed_dist(p2, f1) <= 0.0) continue; // must leave f1 on its outer side
                if (signed_dist(p1, f2) <= 0.0) continue; // and hit f2 from its outer side
                if (segment_blocked(tx, p1, scene) || segment_blocked(p1, p2, scene) ||
                    segment_blocked(p2, rx, scene))
                    continue;
                const double length = (p1 - tx).norm() + (p2 - p1).norm() + (rx - p2).norm();
                paths.push_back(finish_path(tx, rx, {{f1.id, p1}, {f2.id, p2}},
                                            f1.reflectivity * f2.reflectivity, length, lambda));
            }
        }
    }

    std::sort(paths.begin(), paths.end(), [](const PropagationPath& a, const PropagationPath& b) {
        if (a.order() != b.order()) return a.order() < b.order();
        return a.delay < b.delay;
    });
    return paths;
}

// ---------------------------------------------------------------------------
// CFR synthesis

cplx element_response(const scene::AntennaArray& array, int m, double az, double el,
                      double bearing) {
    if (array.kind == scene::ArrayKind::single) return {1.0, 0.0};
    const int r = m / array.cols;
    const int c = m % array.cols;
    // element offsets in wavelengths, array centered, lying in the local y-z
    // plane, then rotated by `bearing` about z
    const double ey = (c - (array.cols - 1) / 2.0) * array.element_spacing;
    const double ez = (r - (array.rows - 1) / 2.0) * array.element_spacing;
    const double px = -std::sin(bearing) * ey;
    const double py = std::cos(bearing) * ey;
    const double pz = ez;
    const double ux = std::cos(el) * std::cos(az);
    const double uy = std::cos(el) * std::sin(az);
    const double uz = std::sin(el);
    const double phase = 2.0 * kPi * (px * ux + py * uy + pz * uz);
    return std::polar(1.0, phase);
}

ChannelSnapshot paths_to_cfr(const std::vector<PropagationPath>& paths, const RadioConfig& radio,
                             const scene::AntennaArray& array, double array_bearing,
                             const Vec3& rx_position, std::size_t slot_index) {
    radio.validate();
    array.validate();
    const int n_tx = array.num_elements();
    const int K = radio.n_subcarriers;

    ChannelSnapshot snap;
    snap.rx_position = rx_position;
    snap.slot_index = slot_index;
    snap.paths = paths;
    snap.cfr.assign(static_cast<std::size_t>(n_tx), std::vector<cplx>(static_cast<std::size_t>(K)));

    for (const auto& path : paths) {
        for (int m = 0; m < n_tx; ++m) {
            const cplx am = element_response(array, m, path.aod_az, path.aod_el, array_bearing);
            const cplx g = path.gain * am;
            for (int k = 0; k < K; ++k) {
                const double ph = -2.0 * kPi * radio.subcarrier_freq(k) * path.delay;
                snap.cfr[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] +=
                    g * std::polar(1.0, ph);
            }
        }
    }
    for (const auto& row : snap.cfr)
        for (const cplx& v : row)
            if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
                throw NumericError("paths_to_cfr: non-finite channel response");
    return snap;
}

std::vector<ChannelSnapshot> simulate_at_positions(const scene::Scene& scene,
                                                   const scene::Transceiver& tx,
                                                   const std::vector<Vec3>& positions,
                                                   const RadioConfig& radio, int max_order,
                                                   double array_bearing) {
    std::vector<ChannelSnapshot> out(positions.size());
    parallel_for(positions.size(), [&](std::size_t i) {
        const auto paths = trace_paths(scene, tx.position, positions[i], max_order,
                                       radio.carrier_freq);
        out[i] = paths_to_cfr(paths, radio, tx.array, array_bearing, positions[i], i);
    });
    return out;
}

std::vector<ChannelSnapshot> simulate_along_trajectory(const scene::Scene& scene,
                                                       const scene::Transceiver& tx,
                                                       const scene::Trajectory& traj,
                                                       std::size_t n_slots,
                                                       const RadioConfig& radio, int max_order,
                                                       double array_bearing) {
    const auto positions = scene::sample_trajectory(traj, n_slots);
    return simulate_at_positions(scene, tx, positions, radio, max_order, array_bearing);
}

} // namespace dtc::rt
