// SPDX-License-Identifier: Apache-2.0
//
// Deterministic geometric channel simulator. Paths are found with the image
// method (LOS plus specular bounces of order <= 2 off box faces and the
// ground), then converted to per-element OFDM channel frequency responses.

#pragma once

#include "dtc/common.hpp"
#include "dtc/scene.hpp"

namespace dtc::rt {

struct RadioConfig {
    double carrier_freq = 3.5e9;      // Hz
    double subcarrier_spacing = 30e3; // Hz
    int n_subcarriers = 69;
    double noise_figure_db = 7.0;

    void validate() const;
    double wavelength() const { return kSpeedOfLight / carrier_freq; }
    double bandwidth() const { return subcarrier_spacing * n_subcarriers; }
    /// Absolute frequency of subcarrier k; the grid is centered on the
    /// carrier.
    double subcarrier_freq(int k) const {
        return carrier_freq + (k - (n_subcarriers - 1) / 2.0) * subcarrier_spacing;
    }
    /// Thermal noise power (mW) over the occupied band, including the
    /// receiver noise figure.
    double noise_power_mw() const {
        const double dbm = -174.0 + 10.0 * std::log10(bandwidth()) + noise_figure_db;
        return std::pow(10.0, dbm / 10.0);
    }
};

/// One planar reflecting surface: a box face or the ground rectangle.
/// `axis` is the plane normal axis (0=x, 1=y, 2=z), `offset` its coordinate,
/// `normal_sign` the outward direction. (u, v) are the remaining axes in
/// increasing order.
struct Face {
    int axis = 2;
    double offset = 0.0;
    double normal_sign = 1.0;
    double u_min = 0, u_max = 0, v_min = 0, v_max = 0;
    scene::SurfaceClass surface_class = scene::SurfaceClass::ground;
    cplx reflectivity{0.0, 0.0};
    int id = 0;
};

/// All reflectable faces of a scene: 4 sides + top per box, plus the ground
/// rectangle (id 0). Shared by the tracer and the coverage map.
std::vector<Face> collect_faces(const scene::Scene& scene);

struct Interaction {
    int face_id = 0;
    Vec3 point;
};

struct PropagationPath {
    double delay = 0.0;   // s, geometric length / c
    cplx gain{0.0, 0.0};  // linear amplitude, reflectivity product * lambda/(4 pi L),
                          // phase exp(-j 2 pi L / lambda)
    double length = 0.0;  // m
    double aod_az = 0.0, aod_el = 0.0; // departure direction at tx
    double aoa_az = 0.0, aoa_el = 0.0; // direction from rx back toward the incoming ray
    std::vector<Interaction> interactions; // one entry per bounce, in order

    int order() const { return static_cast<int>(interactions.size()); }
};

struct ChannelSnapshot {
    std::vector<std::vector<cplx>> cfr; // [n_tx_elements][n_subcarriers]
    Vec3 rx_position;
    std::size_t slot_index = 0;
    std::vector<PropagationPath> paths;

    std::size_t n_tx() const { return cfr.size(); }
    std::size_t n_subcarriers() const { return cfr.empty() ? 0 : cfr[0].size(); }
};

/// True when some box blocks the open segment a->b. Grazing contact with a
/// face plane does not block.
bool segment_blocked(const Vec3& a, const Vec3& b, const scene::Scene& scene);

/// Enumerate propagation paths from tx to rx: the LOS path when unoccluded,
/// plus every valid specular path up to `max_order` bounces (image method
/// over the scene's faces). Paths are sorted by (order, delay). Supported
/// orders are 0..2.
std::vector<PropagationPath> trace_paths(const scene::Scene& scene, const Vec3& tx,
                                         const Vec3& rx, int max_order, double carrier_freq);

/// Unit-norm-free steering phase response of array element `m` for a
/// departure direction (azimuth, elevation), with the array rotated by
/// `bearing` about z. |a_m| = 1 for every element.
cplx element_response(const scene::AntennaArray& array, int m, double az, double el,
                      double bearing);

/// cfr[m][k] = sum_l gain_l * a_m(aod_l) * exp(-j 2 pi f_k tau_l) on the
/// centered subcarrier grid. Empty path lists give an all-zero response.
ChannelSnapshot paths_to_cfr(const std::vector<PropagationPath>& paths, const RadioConfig& radio,
                             const scene::AntennaArray& array, double array_bearing,
                             const Vec3& rx_position, std::size_t slot_index = 0);

/// One snapshot per trajectory slot. Slots are simulated independently (and
/// possibly concurrently); the result is identical for any worker count.
std::vector<ChannelSnapshot> simulate_along_trajectory(const scene::Scene& scene,
                                                       const scene::Transceiver& tx,
                                                       const scene::Trajectory& traj,
                                                       std::size_t n_slots,
                                                       const RadioConfig& radio, int max_order,
                                                       double array_bearing = 0.0);

/// Same, for an explicit list of receiver positions (slot_index = position
/// index). Used for the street-survey corpora.
std::vector<ChannelSnapshot> simulate_at_positions(const scene::Scene& scene,
                                                   const scene::Transceiver& tx,
                                                   const std::vector<Vec3>& positions,
                                                   const RadioConfig& radio, int max_order,
                                                   double array_bearing = 0.0);

} // namespace dtc::rt
