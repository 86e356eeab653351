// SPDX-License-Identifier: Apache-2.0
//
// Dataset construction on top of simulated snapshot archives: CSI feature
// flattening, per-feature normalization, sliding-window time series splits,
// and pilot/environment fusion samples with rendered depth views.

#pragma once

#include "dtc/serialize.hpp"

namespace dtc {

// CFR [n_tx][K] -> interleaved features [2*n_tx*K]: for antenna m and
// subcarrier k, re at 2*(m*K+k), im at 2*(m*K+k)+1.
std::vector<double> flatten_cfr(const std::vector<std::vector<cplx>>& cfr);
std::vector<std::vector<cplx>> unflatten_cfr(const std::vector<double>& features,
                                             std::size_t n_tx, std::size_t n_subcarriers);

struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> std_dev; // floored at 1e-9

    std::vector<double> normalize(const std::vector<double>& row) const;
    std::vector<double> denormalize(const std::vector<double>& row) const;
};

FeatureStats compute_stats(const std::vector<std::vector<double>>& rows);

// --- time series ---------------------------------------------------------------

struct TimeseriesWindow {
    std::uint64_t start_slot = 0;
    std::vector<std::vector<double>> rows; // history + horizon rows of raw features
};

struct TimeseriesDataset {
    std::size_t history = 25;
    std::size_t horizon = 20;
    std::size_t feature_width = 0;
    std::uint64_t scene_id = 0;
    FeatureStats stats; // over train rows, raw feature space
    std::vector<TimeseriesWindow> train, val, test;
};

// Cuts the slot axis into contiguous train/val/test regions (fractions of
// the slot count) and keeps only windows fully contained in one region, so
// no window straddles a split boundary. Window starts advance by `stride`.
TimeseriesDataset build_timeseries_dataset(const SnapshotArchive& archive, std::size_t history,
                                           std::size_t horizon, std::size_t stride,
                                           double train_frac, double val_frac);

// --- pilot/environment fusion -----------------------------------------------------

struct FusionSample {
    std::uint64_t sample_index = 0;
    Vec3 rx_position;
    std::vector<std::uint32_t> pilot_indices; // sorted, distinct subcarriers
    std::vector<double> target;               // raw features [2*n_tx*K]
    std::vector<double> views;                // n_views * res * res depths in [0,1]
};

struct FusionDataset {
    std::size_t n_tx = 0;
    std::size_t n_subcarriers = 0;
    std::size_t n_pilots = 8;
    std::size_t n_views = 4;
    std::size_t view_res = 32;
    std::uint64_t scene_id = 0;
    std::uint64_t seed = 0;
    FeatureStats stats; // over train targets
    std::vector<FusionSample> train, val, test;
};

struct FusionBuildSpec {
    std::size_t n_train = 600;
    std::size_t n_val = 100;
    std::size_t n_test = 100;
    std::size_t n_pilots = 8;
    std::size_t n_views = 4;
    std::size_t view_res = 32;
    std::size_t max_order = 2;
    double rx_height = 1.5;
    Rect region{0.0, 0.0, 0.0, 0.0}; // zero-area: sample the whole road network
    std::uint64_t seed = 1;          // governs positions, masks and the split
};

// Samples receiver positions on the road network, simulates CFR against
// `bs`, renders depth views, and assigns each sample a random pilot mask
// drawn from seed_for(seed ^ "mask", sample_index).
FusionDataset build_fusion_dataset(const scene::Scene& scene, const scene::Transceiver& bs,
                                   const rt::RadioConfig& radio, const FusionBuildSpec& spec);

// Model input for one sample: for each pilot subcarrier (sorted), the
// normalized re/im per antenna, then all pilot positions scaled to [0,1].
std::vector<double> fusion_pilot_input(const FusionSample& sample, const FeatureStats& stats,
                                       std::size_t n_tx, std::size_t n_subcarriers);

// Depth panorama around `eye`: n_views square views of fov 90 degrees,
// headings v * (360/n_views) degrees from +x, row 0 at the top. Depth is
// distance to the nearest box or ground hit divided by max_range, 1.0 for
// sky. Returns n_views * res * res values.
std::vector<double> render_env_views(const scene::Scene& scene, const Vec3& eye,
                                     std::size_t n_views, std::size_t res, double max_range);

// --- persistence -----------------------------------------------------------------

// Directory layout: manifest.json plus train.bin / val.bin / test.bin.
void save_timeseries_dataset(const std::string& dir, const TimeseriesDataset& ds);
TimeseriesDataset load_timeseries_dataset(const std::string& dir);
void save_fusion_dataset(const std::string& dir, const FusionDataset& ds);
FusionDataset load_fusion_dataset(const std::string& dir);

// FNV-1a hash of a dataset directory's manifest.json text, recorded by
// training reports to tie models to their data.
std::uint64_t manifest_fingerprint(const std::string& dir);

} // namespace dtc
