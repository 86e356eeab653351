// SPDX-License-Identifier: Apache-2.0
//
// End-to-end run orchestration shared by the command-line tool and the
// integration tests: one config struct covering every stage, a small
// key = value config-file reader, and the staged reference pipeline
// (scene -> simulate -> datasets -> training -> sweep -> table -> map -> loop).

#pragma once

#include "dtc/dtcloop.hpp"
#include "dtc/experiments.hpp"
#include "dtc/serialize.hpp"

namespace dtc::pipeline {

// Every knob of the reference run. Defaults mirror the bundled
// reference.toml; a config file or --set override only narrows them.
struct ReferenceConfig {
    struct SceneCfg {
        std::uint64_t seed = 1;
        std::uint64_t new_seed = 42; // held-out scene for the generalization table
    } scene;

    rt::RadioConfig radio; // carrier_freq, subcarrier_spacing, n_subcarriers, noise_figure_db

    struct ArrayCfg {
        std::size_t rows = 2;
        std::size_t cols = 2;
        double bearing = 0.0; // boresight azimuth, radians from +x
    } array;

    struct TrajectoryCfg {
        std::size_t road_index = 1;
        double lane_offset = 0.0;
        double start_offset = 0.0; // meters along the drive before slot 0
        double rx_height = 1.5;
        double speed = 5.0;
        double slot_duration = 0.01;
        std::size_t n_slots = 400;
        std::size_t max_order = 2;
        bool reverse = false;
    } trajectory;

    struct TimeseriesCfg {
        std::size_t history = 25;
        std::size_t horizon = 20;
        std::size_t stride = 4;
        double train_frac = 0.6;
        double val_frac = 0.2;
    } timeseries;

    struct GptCfg {
        std::size_t d_model = 64;
        std::size_t n_layers = 2;
        std::size_t n_heads = 4;
        std::size_t d_ff = 128;
        std::size_t context = 45;
    } gpt;
    experiments::TrainConfig gpt_train;

    struct ArCfg {
        std::size_t lags = 8;
        double ridge = 1e-6;
    } ar;

    struct MlpCfg {
        std::size_t lags = 4;
        std::size_t d_hidden = 64;
        std::size_t epochs = 8;
        double lr = 1e-3;
        std::uint64_t seed = 1;
    } mlp;

    struct FusionCfg {
        std::size_t n_train = 240;
        std::size_t n_val = 60;
        std::size_t n_test = 60;
        std::size_t n_pilots = 8;
        std::size_t n_views = 4;
        std::size_t view_res = 32;
        std::size_t d_model = 64;
        std::size_t max_order = 2;
        double rx_height = 1.5;
        Rect region{0.0, 0.0, 0.0, 0.0};
        std::uint64_t seed = 1;
    } fusion;
    experiments::TrainConfig fusion_train;

    struct SweepCfg {
        std::size_t max_horizon = 20;
    } sweep;

    struct MapCfg {
        double resolution = 5.0;
        std::size_t max_order = 1;
        double rx_height = 1.5;
    } map;

    struct LoopCfg {
        std::size_t history = 25;
        double tx_power_dbm = 30.0;
        double recollect_nmse = 0.05;
        double retrain_nmse = 0.1;
        std::size_t window = 20;
        std::size_t finetune_epochs = 3;
    } loop;

    ReferenceConfig();

    void validate() const;

    // Assembled module configs.
    scene::AntennaArray antenna() const;
    nn::GptConfig gpt_config() const;   // d_in bound to the radio/array feature width
    nn::FusionConfig fusion_config(bool use_env) const;
    FusionBuildSpec fusion_build_spec() const;
    loop::LoopThresholds loop_thresholds() const;
    std::size_t feature_width() const;
};

// Sets one `section.key` from its text form; unknown keys throw ConfigError,
// as do malformed values. This is the single entry point used by both the
// config-file reader and command-line overrides.
void apply_config_value(ReferenceConfig& cfg, const std::string& key, const std::string& value);

// Reads `key = value` lines under `[section]` headers, `#` comments, values
// as integers, floats, booleans or quoted strings. Returns `base` with every
// listed key applied.
ReferenceConfig parse_config_text(const std::string& text, ReferenceConfig base = {});
ReferenceConfig load_config_file(const std::string& path, ReferenceConfig base = {});

// Canonical text form; parse_config_text(resolved_config_text(c)) == c.
std::string resolved_config_text(const ReferenceConfig& cfg);

// --- stages ----------------------------------------------------------------------
// Pure functions of (config, inputs); all randomness flows through the seeds
// recorded in the config.

scene::Scene make_scene(const ReferenceConfig& cfg, std::uint64_t seed);
scene::Transceiver make_bs(const ReferenceConfig& cfg, const scene::Scene& sc);

SnapshotArchive simulate_trajectory(const ReferenceConfig& cfg, const scene::Scene& sc);

TimeseriesDataset build_timeseries(const ReferenceConfig& cfg, const SnapshotArchive& archive);
FusionDataset build_fusion(const ReferenceConfig& cfg, const scene::Scene& sc);

experiments::GptTrainResult train_gpt_stage(const ReferenceConfig& cfg,
                                            const TimeseriesDataset& ds);
experiments::FusionTrainResult train_fusion_stage(const ReferenceConfig& cfg,
                                                  const FusionDataset& ds, bool use_env);
experiments::LinearArModel fit_ar_stage(const ReferenceConfig& cfg, const TimeseriesDataset& ds);
experiments::MlpForecaster train_mlp_stage(const ReferenceConfig& cfg,
                                           const TimeseriesDataset& ds);

experiments::HorizonCurves sweep_stage(const ReferenceConfig& cfg, const TimeseriesDataset& ds,
                                       const nn::GptModel& gpt,
                                       const experiments::LinearArModel& ar,
                                       const experiments::MlpForecaster& mlp);

loop::BeamCodebook make_codebook(const ReferenceConfig& cfg);
loop::ChannelMap map_stage(const ReferenceConfig& cfg, const scene::Scene& sc);
loop::LoopResult loop_stage(const ReferenceConfig& cfg, const SnapshotArchive& archive,
                            loop::Predictor& predictor);

// --- the reference run -------------------------------------------------------------

struct ReproduceSummary {
    std::uint64_t origin_scene_id = 0;
    std::uint64_t new_scene_id = 0;
    double gpt_best_val_nmse = 0.0;
    double fusion_test_nmse = 0.0;
    double rs_wowei_test_nmse = 0.0;
    std::vector<experiments::Table2Row> table2;
    experiments::HorizonCurves curves;
    double loop_mean_nmse = 0.0;
    double loop_mean_gain_ratio = 0.0;
    double wall_seconds = 0.0;

    nlohmann::json to_json() const;
};

// Runs every stage with the config's seeds and writes the full artifact set
// under `out_dir`: resolved_config.toml, scene.json, scene_new.json,
// archive.dtcs(+.json), ts_dataset/, fusion_origin/, fusion_new/, gpt.dtck,
// fusion.dtck, rs_wowei.dtck, report_*.json, curve.csv/.svg, table2.csv/.txt,
// channel_map.csv, loop_log.jsonl, summary.json. `log` (optional) receives
// one line per completed stage.
ReproduceSummary reproduce_reference(const ReferenceConfig& cfg, const std::string& out_dir,
                                     const std::function<void(const std::string&)>& log = {});

} // namespace dtc::pipeline
