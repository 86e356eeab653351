// SPDX-License-Identifier: Apache-2.0
//
// Metrics, seeded training loops, forecasting baselines, and the two study
// drivers: the horizon sweep (CSI prediction quality vs. prediction depth)
// and the origin/new-scene generalization table for the pilot fusion task.

#pragma once

#include "dtc/dataset.hpp"
#include "dtc/nn.hpp"

namespace dtc::experiments {

// --- metrics -----------------------------------------------------------------

// ||pred - truth||^2 / ||truth||^2 over all elements. Interleaved re/im
// vectors give exactly the complex norms.
double nmse(const std::vector<double>& pred, const std::vector<double>& truth);

// Re<pred, truth> / (||pred|| * ||truth||), in [-1, 1]. On interleaved
// re/im vectors the real dot product equals Re of the complex inner product.
double cosine_similarity(const std::vector<double>& pred, const std::vector<double>& truth);

// Pooled accumulator so split-level NMSE weights every element equally.
struct MetricAccumulator {
    double err_sq = 0.0;
    double ref_sq = 0.0;
    double dot = 0.0;
    double pred_sq = 0.0;

    void add(const std::vector<double>& pred, const std::vector<double>& truth);
    double nmse() const;   // err_sq / ref_sq
    double cosine() const; // dot / sqrt(pred_sq * ref_sq)
};

// --- training ------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 1; // optimizer steps consume this many windows
    double lr = 1e-3;
    double lr_decay = 1.0; // per-epoch multiplier
    std::uint64_t seed = 1;
    std::size_t patience = 10; // early stop after this many non-improving epochs

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStat {
    std::size_t epoch = 0;
    double train_loss = 0.0; // mean MSE on normalized targets
    double val_nmse = 0.0;   // denormalized, pooled
};

struct MetricsReport {
    std::string task;
    nlohmann::json config_echo; // train config + model config, verbatim
    std::uint64_t dataset_fingerprint = 0;
    std::vector<std::uint64_t> scene_ids;
    std::vector<EpochStat> curves;
    std::size_t best_epoch = 0;
    double best_val_nmse = 0.0;
    double wall_seconds = 0.0;

    nlohmann::json to_json() const;
};

struct GptTrainResult {
    nn::GptModel model; // best-validation weights
    MetricsReport report;
};

// Teacher-forced training on normalized windows; keeps the weights of the
// best validation epoch. Zero epochs returns the seeded initial model.
GptTrainResult train_gpt(const TimeseriesDataset& ds, const nn::GptConfig& mcfg,
                         const TrainConfig& tcfg);

struct FusionTrainResult {
    nn::FusionModel model;
    MetricsReport report;
};

// Pilot (+ optional environment) reconstruction training. The rs_wowei
// ablation is the same call with mcfg.use_env = false.
FusionTrainResult train_fusion(const FusionDataset& ds, const nn::FusionConfig& mcfg,
                               const TrainConfig& tcfg);

// --- forecasting baselines ------------------------------------------------------

// Per-feature autoregression with bias, fit by ridge least squares on the
// train windows (normalized feature space), rolled out recursively.
struct LinearArModel {
    std::size_t lags = 8;
    double ridge = 1e-6;
    std::vector<std::vector<double>> coef; // [feature][lags + 1], bias last

    static LinearArModel fit(const TimeseriesDataset& ds, std::size_t lags, double ridge);
    // history: normalized rows, oldest first, size >= lags.
    std::vector<std::vector<double>> rollout(const std::vector<std::vector<double>>& history,
                                             std::size_t n_steps) const;
};

// One-step MLP forecaster on the last `lags` rows, rolled out recursively.
struct MlpForecaster {
    std::size_t lags = 4;
    nn::MlpModel model;

    std::vector<std::vector<double>> rollout(const std::vector<std::vector<double>>& history,
                                             std::size_t n_steps) const;
};

MlpForecaster train_mlp_forecaster(const TimeseriesDataset& ds, std::size_t lags,
                                   std::size_t d_hidden, const TrainConfig& tcfg);

// --- horizon sweep ---------------------------------------------------------------

struct HorizonCurves {
    std::size_t max_horizon = 20;
    // fixed emission order; nmse[i] is the pooled test NMSE at horizon i+1
    std::vector<std::pair<std::string, std::vector<double>>> models;
};

// Rolls every test window's history forward max_horizon slots with each
// model and pools NMSE per horizon. Models: gpt, identity_hold, linear_ar,
// mlp.
HorizonCurves horizon_sweep(const TimeseriesDataset& ds, const nn::GptModel& gpt,
                            const LinearArModel& ar, const MlpForecaster& mlp,
                            std::size_t max_horizon);

// --- generalization study ---------------------------------------------------------

struct EvalResult {
    double nmse = 0.0;
    double cosine = 0.0;
};

// Pooled metrics of a fusion model over one sample list. `stats` must be
// the stats the model was trained with (its origin corpus).
EvalResult eval_fusion_split(const nn::FusionModel& model, const std::vector<FusionSample>& samples,
                             const FeatureStats& stats);

struct Table2Row {
    std::string method; // "fusion" | "rs_wowei"
    std::string scene;  // "origin" | "new"
    double nmse = 0.0;
    double cosine = 0.0;
};

// Evaluates both models (trained on the origin corpus only) on the origin
// and new-scene test splits. Inputs to both models are normalized with the
// origin stats throughout.
std::vector<Table2Row> generalization_study(const nn::FusionModel& fusion,
                                            const nn::FusionModel& rs_wowei,
                                            const FusionDataset& origin,
                                            const FusionDataset& new_scene);

// --- artifact emission -------------------------------------------------------------

// curve.csv: header "model,horizon,nmse", one row per model x horizon.
void write_curve_csv(const std::string& path, const HorizonCurves& curves);

// table2.csv: header "method,scene,nmse,cosine".
void write_table2_csv(const std::string& path, const std::vector<Table2Row>& rows);
std::string format_table2_text(const std::vector<Table2Row>& rows);

struct PlotSeries {
    std::string name;
    std::vector<double> xs, ys;
};

// Self-contained SVG line chart; axes are scaled to the data.
void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<PlotSeries>& series);

// Deterministic shortest-faithful double formatting shared by all CSV/SVG
// emitters (round-trips exactly; identical doubles give identical bytes).
std::string format_double(double v);

} // namespace dtc::experiments
