// SPDX-License-Identifier: Apache-2.0
//
// Decision layer on top of predicted channels: beam selection from a
// steering codebook, water-filling power allocation, coverage maps, and the
// feedback loop that measures decision quality on the true channel and
// triggers data recollection / fine-tuning when prediction quality decays.

#pragma once

#include "dtc/dataset.hpp"
#include "dtc/nn.hpp"

namespace dtc::loop {

// --- beam codebook -----------------------------------------------------------

struct BeamCodebook {
    std::size_t n_az = 0, n_el = 0;
    std::vector<std::pair<double, double>> angles;   // (azimuth, elevation) per beam
    std::vector<std::vector<cplx>> codewords;        // each [n_tx], unit norm

    std::size_t size() const { return codewords.size(); }

    // Steering codebook on a sine-space grid: azimuth covers the array's
    // front half-plane around `bearing`, elevation covers sin(el) in
    // [-0.5, 0.5]. Codeword b = steering(angle_b) / sqrt(n_tx).
    static BeamCodebook make(const scene::AntennaArray& array, std::size_t n_az, std::size_t n_el,
                             double bearing);
};

struct BeamChoice {
    std::size_t index = 0;
    double gain = 0.0; // mean over subcarriers of |w^H h_k|^2
};

// Argmax over codewords of the subcarrier-averaged beamforming gain;
// deterministic lowest-index tie-break. Throws on an all-zero channel.
BeamChoice select_beam(const std::vector<std::vector<cplx>>& cfr, const BeamCodebook& book);

// --- power allocation ----------------------------------------------------------

// Water-filling over per-user linear channel gains: maximizes
// sum log2(1 + p_i g_i / noise) subject to sum p = total_power, p >= 0.
std::vector<double> allocate_power(const std::vector<double>& gains, double total_power,
                                   double noise_power);

// --- coverage map ----------------------------------------------------------------

struct MapCell {
    double x = 0.0, y = 0.0;      // cell center
    double path_loss_db = 0.0;    // -20 log10 |sum of path amplitudes| at band center
    double rsrp_dbm = 0.0;        // tx power - path loss + best-beam array gain
    bool outage = false;          // no propagation path reached the cell
};

struct ChannelMap {
    std::size_t nx = 0, ny = 0;
    double resolution = 0.0;
    std::vector<MapCell> cells; // row-major, y outer
};

ChannelMap build_channel_map(const scene::Scene& scene, const scene::Transceiver& tx,
                             double resolution, const rt::RadioConfig& radio,
                             const BeamCodebook& book, std::size_t max_order, double rx_height,
                             double bearing);

// channel_map.csv: header "x,y,path_loss_db,rsrp_dbm,outage"; outage rows
// leave the two dB fields empty.
void write_channel_map_csv(const std::string& path, const ChannelMap& map);

// --- feedback loop ---------------------------------------------------------------

// One-step CSI predictor driving the loop's decisions.
class Predictor {
  public:
    virtual ~Predictor() = default;
    // history: raw feature rows, oldest first; `slot` is the archive index
    // being predicted. Returns the next raw row.
    virtual std::vector<double> predict(const std::vector<std::vector<double>>& history,
                                        std::uint64_t slot) = 0;
    // Bounded fine-tune on recollected raw rows; default no-op.
    virtual void finetune(const std::vector<std::vector<double>>& corpus, std::size_t epochs);
    virtual std::string name() const = 0;
};

// Prediction := truth at every slot (upper reference).
class OraclePredictor : public Predictor {
  public:
    explicit OraclePredictor(const std::vector<std::vector<double>>& truth) : truth_(truth) {}
    std::vector<double> predict(const std::vector<std::vector<double>>& history,
                                std::uint64_t slot) override;
    std::string name() const override { return "oracle"; }

  private:
    const std::vector<std::vector<double>>& truth_;
};

// Predicts the zero channel (lower reference).
class ZeroPredictor : public Predictor {
  public:
    explicit ZeroPredictor(std::size_t width) : width_(width) {}
    std::vector<double> predict(const std::vector<std::vector<double>>&, std::uint64_t) override {
        return std::vector<double>(width_, 0.0);
    }
    std::string name() const override { return "zero"; }

  private:
    std::size_t width_;
};

// Wraps a trained causal transformer plus its normalization stats.
class GptPredictor : public Predictor {
  public:
    GptPredictor(nn::GptModel model, FeatureStats stats, std::uint64_t finetune_seed = 1);
    std::vector<double> predict(const std::vector<std::vector<double>>& history,
                                std::uint64_t slot) override;
    void finetune(const std::vector<std::vector<double>>& corpus, std::size_t epochs) override;
    std::string name() const override { return "gpt"; }
    const nn::GptModel& model() const { return model_; }

  private:
    nn::GptModel model_;
    FeatureStats stats_;
    std::uint64_t seed_;
    std::size_t finetune_round_ = 0;
};

struct LoopThresholds {
    double recollect_nmse = 0.05; // per-slot NMSE above this appends the true snapshot
    double retrain_nmse = 0.1;    // sustained NMSE above this triggers fine-tuning
    std::size_t window = 20;      // consecutive slots above retrain_nmse before acting
    std::size_t finetune_epochs = 3;
};

struct FeedbackRecord {
    std::uint64_t slot = 0;
    double nmse = 0.0;
    double gain_ratio = 0.0; // achieved / oracle beamforming gain, in [0, 1]
    double sinr_db = 0.0;
    std::vector<double> powers;
    std::string action; // "none" | "recollect" | "retrain"
};

struct RetrainEvent {
    std::uint64_t slot = 0;
    double nmse_before = 0.0; // rolling mean over the window slots before the action
    double nmse_after = 0.0;  // rolling mean over the window slots after it
};

struct LoopResult {
    std::vector<FeedbackRecord> records;
    std::vector<RetrainEvent> retrains;
    std::size_t n_recollect = 0;
    std::size_t n_retrain = 0;
    double mean_nmse = 0.0;
    double mean_gain_ratio = 0.0;
};

// Runs the loop over the true per-slot CSI rows of `archive` (one user on a
// trajectory): predict slot t from slots < t, pick beam and power from the
// prediction, evaluate on the truth, feed the NMSE back into the
// recollect/retrain policy. The first `history` slots seed the context.
LoopResult run_loop(const SnapshotArchive& archive, Predictor& predictor,
                    const BeamCodebook& book, std::size_t history, double tx_power_dbm,
                    const LoopThresholds& thresholds);

// loop_log.jsonl: one FeedbackRecord object per line.
void write_loop_log(const std::string& path, const LoopResult& result);

} // namespace dtc::loop
