// SPDX-License-Identifier: Apache-2.0

#include "dtc/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include <json.hpp>

namespace dtc::pipeline {

namespace fs = std::filesystem;
using experiments::format_double;

// --- config value parsing ----------------------------------------------------------

namespace {

std::uint64_t to_u64(const std::string& key, const std::string& s) {
    try {
        std::size_t idx = 0;
        if (!s.empty() && s[0] == '-') throw std::invalid_argument("negative");
        const unsigned long long v = std::stoull(s, &idx);
        if (idx != s.size()) throw std::invalid_argument("trailing text");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a non-negative integer, got '" + s + "'");
    }
}

std::size_t to_size(const std::string& key, const std::string& s) {
    return static_cast<std::size_t>(to_u64(key, s));
}

double to_double(const std::string& key, const std::string& s) {
    try {
        std::size_t idx = 0;
        const double v = std::stod(s, &idx);
        if (idx != s.size()) throw std::invalid_argument("trailing text");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " expects a number, got '" + s + "'");
    }
}

bool to_bool(const std::string& key, const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("config: " + key + " expects true or false, got '" + s + "'");
}

using Setter = std::function<void(ReferenceConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setter_registry() {
    static const std::map<std::string, Setter> reg = {
        {"scene.seed", [](auto& c, auto& k, auto& v) { c.scene.seed = to_u64(k, v); }},
        {"scene.new_seed", [](auto& c, auto& k, auto& v) { c.scene.new_seed = to_u64(k, v); }},

        {"radio.carrier_freq", [](auto& c, auto& k, auto& v) { c.radio.carrier_freq = to_double(k, v); }},
        {"radio.subcarrier_spacing",
         [](auto& c, auto& k, auto& v) { c.radio.subcarrier_spacing = to_double(k, v); }},
        {"radio.n_subcarriers",
         [](auto& c, auto& k, auto& v) { c.radio.n_subcarriers = static_cast<int>(to_u64(k, v)); }},
        {"radio.noise_figure_db",
         [](auto& c, auto& k, auto& v) { c.radio.noise_figure_db = to_double(k, v); }},

        {"array.rows", [](auto& c, auto& k, auto& v) { c.array.rows = to_size(k, v); }},
        {"array.cols", [](auto& c, auto& k, auto& v) { c.array.cols = to_size(k, v); }},
        {"array.bearing", [](auto& c, auto& k, auto& v) { c.array.bearing = to_double(k, v); }},

        {"trajectory.road_index",
         [](auto& c, auto& k, auto& v) { c.trajectory.road_index = to_size(k, v); }},
        {"trajectory.lane_offset",
         [](auto& c, auto& k, auto& v) { c.trajectory.lane_offset = to_double(k, v); }},
        {"trajectory.start_offset",
         [](auto& c, auto& k, auto& v) { c.trajectory.start_offset = to_double(k, v); }},
        {"trajectory.rx_height",
         [](auto& c, auto& k, auto& v) { c.trajectory.rx_height = to_double(k, v); }},
        {"trajectory.speed", [](auto& c, auto& k, auto& v) { c.trajectory.speed = to_double(k, v); }},
        {"trajectory.slot_duration",
         [](auto& c, auto& k, auto& v) { c.trajectory.slot_duration = to_double(k, v); }},
        {"trajectory.n_slots",
         [](auto& c, auto& k, auto& v) { c.trajectory.n_slots = to_size(k, v); }},
        {"trajectory.max_order",
         [](auto& c, auto& k, auto& v) { c.trajectory.max_order = to_size(k, v); }},
        {"trajectory.reverse",
         [](auto& c, auto& k, auto& v) { c.trajectory.reverse = to_bool(k, v); }},

        {"timeseries.history",
         [](auto& c, auto& k, auto& v) { c.timeseries.history = to_size(k, v); }},
        {"timeseries.horizon",
         [](auto& c, auto& k, auto& v) { c.timeseries.horizon = to_size(k, v); }},
        {"timeseries.stride", [](auto& c, auto& k, auto& v) { c.timeseries.stride = to_size(k, v); }},
        {"timeseries.train_frac",
         [](auto& c, auto& k, auto& v) { c.timeseries.train_frac = to_double(k, v); }},
        {"timeseries.val_frac",
         [](auto& c, auto& k, auto& v) { c.timeseries.val_frac = to_double(k, v); }},

        {"gpt.d_model", [](auto& c, auto& k, auto& v) { c.gpt.d_model = to_size(k, v); }},
        {"gpt.n_layers", [](auto& c, auto& k, auto& v) { c.gpt.n_layers = to_size(k, v); }},
        {"gpt.n_heads", [](auto& c, auto& k, auto& v) { c.gpt.n_heads = to_size(k, v); }},
        {"gpt.d_ff", [](auto& c, auto& k, auto& v) { c.gpt.d_ff = to_size(k, v); }},
        {"gpt.context", [](auto& c, auto& k, auto& v) { c.gpt.context = to_size(k, v); }},

        {"gpt_train.epochs", [](auto& c, auto& k, auto& v) { c.gpt_train.epochs = to_size(k, v); }},
        {"gpt_train.batch_size",
         [](auto& c, auto& k, auto& v) { c.gpt_train.batch_size = to_size(k, v); }},
        {"gpt_train.lr", [](auto& c, auto& k, auto& v) { c.gpt_train.lr = to_double(k, v); }},
        {"gpt_train.lr_decay",
         [](auto& c, auto& k, auto& v) { c.gpt_train.lr_decay = to_double(k, v); }},
        {"gpt_train.seed", [](auto& c, auto& k, auto& v) { c.gpt_train.seed = to_u64(k, v); }},
        {"gpt_train.patience",
         [](auto& c, auto& k, auto& v) { c.gpt_train.patience = to_size(k, v); }},

        {"ar.lags", [](auto& c, auto& k, auto& v) { c.ar.lags = to_size(k, v); }},
        {"ar.ridge", [](auto& c, auto& k, auto& v) { c.ar.ridge = to_double(k, v); }},

        {"mlp.lags", [](auto& c, auto& k, auto& v) { c.mlp.lags = to_size(k, v); }},
        {"mlp.d_hidden", [](auto& c, auto& k, auto& v) { c.mlp.d_hidden = to_size(k, v); }},
        {"mlp.epochs", [](auto& c, auto& k, auto& v) { c.mlp.epochs = to_size(k, v); }},
        {"mlp.lr", [](auto& c, auto& k, auto& v) { c.mlp.lr = to_double(k, v); }},
        {"mlp.seed", [](auto& c, auto& k, auto& v) { c.mlp.seed = to_u64(k, v); }},

        {"fusion.n_train", [](auto& c, auto& k, auto& v) { c.fusion.n_train = to_size(k, v); }},
        {"fusion.n_val", [](auto& c, auto& k, auto& v) { c.fusion.n_val = to_size(k, v); }},
        {"fusion.n_test", [](auto& c, auto& k, auto& v) { c.fusion.n_test = to_size(k, v); }},
        {"fusion.n_pilots", [](auto& c, auto& k, auto& v) { c.fusion.n_pilots = to_size(k, v); }},
        {"fusion.n_views", [](auto& c, auto& k, auto& v) { c.fusion.n_views = to_size(k, v); }},
        {"fusion.view_res", [](auto& c, auto& k, auto& v) { c.fusion.view_res = to_size(k, v); }},
        {"fusion.d_model", [](auto& c, auto& k, auto& v) { c.fusion.d_model = to_size(k, v); }},
        {"fusion.max_order", [](auto& c, auto& k, auto& v) { c.fusion.max_order = to_size(k, v); }},
        {"fusion.rx_height",
         [](auto& c, auto& k, auto& v) { c.fusion.rx_height = to_double(k, v); }},
        {"fusion.region_min_x",
         [](auto& c, auto& k, auto& v) { c.fusion.region.min_x = to_double(k, v); }},
        {"fusion.region_min_y",
         [](auto& c, auto& k, auto& v) { c.fusion.region.min_y = to_double(k, v); }},
        {"fusion.region_max_x",
         [](auto& c, auto& k, auto& v) { c.fusion.region.max_x = to_double(k, v); }},
        {"fusion.region_max_y",
         [](auto& c, auto& k, auto& v) { c.fusion.region.max_y = to_double(k, v); }},
        {"fusion.seed", [](auto& c, auto& k, auto& v) { c.fusion.seed = to_u64(k, v); }},

        {"fusion_train.epochs",
         [](auto& c, auto& k, auto& v) { c.fusion_train.epochs = to_size(k, v); }},
        {"fusion_train.batch_size",
         [](auto& c, auto& k, auto& v) { c.fusion_train.batch_size = to_size(k, v); }},
        {"fusion_train.lr", [](auto& c, auto& k, auto& v) { c.fusion_train.lr = to_double(k, v); }},
        {"fusion_train.lr_decay",
         [](auto& c, auto& k, auto& v) { c.fusion_train.lr_decay = to_double(k, v); }},
        {"fusion_train.seed",
         [](auto& c, auto& k, auto& v) { c.fusion_train.seed = to_u64(k, v); }},
        {"fusion_train.patience",
         [](auto& c, auto& k, auto& v) { c.fusion_train.patience = to_size(k, v); }},

        {"sweep.max_horizon",
         [](auto& c, auto& k, auto& v) { c.sweep.max_horizon = to_size(k, v); }},

        {"map.resolution", [](auto& c, auto& k, auto& v) { c.map.resolution = to_double(k, v); }},
        {"map.max_order", [](auto& c, auto& k, auto& v) { c.map.max_order = to_size(k, v); }},
        {"map.rx_height", [](auto& c, auto& k, auto& v) { c.map.rx_height = to_double(k, v); }},

        {"loop.history", [](auto& c, auto& k, auto& v) { c.loop.history = to_size(k, v); }},
        {"loop.tx_power_dbm",
         [](auto& c, auto& k, auto& v) { c.loop.tx_power_dbm = to_double(k, v); }},
        {"loop.recollect_nmse",
         [](auto& c, auto& k, auto& v) { c.loop.recollect_nmse = to_double(k, v); }},
        {"loop.retrain_nmse",
         [](auto& c, auto& k, auto& v) { c.loop.retrain_nmse = to_double(k, v); }},
        {"loop.window", [](auto& c, auto& k, auto& v) { c.loop.window = to_size(k, v); }},
        {"loop.finetune_epochs",
         [](auto& c, auto& k, auto& v) { c.loop.finetune_epochs = to_size(k, v); }},
    };
    return reg;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

ReferenceConfig::ReferenceConfig() {
    gpt_train.epochs = 15;
    gpt_train.lr = 2e-3;
    gpt_train.lr_decay = 0.95;
    fusion_train.epochs = 12;
    fusion_train.lr = 1e-3;
}

void apply_config_value(ReferenceConfig& cfg, const std::string& key, const std::string& value) {
    const auto& reg = setter_registry();
    const auto it = reg.find(key);
    if (it == reg.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(cfg, key, value);
}

ReferenceConfig parse_config_text(const std::string& text, ReferenceConfig base) {
    std::string section;
    std::size_t line_no = 0;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(line_no) + ": empty section");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        const std::string full = section.empty() ? key : section + "." + key;
        try {
            apply_config_value(base, full, value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

ReferenceConfig load_config_file(const std::string& path, ReferenceConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text, std::move(base));
}

std::string resolved_config_text(const ReferenceConfig& c) {
    std::ostringstream o;
    auto u = [&](const char* k, std::uint64_t v) { o << k << " = " << v << "\n"; };
    auto d = [&](const char* k, double v) { o << k << " = " << format_double(v) << "\n"; };
    auto b = [&](const char* k, bool v) { o << k << " = " << (v ? "true" : "false") << "\n"; };

    o << "[scene]\n";
    u("seed", c.scene.seed);
    u("new_seed", c.scene.new_seed);
    o << "\n[radio]\n";
    d("carrier_freq", c.radio.carrier_freq);
    d("subcarrier_spacing", c.radio.subcarrier_spacing);
    u("n_subcarriers", static_cast<std::uint64_t>(c.radio.n_subcarriers));
    d("noise_figure_db", c.radio.noise_figure_db);
    o << "\n[array]\n";
    u("rows", c.array.rows);
    u("cols", c.array.cols);
    d("bearing", c.array.bearing);
    o << "\n[trajectory]\n";
    u("road_index", c.trajectory.road_index);
    d("lane_offset", c.trajectory.lane_offset);
    d("start_offset", c.trajectory.start_offset);
    d("rx_height", c.trajectory.rx_height);
    d("speed", c.trajectory.speed);
    d("slot_duration", c.trajectory.slot_duration);
    u("n_slots", c.trajectory.n_slots);
    u("max_order", c.trajectory.max_order);
    b("reverse", c.trajectory.reverse);
    o << "\n[timeseries]\n";
    u("history", c.timeseries.history);
    u("horizon", c.timeseries.horizon);
    u("stride", c.timeseries.stride);
    d("train_frac", c.timeseries.train_frac);
    d("val_frac", c.timeseries.val_frac);
    o << "\n[gpt]\n";
    u("d_model", c.gpt.d_model);
    u("n_layers", c.gpt.n_layers);
    u("n_heads", c.gpt.n_heads);
    u("d_ff", c.gpt.d_ff);
    u("context", c.gpt.context);
    o << "\n[gpt_train]\n";
    u("epochs", c.gpt_train.epochs);
    u("batch_size", c.gpt_train.batch_size);
    d("lr", c.gpt_train.lr);
    d("lr_decay", c.gpt_train.lr_decay);
    u("seed", c.gpt_train.seed);
    u("patience", c.gpt_train.patience);
    o << "\n[ar]\n";
    u("lags", c.ar.lags);
    d("ridge", c.ar.ridge);
    o << "\n[mlp]\n";
    u("lags", c.mlp.lags);
    u("d_hidden", c.mlp.d_hidden);
    u("epochs", c.mlp.epochs);
    d("lr", c.mlp.lr);
    u("seed", c.mlp.seed);
    o << "\n[fusion]\n";
    u("n_train", c.fusion.n_train);
    u("n_val", c.fusion.n_val);
    u("n_test", c.fusion.n_test);
    u("n_pilots", c.fusion.n_pilots);
    u("n_views", c.fusion.n_views);
    u("view_res", c.fusion.view_res);
    u("d_model", c.fusion.d_model);
    u("max_order", c.fusion.max_order);
    d("rx_height", c.fusion.rx_height);
    d("region_min_x", c.fusion.region.min_x);
    d("region_min_y", c.fusion.region.min_y);
    d("region_max_x", c.fusion.region.max_x);
    d("region_max_y", c.fusion.region.max_y);
    u("seed", c.fusion.seed);
    o << "\n[fusion_train]\n";
    u("epochs", c.fusion_train.epochs);
    u("batch_size", c.fusion_train.batch_size);
    d("lr", c.fusion_train.lr);
    d("lr_decay", c.fusion_train.lr_decay);
    u("seed", c.fusion_train.seed);
    u("patience", c.fusion_train.patience);
    o << "\n[sweep]\n";
    u("max_horizon", c.sweep.max_horizon);
    o << "\n[map]\n";
    d("resolution", c.map.resolution);
    u("max_order", c.map.max_order);
    d("rx_height", c.map.rx_height);
    o << "\n[loop]\n";
    u("history", c.loop.history);
    d("tx_power_dbm", c.loop.tx_power_dbm);
    d("recollect_nmse", c.loop.recollect_nmse);
    d("retrain_nmse", c.loop.retrain_nmse);
    u("window", c.loop.window);
    u("finetune_epochs", c.loop.finetune_epochs);
    return o.str();
}

// --- derived configs ----------------------------------------------------------------

scene::AntennaArray ReferenceConfig::antenna() const {
    scene::AntennaArray a;
    if (array.rows == 1 && array.cols == 1) {
        a.kind = scene::ArrayKind::single;
    } else {
        a.kind = scene::ArrayKind::upa;
        a.rows = array.rows;
        a.cols = array.cols;
    }
    return a;
}

std::size_t ReferenceConfig::feature_width() const {
    return 2 * antenna().num_elements() * static_cast<std::size_t>(radio.n_subcarriers);
}

nn::GptConfig ReferenceConfig::gpt_config() const {
    nn::GptConfig g;
    g.d_in = feature_width();
    g.d_model = gpt.d_model;
    g.n_layers = gpt.n_layers;
    g.n_heads = gpt.n_heads;
    g.d_ff = gpt.d_ff;
    g.context = gpt.context;
    return g;
}

nn::FusionConfig ReferenceConfig::fusion_config(bool use_env) const {
    nn::FusionConfig f;
    f.n_tx = antenna().num_elements();
    f.n_subcarriers = static_cast<std::size_t>(radio.n_subcarriers);
    f.n_pilots = fusion.n_pilots;
    f.n_views = fusion.n_views;
    f.view_res = fusion.view_res;
    f.d_model = fusion.d_model;
    f.use_env = use_env;
    return f;
}

FusionBuildSpec ReferenceConfig::fusion_build_spec() const {
    FusionBuildSpec s;
    s.n_train = fusion.n_train;
    s.n_val = fusion.n_val;
    s.n_test = fusion.n_test;
    s.n_pilots = fusion.n_pilots;
    s.n_views = fusion.n_views;
    s.view_res = fusion.view_res;
    s.max_order = fusion.max_order;
    s.rx_height = fusion.rx_height;
    s.region = fusion.region;
    s.seed = fusion.seed;
    return s;
}

loop::LoopThresholds ReferenceConfig::loop_thresholds() const {
    loop::LoopThresholds t;
    t.recollect_nmse = loop.recollect_nmse;
    t.retrain_nmse = loop.retrain_nmse;
    t.window = loop.window;
    t.finetune_epochs = loop.finetune_epochs;
    return t;
}

void ReferenceConfig::validate() const {
    radio.validate();
    antenna().validate();
    gpt_config().validate();
    gpt_train.validate();
    fusion_train.validate();
    if (timeseries.history == 0 || timeseries.horizon == 0 || timeseries.stride == 0)
        throw ConfigError("config: timeseries history/horizon/stride must be positive");
    if (timeseries.history + timeseries.horizon > gpt.context)
        throw ConfigError("config: history + horizon must fit the transformer context");
    if (sweep.max_horizon == 0 || sweep.max_horizon > timeseries.horizon)
        throw ConfigError("config: sweep horizon must lie in [1, timeseries.horizon]");
    if (trajectory.n_slots <= loop.history)
        throw ConfigError("config: trajectory must outlast the loop history");
    if (fusion.n_pilots == 0 ||
        fusion.n_pilots > static_cast<std::size_t>(radio.n_subcarriers))
        throw ConfigError("config: pilot count must lie in [1, n_subcarriers]");
    if (map.resolution <= 0.0) throw ConfigError("config: map resolution must be positive");
    if (loop.window == 0) throw ConfigError("config: loop window must be positive");
}

// --- stages --------------------------------------------------------------------------

scene::Scene make_scene(const ReferenceConfig&, std::uint64_t seed) {
    return scene::generate_urban_scene(seed);
}

scene::Transceiver make_bs(const ReferenceConfig& cfg, const scene::Scene& sc) {
    scene::Transceiver bs;
    bs.position = scene::default_bs_position(sc);
    bs.array = cfg.antenna();
    bs.tx_power_dbm = cfg.loop.tx_power_dbm;
    return bs;
}

SnapshotArchive simulate_trajectory(const ReferenceConfig& cfg, const scene::Scene& sc) {
    const auto bs = make_bs(cfg, sc);
    auto traj = scene::road_trajectory(sc, cfg.trajectory.road_index, cfg.trajectory.lane_offset,
                                       cfg.trajectory.rx_height, cfg.trajectory.speed,
                                       cfg.trajectory.slot_duration, cfg.trajectory.reverse);
    if (cfg.trajectory.start_offset > 0.0) {
        // advance the entry waypoint along the drive direction
        Vec3& a = traj.waypoints.front();
        const Vec3& b = traj.waypoints.back();
        const double len = traj.path_length();
        if (cfg.trajectory.start_offset >= len)
            throw ConfigError("config: trajectory.start_offset exceeds the road length");
        const double f = cfg.trajectory.start_offset / len;
        a = {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), a.z + f * (b.z - a.z)};
    }
    SnapshotArchive ar;
    ar.radio = cfg.radio;
    ar.n_tx = bs.array.num_elements();
    ar.scene_id = scene_content_id(sc);
    ar.slots = rt::simulate_along_trajectory(sc, bs, traj, cfg.trajectory.n_slots, cfg.radio,
                                             static_cast<int>(cfg.trajectory.max_order),
                                             cfg.array.bearing);
    return ar;
}

TimeseriesDataset build_timeseries(const ReferenceConfig& cfg, const SnapshotArchive& archive) {
    return build_timeseries_dataset(archive, cfg.timeseries.history, cfg.timeseries.horizon,
                                    cfg.timeseries.stride, cfg.timeseries.train_frac,
                                    cfg.timeseries.val_frac);
}

FusionDataset build_fusion(const ReferenceConfig& cfg, const scene::Scene& sc) {
    return build_fusion_dataset(sc, make_bs(cfg, sc), cfg.radio, cfg.fusion_build_spec());
}

experiments::GptTrainResult train_gpt_stage(const ReferenceConfig& cfg,
                                            const TimeseriesDataset& ds) {
    return experiments::train_gpt(ds, cfg.gpt_config(), cfg.gpt_train);
}

experiments::FusionTrainResult train_fusion_stage(const ReferenceConfig& cfg,
                                                  const FusionDataset& ds, bool use_env) {
    return experiments::train_fusion(ds, cfg.fusion_config(use_env), cfg.fusion_train);
}

experiments::LinearArModel fit_ar_stage(const ReferenceConfig& cfg, const TimeseriesDataset& ds) {
    return experiments::LinearArModel::fit(ds, cfg.ar.lags, cfg.ar.ridge);
}

experiments::MlpForecaster train_mlp_stage(const ReferenceConfig& cfg,
                                           const TimeseriesDataset& ds) {
    experiments::TrainConfig t;
    t.epochs = cfg.mlp.epochs;
    t.lr = cfg.mlp.lr;
    t.seed = cfg.mlp.seed;
    t.patience = cfg.mlp.epochs + 1;
    return experiments::train_mlp_forecaster(ds, cfg.mlp.lags, cfg.mlp.d_hidden, t);
}

experiments::HorizonCurves sweep_stage(const ReferenceConfig& cfg, const TimeseriesDataset& ds,
                                       const nn::GptModel& gpt,
                                       const experiments::LinearArModel& ar,
                                       const experiments::MlpForecaster& mlp) {
    return experiments::horizon_sweep(ds, gpt, ar, mlp, cfg.sweep.max_horizon);
}

loop::BeamCodebook make_codebook(const ReferenceConfig& cfg) {
    // grid resolution equals the array size: no oversampling
    const auto a = cfg.antenna();
    const std::size_t n_az = a.kind == scene::ArrayKind::upa ? a.cols : 1;
    const std::size_t n_el = a.kind == scene::ArrayKind::upa ? a.rows : 1;
    return loop::BeamCodebook::make(a, n_az, n_el, cfg.array.bearing);
}

loop::ChannelMap map_stage(const ReferenceConfig& cfg, const scene::Scene& sc) {
    return loop::build_channel_map(sc, make_bs(cfg, sc), cfg.map.resolution, cfg.radio,
                                   make_codebook(cfg), cfg.map.max_order, cfg.map.rx_height,
                                   cfg.array.bearing);
}

loop::LoopResult loop_stage(const ReferenceConfig& cfg, const SnapshotArchive& archive,
                            loop::Predictor& predictor) {
    return loop::run_loop(archive, predictor, make_codebook(cfg), cfg.loop.history,
                          cfg.loop.tx_power_dbm, cfg.loop_thresholds());
}

// --- reference run -------------------------------------------------------------------

nlohmann::json ReproduceSummary::to_json() const {
    nlohmann::json curves_j = nlohmann::json::object();
    for (const auto& [name, nm] : curves.models) curves_j[name] = nm;
    nlohmann::json table_j = nlohmann::json::array();
    for (const auto& r : table2)
        table_j.push_back({{"method", r.method},
                           {"scene", r.scene},
                           {"nmse", r.nmse},
                           {"cosine", r.cosine}});
    return {{"origin_scene_id", origin_scene_id},
            {"new_scene_id", new_scene_id},
            {"gpt_best_val_nmse", gpt_best_val_nmse},
            {"fusion_test_nmse", fusion_test_nmse},
            {"rs_wowei_test_nmse", rs_wowei_test_nmse},
            {"table2", table_j},
            {"curves", curves_j},
            {"loop_mean_nmse", loop_mean_nmse},
            {"loop_mean_gain_ratio", loop_mean_gain_ratio},
            {"wall_seconds", wall_seconds}};
}

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

void write_json(const std::string& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

std::vector<experiments::PlotSeries> curve_series(const experiments::HorizonCurves& curves) {
    std::vector<experiments::PlotSeries> series;
    for (const auto& [name, nm] : curves.models) {
        experiments::PlotSeries s;
        s.name = name;
        for (std::size_t h = 0; h < nm.size(); ++h) {
            s.xs.push_back(static_cast<double>(h + 1));
            s.ys.push_back(nm[h]);
        }
        series.push_back(std::move(s));
    }
    return series;
}

} // namespace

ReproduceSummary reproduce_reference(const ReferenceConfig& cfg, const std::string& out_dir,
                                     const std::function<void(const std::string&)>& log) {
    const auto t0 = std::chrono::steady_clock::now();
    auto say = [&](const std::string& m) {
        if (log) log(m);
    };
    cfg.validate();
    fs::create_directories(out_dir);
    const auto at = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

    write_text(at("resolved_config.toml"), resolved_config_text(cfg));

    const scene::Scene origin = make_scene(cfg, cfg.scene.seed);
    const scene::Scene fresh = make_scene(cfg, cfg.scene.new_seed);
    scene::save_scene(origin, at("scene.json"));
    scene::save_scene(fresh, at("scene_new.json"));
    say("scene: generated origin + held-out scenes");

    const SnapshotArchive archive = simulate_trajectory(cfg, origin);
    save_archive(at("archive.dtcs"), archive);
    say("simulate: " + std::to_string(archive.slots.size()) + " slots traced");

    const TimeseriesDataset ts = build_timeseries(cfg, archive);
    save_timeseries_dataset(at("ts_dataset"), ts);
    const FusionDataset fus_origin = build_fusion(cfg, origin);
    save_fusion_dataset(at("fusion_origin"), fus_origin);
    const FusionDataset fus_new = build_fusion(cfg, fresh);
    save_fusion_dataset(at("fusion_new"), fus_new);
    say("dataset: timeseries " + std::to_string(ts.train.size()) + "/" +
        std::to_string(ts.val.size()) + "/" + std::to_string(ts.test.size()) + " windows");

    ReproduceSummary sum;
    sum.origin_scene_id = scene_content_id(origin);
    sum.new_scene_id = scene_content_id(fresh);

    auto gpt = train_gpt_stage(cfg, ts);
    sum.gpt_best_val_nmse = gpt.report.best_val_nmse;
    {
        auto ckpt = nn::pack_gpt(gpt.model, {{"task", "gpt"}});
        nn::save_checkpoint(at("gpt.dtck"), ckpt);
    }
    write_json(at("report_gpt.json"), gpt.report.to_json());
    say("train: gpt best val nmse " + format_double(gpt.report.best_val_nmse));

    const auto ar_model = fit_ar_stage(cfg, ts);
    const auto mlp = train_mlp_stage(cfg, ts);
    say("train: linear-ar + mlp baselines fitted");

    auto fusion = train_fusion_stage(cfg, fus_origin, true);
    auto wowei = train_fusion_stage(cfg, fus_origin, false);
    {
        auto cf = nn::pack_fusion(fusion.model, {{"task", "fusion"}});
        nn::save_checkpoint(at("fusion.dtck"), cf);
        auto cw = nn::pack_fusion(wowei.model, {{"task", "rs_wowei"}});
        nn::save_checkpoint(at("rs_wowei.dtck"), cw);
    }
    write_json(at("report_fusion.json"), fusion.report.to_json());
    write_json(at("report_rs_wowei.json"), wowei.report.to_json());
    sum.fusion_test_nmse =
        experiments::eval_fusion_split(fusion.model, fus_origin.test, fus_origin.stats).nmse;
    sum.rs_wowei_test_nmse =
        experiments::eval_fusion_split(wowei.model, fus_origin.test, fus_origin.stats).nmse;
    say("train: fusion " + format_double(sum.fusion_test_nmse) + " vs rs_wowei " +
        format_double(sum.rs_wowei_test_nmse) + " test nmse");

    sum.curves = sweep_stage(cfg, ts, gpt.model, ar_model, mlp);
    experiments::write_curve_csv(at("curve.csv"), sum.curves);
    experiments::write_line_plot_svg(at("curve.svg"), "Prediction NMSE vs horizon",
                                     "horizon (slots)", "NMSE", curve_series(sum.curves));
    say("sweep: curve.csv written");

    sum.table2 = experiments::generalization_study(fusion.model, wowei.model, fus_origin, fus_new);
    experiments::write_table2_csv(at("table2.csv"), sum.table2);
    write_text(at("table2.txt"), experiments::format_table2_text(sum.table2));
    say("table2: generalization rows written");

    const auto cmap = map_stage(cfg, origin);
    loop::write_channel_map_csv(at("channel_map.csv"), cmap);
    say("map: " + std::to_string(cmap.nx) + "x" + std::to_string(cmap.ny) + " cells");

    loop::GptPredictor predictor(gpt.model, ts.stats, cfg.gpt_train.seed);
    const auto lres = loop_stage(cfg, archive, predictor);
    loop::write_loop_log(at("loop_log.jsonl"), lres);
    sum.loop_mean_nmse = lres.mean_nmse;
    sum.loop_mean_gain_ratio = lres.mean_gain_ratio;
    say("loop: mean nmse " + format_double(lres.mean_nmse) + ", mean gain ratio " +
        format_double(lres.mean_gain_ratio));

    sum.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(at("summary.json"), sum.to_json());
    return sum;
}

} // namespace dtc::pipeline
