// SPDX-License-Identifier: Apache-2.0

#include "dtc/dataset.hpp"

#include "dtc/binio.hpp"
#include "dtc/raytrace.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace dtc {

std::vector<double> flatten_cfr(const std::vector<std::vector<cplx>>& cfr) {
    std::vector<double> out;
    out.reserve(cfr.size() * (cfr.empty() ? 0 : cfr[0].size()) * 2);
    for (const auto& row : cfr)
        for (const cplx& v : row) {
            out.push_back(v.real());
            out.push_back(v.imag());
        }
    return out;
}

std::vector<std::vector<cplx>> unflatten_cfr(const std::vector<double>& features,
                                             std::size_t n_tx, std::size_t n_subcarriers) {
    if (features.size() != 2 * n_tx * n_subcarriers)
        throw ValidationError("unflatten_cfr: feature width " + std::to_string(features.size()) +
                              " does not match " + std::to_string(2 * n_tx * n_subcarriers));
    std::vector<std::vector<cplx>> cfr(n_tx, std::vector<cplx>(n_subcarriers));
    for (std::size_t m = 0; m < n_tx; ++m)
        for (std::size_t k = 0; k < n_subcarriers; ++k) {
            const std::size_t base = 2 * (m * n_subcarriers + k);
            cfr[m][k] = cplx(features[base], features[base + 1]);
        }
    return cfr;
}

std::vector<double> FeatureStats::normalize(const std::vector<double>& row) const {
    if (row.size() != mean.size()) throw ValidationError("normalize: feature width mismatch");
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - mean[i]) / std_dev[i];
    return out;
}

std::vector<double> FeatureStats::denormalize(const std::vector<double>& row) const {
    if (row.size() != mean.size()) throw ValidationError("denormalize: feature width mismatch");
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] * std_dev[i] + mean[i];
    return out;
}

FeatureStats compute_stats(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ValidationError("compute_stats: no rows");
    const std::size_t f = rows[0].size();
    FeatureStats s;
    s.mean.assign(f, 0.0);
    s.std_dev.assign(f, 0.0);
    for (const auto& row : rows) {
        if (row.size() != f) throw ValidationError("compute_stats: ragged rows");
        for (std::size_t i = 0; i < f; ++i) s.mean[i] += row[i];
    }
    const double n = static_cast<double>(rows.size());
    for (std::size_t i = 0; i < f; ++i) s.mean[i] /= n;
    for (const auto& row : rows)
        for (std::size_t i = 0; i < f; ++i) {
            const double d = row[i] - s.mean[i];
            s.std_dev[i] += d * d;
        }
    for (std::size_t i = 0; i < f; ++i)
        s.std_dev[i] = std::max(std::sqrt(s.std_dev[i] / n), 1e-9);
    return s;
}

// --- time series ---------------------------------------------------------------

TimeseriesDataset build_timeseries_dataset(const SnapshotArchive& archive, std::size_t history,
                                           std::size_t horizon, std::size_t stride,
                                           double train_frac, double val_frac) {
    if (history == 0 || horizon == 0 || stride == 0)
        throw ValidationError("timeseries dataset: history, horizon, stride must be positive");
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
        throw ValidationError("timeseries dataset: bad split fractions");
    const std::size_t n = archive.slots.size();
    const std::size_t w = history + horizon;
    if (n < w)
        throw ValidationError("timeseries dataset: " + std::to_string(n) +
                              " slots cannot fit one window of " + std::to_string(w));

    TimeseriesDataset ds;
    ds.history = history;
    ds.horizon = horizon;
    ds.scene_id = archive.scene_id;
    ds.feature_width = 2 * archive.n_tx * static_cast<std::size_t>(archive.radio.n_subcarriers);

    std::vector<std::vector<double>> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = flatten_cfr(archive.slots[i].cfr);

    const auto t_end = static_cast<std::size_t>(static_cast<double>(n) * train_frac);
    const auto v_end = static_cast<std::size_t>(static_cast<double>(n) * (train_frac + val_frac));
    for (std::size_t start = 0; start + w <= n; start += stride) {
        const std::size_t end = start + w;
        TimeseriesWindow win;
        win.start_slot = archive.slots[start].slot_index;
        win.rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(start),
                        rows.begin() + static_cast<std::ptrdiff_t>(end));
        if (end <= t_end)
            ds.train.push_back(std::move(win));
        else if (start >= t_end && end <= v_end)
            ds.val.push_back(std::move(win));
        else if (start >= v_end)
            ds.test.push_back(std::move(win));
        // windows straddling a region boundary are dropped
    }
    if (ds.train.empty()) throw ValidationError("timeseries dataset: empty train split");

    std::vector<std::vector<double>> train_rows;
    for (const auto& win : ds.train)
        for (const auto& row : win.rows) train_rows.push_back(row);
    ds.stats = compute_stats(train_rows);
    return ds;
}

// --- depth views -----------------------------------------------------------------

namespace {

// Nearest positive ray/box intersection parameter, or +inf.
double ray_box_t(const Vec3& o, const Vec3& dir, const Vec3& lo, const Vec3& hi) {
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    const double ov[3] = {o.x, o.y, o.z};
    const double dv[3] = {dir.x, dir.y, dir.z};
    const double lv[3] = {lo.x, lo.y, lo.z};
    const double hv[3] = {hi.x, hi.y, hi.z};
    for (int ax = 0; ax < 3; ++ax) {
        if (dv[ax] == 0.0) {
            if (ov[ax] < lv[ax] || ov[ax] > hv[ax]) return std::numeric_limits<double>::infinity();
            continue;
        }
        double ta = (lv[ax] - ov[ax]) / dv[ax];
        double tb = (hv[ax] - ov[ax]) / dv[ax];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::numeric_limits<double>::infinity();
    }
    return t0;
}

} // namespace

std::vector<double> render_env_views(const scene::Scene& scene, const Vec3& eye,
                                     std::size_t n_views, std::size_t res, double max_range) {
    if (n_views == 0 || res == 0) throw ValidationError("render_env_views: empty view grid");
    if (max_range <= 0) throw ValidationError("render_env_views: max_range must be positive");

    std::vector<std::pair<Vec3, Vec3>> boxes; // (lo, hi)
    auto add_box = [&boxes](const scene::Box& b) {
        boxes.emplace_back(Vec3{b.footprint.min_x, b.footprint.min_y, 0.0},
                           Vec3{b.footprint.max_x, b.footprint.max_y, b.height});
    };
    for (const auto& b : scene.buildings) add_box(b);
    for (const auto& v : scene.vehicles) add_box(v);

    std::vector<double> out(n_views * res * res);
    for (std::size_t view = 0; view < n_views; ++view) {
        const double az = 2.0 * kPi * static_cast<double>(view) / static_cast<double>(n_views);
        const Vec3 forward{std::cos(az), std::sin(az), 0.0};
        const Vec3 right{std::sin(az), -std::cos(az), 0.0};
        const Vec3 up{0.0, 0.0, 1.0};
        for (std::size_t i = 0; i < res; ++i)
            for (std::size_t j = 0; j < res; ++j) {
                const double u =
                    2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(res) - 1.0;
                const double wv =
                    1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(res);
                const Vec3 dir = (forward + right * u + up * wv).normalized();
                double t = std::numeric_limits<double>::infinity();
                if (dir.z < 0.0) t = std::min(t, -eye.z / dir.z); // ground plane
                for (const auto& [lo, hi] : boxes) t = std::min(t, ray_box_t(eye, dir, lo, hi));
                out[(view * res + i) * res + j] = std::min(t / max_range, 1.0);
            }
    }
    return out;
}

// --- fusion ------------------------------------------------------------------------

namespace {

bool inside_any_box(const scene::Scene& scene, const Vec3& p) {
    auto inside = [&p](const scene::Box& b) {
        return b.footprint.contains(p.x, p.y) && p.z >= 0.0 && p.z < b.height;
    };
    return std::any_of(scene.buildings.begin(), scene.buildings.end(), inside) ||
           std::any_of(scene.vehicles.begin(), scene.vehicles.end(), inside);
}

std::vector<std::uint32_t> draw_pilot_mask(Rng& rng, std::size_t n_pilots, std::size_t k) {
    std::vector<std::uint32_t> all(k);
    for (std::size_t i = 0; i < k; ++i) all[i] = static_cast<std::uint32_t>(i);
    // partial Fisher-Yates: the first n_pilots entries become the draw
    for (std::size_t i = 0; i < n_pilots; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(
                                      static_cast<std::uint64_t>(k - i)));
        std::swap(all[i], all[j]);
    }
    std::vector<std::uint32_t> mask(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_pilots));
    std::sort(mask.begin(), mask.end());
    return mask;
}

} // namespace

FusionDataset build_fusion_dataset(const scene::Scene& scene, const scene::Transceiver& bs,
                                   const rt::RadioConfig& radio, const FusionBuildSpec& spec) {
    const std::size_t total = spec.n_train + spec.n_val + spec.n_test;
    if (total == 0) throw ValidationError("fusion dataset: no samples requested");
    if (spec.n_train == 0) throw ValidationError("fusion dataset: empty train split");
    if (scene.roads.empty()) throw ValidationError("fusion dataset: scene has no roads");
    const auto k = static_cast<std::size_t>(radio.n_subcarriers);
    if (spec.n_pilots == 0 || spec.n_pilots > k)
        throw ValidationError("fusion dataset: pilot count outside [1, n_subcarriers]");

    // Receiver positions on the road network, outside every box. A non-empty
    // region clips the draw to its intersection with each road. Positions in
    // full outage (no propagation path at all) are resampled: an all-zero CFR
    // is not a channel observation, and it has no defined NMSE.
    const bool clipped = spec.region.area() > 0.0;
    Rng pos_rng(seed_for(spec.seed, "fusion-positions"));
    auto draw_position = [&]() -> Vec3 {
        for (int attempt = 0; attempt < 200; ++attempt) {
            const auto& road =
                scene.roads[pos_rng.uniform_int(static_cast<std::uint64_t>(scene.roads.size()))];
            const double margin = 0.5;
            double lo_x = road.min_x + margin, hi_x = road.max_x - margin;
            double lo_y = road.min_y + margin, hi_y = road.max_y - margin;
            if (clipped) {
                lo_x = std::max(lo_x, spec.region.min_x);
                hi_x = std::min(hi_x, spec.region.max_x);
                lo_y = std::max(lo_y, spec.region.min_y);
                hi_y = std::min(hi_y, spec.region.max_y);
                if (lo_x >= hi_x || lo_y >= hi_y) continue;
            }
            const Vec3 p{pos_rng.uniform(lo_x, hi_x), pos_rng.uniform(lo_y, hi_y),
                         spec.rx_height};
            if (inside_any_box(scene, p)) continue;
            return p;
        }
        throw ValidationError("fusion dataset: could not place a receiver after bounded "
                              "retries (region misses the roads, or roads fully occupied)");
    };

    std::vector<Vec3> positions;
    std::vector<rt::ChannelSnapshot> snapshots;
    positions.reserve(total);
    snapshots.reserve(total);
    for (int round = 0; round < 50 && positions.size() < total; ++round) {
        std::vector<Vec3> batch;
        batch.reserve(total - positions.size());
        while (batch.size() < total - positions.size()) batch.push_back(draw_position());
        auto snaps = rt::simulate_at_positions(scene, bs, batch, radio,
                                               static_cast<int>(spec.max_order));
        const std::size_t before = positions.size();
        for (std::size_t i = 0; i < batch.size(); ++i) {
            if (snaps[i].paths.empty()) continue; // outage: resample next round
            positions.push_back(batch[i]);
            snapshots.push_back(std::move(snaps[i]));
        }
        if (positions.size() == before) break; // a whole round of outage: dead region
    }
    if (positions.size() < total)
        throw ValidationError("fusion dataset: sampling region is dominated by outage "
                              "positions (no propagation paths)");

    FusionDataset ds;
    ds.n_tx = static_cast<std::size_t>(bs.array.num_elements());
    ds.n_subcarriers = k;
    ds.n_pilots = spec.n_pilots;
    ds.n_views = spec.n_views;
    ds.view_res = spec.view_res;
    ds.scene_id = scene_content_id(scene);
    ds.seed = spec.seed;

    const std::uint64_t mask_seed = seed_for(spec.seed, "fusion-mask");
    std::vector<FusionSample> samples(total);
    for (std::size_t i = 0; i < total; ++i) {
        auto& s = samples[i];
        s.sample_index = i;
        s.rx_position = positions[i];
        Rng mask_rng(seed_for(mask_seed, std::to_string(i)));
        s.pilot_indices = draw_pilot_mask(mask_rng, spec.n_pilots, k);
        s.target = flatten_cfr(snapshots[i].cfr);
        s.views = render_env_views(scene, positions[i], spec.n_views, spec.view_res,
                                   scene.diagonal());
    }

    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    Rng split_rng(seed_for(spec.seed, "fusion-split"));
    split_rng.shuffle(order);
    for (std::size_t i = 0; i < total; ++i) {
        auto& dst = i < spec.n_train ? ds.train
                    : i < spec.n_train + spec.n_val ? ds.val
                                                    : ds.test;
        dst.push_back(std::move(samples[order[i]]));
    }

    std::vector<std::vector<double>> train_targets;
    train_targets.reserve(ds.train.size());
    for (const auto& s : ds.train) train_targets.push_back(s.target);
    ds.stats = compute_stats(train_targets);
    return ds;
}

std::vector<double> fusion_pilot_input(const FusionSample& sample, const FeatureStats& stats,
                                       std::size_t n_tx, std::size_t n_subcarriers) {
    const std::vector<double> norm = stats.normalize(sample.target);
    std::vector<double> out;
    out.reserve(2 * n_tx * sample.pilot_indices.size() + sample.pilot_indices.size());
    for (const std::uint32_t p : sample.pilot_indices) {
        if (p >= n_subcarriers) throw ValidationError("pilot index out of range");
        for (std::size_t m = 0; m < n_tx; ++m) {
            const std::size_t base = 2 * (m * n_subcarriers + p);
            out.push_back(norm[base]);
            out.push_back(norm[base + 1]);
        }
    }
    const double denom = n_subcarriers > 1 ? static_cast<double>(n_subcarriers - 1) : 1.0;
    for (const std::uint32_t p : sample.pilot_indices)
        out.push_back(static_cast<double>(p) / denom);
    return out;
}

// --- persistence ----------------------------------------------------------------------

namespace {

constexpr char kSplitMagic[4] = {'D', 'T', 'C', 'T'};
constexpr std::uint32_t kDatasetVersion = 1;

nlohmann::json stats_to_json(const FeatureStats& s) {
    return {{"mean", s.mean}, {"std", s.std_dev}};
}

FeatureStats stats_from_json(const nlohmann::json& j) {
    FeatureStats s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std_dev = j.at("std").get<std::vector<double>>();
    return s;
}

void write_manifest(const std::string& dir, const nlohmann::json& manifest) {
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw IoError("cannot open for writing: " + dir + "/manifest.json");
    f << manifest.dump(2) << "\n";
    if (!f) throw IoError("write failed: " + dir + "/manifest.json");
}

nlohmann::json read_manifest(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw IoError("cannot open: " + dir + "/manifest.json");
    return nlohmann::json::parse(f);
}

void write_ts_split(const std::string& path, const std::vector<TimeseriesWindow>& windows,
                    std::size_t rows_per_window, std::size_t feature_width) {
    io::BinWriter w(path);
    w.magic(kSplitMagic);
    w.u32(kDatasetVersion);
    w.u32(0); // task: time series
    w.u64(windows.size());
    w.u64(rows_per_window);
    w.u64(feature_width);
    for (const auto& win : windows) {
        if (win.rows.size() != rows_per_window)
            throw ValidationError("window length mismatch while saving");
        w.u64(win.start_slot);
        for (const auto& row : win.rows) {
            if (row.size() != feature_width)
                throw ValidationError("feature width mismatch while saving");
            w.f64s(row);
        }
    }
    w.close();
}

std::vector<TimeseriesWindow> read_ts_split(const std::string& path,
                                            std::size_t rows_per_window,
                                            std::size_t feature_width) {
    io::BinReader r(path);
    r.expect_magic(kSplitMagic);
    if (r.u32() != kDatasetVersion) throw IoError(path + ": unsupported dataset version");
    if (r.u32() != 0) throw IoError(path + ": not a time series split");
    const std::uint64_t n = r.u64();
    if (r.u64() != rows_per_window) throw IoError(path + ": window length mismatch");
    if (r.u64() != feature_width) throw IoError(path + ": feature width mismatch");
    std::vector<TimeseriesWindow> out(n);
    for (auto& win : out) {
        win.start_slot = r.u64();
        win.rows.resize(rows_per_window);
        for (auto& row : win.rows) row = r.f64s(feature_width);
    }
    return out;
}

void write_fusion_split(const std::string& path, const std::vector<FusionSample>& samples,
                        const FusionDataset& ds) {
    io::BinWriter w(path);
    w.magic(kSplitMagic);
    w.u32(kDatasetVersion);
    w.u32(1); // task: fusion
    w.u64(samples.size());
    w.u64(ds.n_pilots);
    w.u64(2 * ds.n_tx * ds.n_subcarriers);
    w.u64(ds.n_views * ds.view_res * ds.view_res);
    for (const auto& s : samples) {
        w.u64(s.sample_index);
        w.f64(s.rx_position.x);
        w.f64(s.rx_position.y);
        w.f64(s.rx_position.z);
        for (const auto p : s.pilot_indices) w.u32(p);
        if (s.target.size() != 2 * ds.n_tx * ds.n_subcarriers ||
            s.views.size() != ds.n_views * ds.view_res * ds.view_res ||
            s.pilot_indices.size() != ds.n_pilots)
            throw ValidationError("fusion sample dimensions mismatch while saving");
        w.f64s(s.target);
        w.f64s(s.views);
    }
    w.close();
}

std::vector<FusionSample> read_fusion_split(const std::string& path, const FusionDataset& ds) {
    io::BinReader r(path);
    r.expect_magic(kSplitMagic);
    if (r.u32() != kDatasetVersion) throw IoError(path + ": unsupported dataset version");
    if (r.u32() != 1) throw IoError(path + ": not a fusion split");
    const std::uint64_t n = r.u64();
    if (r.u64() != ds.n_pilots || r.u64() != 2 * ds.n_tx * ds.n_subcarriers ||
        r.u64() != ds.n_views * ds.view_res * ds.view_res)
        throw IoError(path + ": dimension mismatch against manifest");
    std::vector<FusionSample> out(n);
    for (auto& s : out) {
        s.sample_index = r.u64();
        s.rx_position.x = r.f64();
        s.rx_position.y = r.f64();
        s.rx_position.z = r.f64();
        s.pilot_indices.resize(ds.n_pilots);
        for (auto& p : s.pilot_indices) p = r.u32();
        s.target = r.f64s(2 * ds.n_tx * ds.n_subcarriers);
        s.views = r.f64s(ds.n_views * ds.view_res * ds.view_res);
    }
    return out;
}

} // namespace

void save_timeseries_dataset(const std::string& dir, const TimeseriesDataset& ds) {
    std::filesystem::create_directories(dir);
    nlohmann::json m;
    m["format"] = "dtc-dataset";
    m["version"] = kDatasetVersion;
    m["task"] = "timeseries";
    m["history"] = ds.history;
    m["horizon"] = ds.horizon;
    m["feature_width"] = ds.feature_width;
    m["scene_id"] = ds.scene_id;
    m["counts"] = {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}};
    m["stats"] = stats_to_json(ds.stats);
    write_manifest(dir, m);
    const std::size_t w = ds.history + ds.horizon;
    write_ts_split(dir + "/train.bin", ds.train, w, ds.feature_width);
    write_ts_split(dir + "/val.bin", ds.val, w, ds.feature_width);
    write_ts_split(dir + "/test.bin", ds.test, w, ds.feature_width);
}

TimeseriesDataset load_timeseries_dataset(const std::string& dir) {
    const auto m = read_manifest(dir);
    if (m.at("task").get<std::string>() != "timeseries")
        throw IoError(dir + ": manifest is not a time series dataset");
    TimeseriesDataset ds;
    ds.history = m.at("history").get<std::size_t>();
    ds.horizon = m.at("horizon").get<std::size_t>();
    ds.feature_width = m.at("feature_width").get<std::size_t>();
    ds.scene_id = m.at("scene_id").get<std::uint64_t>();
    ds.stats = stats_from_json(m.at("stats"));
    const std::size_t w = ds.history + ds.horizon;
    ds.train = read_ts_split(dir + "/train.bin", w, ds.feature_width);
    ds.val = read_ts_split(dir + "/val.bin", w, ds.feature_width);
    ds.test = read_ts_split(dir + "/test.bin", w, ds.feature_width);
    return ds;
}

void save_fusion_dataset(const std::string& dir, const FusionDataset& ds) {
    std::filesystem::create_directories(dir);
    nlohmann::json m;
    m["format"] = "dtc-dataset";
    m["version"] = kDatasetVersion;
    m["task"] = "fusion";
    m["n_tx"] = ds.n_tx;
    m["n_subcarriers"] = ds.n_subcarriers;
    m["n_pilots"] = ds.n_pilots;
    m["n_views"] = ds.n_views;
    m["view_res"] = ds.view_res;
    m["scene_id"] = ds.scene_id;
    m["seed"] = ds.seed;
    m["counts"] = {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}};
    m["stats"] = stats_to_json(ds.stats);
    write_manifest(dir, m);
    write_fusion_split(dir + "/train.bin", ds.train, ds);
    write_fusion_split(dir + "/val.bin", ds.val, ds);
    write_fusion_split(dir + "/test.bin", ds.test, ds);
}

FusionDataset load_fusion_dataset(const std::string& dir) {
    const auto m = read_manifest(dir);
    if (m.at("task").get<std::string>() != "fusion")
        throw IoError(dir + ": manifest is not a fusion dataset");
    FusionDataset ds;
    ds.n_tx = m.at("n_tx").get<std::size_t>();
    ds.n_subcarriers = m.at("n_subcarriers").get<std::size_t>();
    ds.n_pilots = m.at("n_pilots").get<std::size_t>();
    ds.n_views = m.at("n_views").get<std::size_t>();
    ds.view_res = m.at("view_res").get<std::size_t>();
    ds.scene_id = m.at("scene_id").get<std::uint64_t>();
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.stats = stats_from_json(m.at("stats"));
    ds.train = read_fusion_split(dir + "/train.bin", ds);
    ds.val = read_fusion_split(dir + "/val.bin", ds);
    ds.test = read_fusion_split(dir + "/test.bin", ds);
    return ds;
}

std::uint64_t manifest_fingerprint(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw IoError("cannot open: " + dir + "/manifest.json");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a64(text);
}

} // namespace dtc
