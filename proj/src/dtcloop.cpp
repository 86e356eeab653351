// SPDX-License-Identifier: Apache-2.0

#include "dtc/dtcloop.hpp"

#include "dtc/experiments.hpp"
#include "dtc/raytrace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace dtc::loop {

namespace {

double beam_gain(const std::vector<std::vector<cplx>>& cfr, const std::vector<cplx>& w) {
    const std::size_t n_tx = cfr.size(), k_count = cfr[0].size();
    double acc = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) {
        cplx s{0.0, 0.0};
        for (std::size_t m = 0; m < n_tx; ++m) s += std::conj(w[m]) * cfr[m][k];
        acc += std::norm(s);
    }
    return acc / static_cast<double>(k_count);
}

double channel_power(const std::vector<std::vector<cplx>>& cfr) {
    double p = 0.0;
    for (const auto& row : cfr)
        for (const cplx& h : row) p += std::norm(h);
    return p;
}

} // namespace

// --- beam codebook -----------------------------------------------------------

BeamCodebook BeamCodebook::make(const scene::AntennaArray& array, std::size_t n_az,
                                std::size_t n_el, double bearing) {
    array.validate();
    if (n_az == 0 || n_el == 0) throw ConfigError("codebook: empty angle grid");
    const int n = array.num_elements();
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));

    BeamCodebook book;
    book.n_az = n_az;
    book.n_el = n_el;
    for (std::size_t l = 0; l < n_el; ++l) {
        // sin(el) uniform in [-0.5, 0.5]: streets live near the horizon
        const double el = std::asin(-0.5 + (static_cast<double>(l) + 0.5) / static_cast<double>(n_el));
        for (std::size_t k = 0; k < n_az; ++k) {
            // sin(az - bearing) uniform in (-1, 1): the front half-plane
            const double az =
                bearing +
                std::asin(-1.0 + (2.0 * static_cast<double>(k) + 1.0) / static_cast<double>(n_az));
            std::vector<cplx> w(static_cast<std::size_t>(n));
            for (int m = 0; m < n; ++m)
                w[static_cast<std::size_t>(m)] =
                    rt::element_response(array, m, az, el, bearing) * inv_sqrt_n;
            book.angles.emplace_back(az, el);
            book.codewords.push_back(std::move(w));
        }
    }
    return book;
}

BeamChoice select_beam(const std::vector<std::vector<cplx>>& cfr, const BeamCodebook& book) {
    if (book.codewords.empty()) throw ConfigError("select_beam: empty codebook");
    if (cfr.empty() || cfr[0].empty() || cfr.size() != book.codewords[0].size())
        throw ValidationError("select_beam: channel/codebook element count mismatch");
    if (channel_power(cfr) == 0.0) throw ValidationError("select_beam: all-zero channel");

    BeamChoice best{0, beam_gain(cfr, book.codewords[0])};
    for (std::size_t b = 1; b < book.codewords.size(); ++b) {
        const double g = beam_gain(cfr, book.codewords[b]);
        if (g > best.gain) best = {b, g};
    }
    return best;
}

// --- power allocation ----------------------------------------------------------

std::vector<double> allocate_power(const std::vector<double>& gains, double total_power,
                                   double noise_power) {
    if (gains.empty()) throw ValidationError("allocate_power: no users");
    if (total_power <= 0.0 || noise_power <= 0.0)
        throw ValidationError("allocate_power: power and noise must be positive");
    for (double g : gains)
        if (g <= 0.0) throw ValidationError("allocate_power: gains must be positive");

    const std::size_t n = gains.size();
    std::vector<std::size_t> order(n); // by inverse gain: strongest first
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return noise_power / gains[a] < noise_power / gains[b];
    });

    // Largest active set whose water level clears every member's floor.
    std::vector<double> powers(n, 0.0);
    double floor_sum = 0.0;
    std::size_t active = 0;
    double level = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double fk = noise_power / gains[order[k]];
        const double candidate = (total_power + floor_sum + fk) / static_cast<double>(k + 1);
        if (candidate <= fk) break; // user k (and all weaker) stay off
        floor_sum += fk;
        active = k + 1;
        level = candidate;
    }
    for (std::size_t k = 0; k < active; ++k)
        powers[order[k]] = level - noise_power / gains[order[k]];
    return powers;
}

// --- coverage map ----------------------------------------------------------------

ChannelMap build_channel_map(const scene::Scene& scene, const scene::Transceiver& tx,
                             double resolution, const rt::RadioConfig& radio,
                             const BeamCodebook& book, std::size_t max_order, double rx_height,
                             double bearing) {
    if (resolution <= 0.0) throw ConfigError("map: resolution must be positive");
    radio.validate();
    ChannelMap map;
    map.resolution = resolution;
    map.nx = static_cast<std::size_t>(std::llround(scene.bounds.width() / resolution));
    map.ny = static_cast<std::size_t>(std::llround(scene.bounds.depth() / resolution));
    if (map.nx == 0 || map.ny == 0) throw ConfigError("map: resolution exceeds scene extent");
    map.cells.assign(map.nx * map.ny, {});

    parallel_for(map.nx * map.ny, [&](std::size_t idx) {
        const std::size_t ix = idx % map.nx, iy = idx / map.nx;
        MapCell& cell = map.cells[idx];
        cell.x = scene.bounds.min_x + (static_cast<double>(ix) + 0.5) * resolution;
        cell.y = scene.bounds.min_y + (static_cast<double>(iy) + 0.5) * resolution;
        const Vec3 rx{cell.x, cell.y, rx_height};

        const auto paths = rt::trace_paths(scene, tx.position, rx,
                                           static_cast<int>(max_order), radio.carrier_freq);
        if (paths.empty()) {
            cell.outage = true;
            return;
        }
        // single-element aggregate amplitude at the band center
        cplx a{0.0, 0.0};
        for (const auto& p : paths)
            a += p.gain * std::exp(cplx(0.0, -2.0 * kPi * radio.carrier_freq * p.delay));
        const auto snap = rt::paths_to_cfr(paths, radio, tx.array, bearing, rx);
        const double elem_avg =
            channel_power(snap.cfr) /
            static_cast<double>(snap.n_tx() * snap.n_subcarriers());
        if (std::abs(a) == 0.0 || elem_avg == 0.0) {
            cell.outage = true;
            return;
        }
        cell.path_loss_db = -20.0 * std::log10(std::abs(a));
        const BeamChoice best = select_beam(snap.cfr, book);
        cell.rsrp_dbm =
            tx.tx_power_dbm - cell.path_loss_db + 10.0 * std::log10(best.gain / elem_avg);
    });
    return map;
}

void write_channel_map_csv(const std::string& path, const ChannelMap& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "x,y,path_loss_db,rsrp_dbm,outage\n";
    for (const auto& c : map.cells) {
        out << experiments::format_double(c.x) << ',' << experiments::format_double(c.y) << ',';
        if (c.outage)
            out << ",,1\n";
        else
            out << experiments::format_double(c.path_loss_db) << ','
                << experiments::format_double(c.rsrp_dbm) << ",0\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

// --- predictors ------------------------------------------------------------------

void Predictor::finetune(const std::vector<std::vector<double>>&, std::size_t) {}

std::vector<double> OraclePredictor::predict(const std::vector<std::vector<double>>&,
                                             std::uint64_t slot) {
    if (slot >= truth_.size()) throw ValidationError("oracle: slot beyond the archive");
    return truth_[slot];
}

GptPredictor::GptPredictor(nn::GptModel model, FeatureStats stats, std::uint64_t finetune_seed)
    : model_(std::move(model)), stats_(std::move(stats)), seed_(finetune_seed) {}

std::vector<double> GptPredictor::predict(const std::vector<std::vector<double>>& history,
                                          std::uint64_t) {
    if (history.empty()) throw ValidationError("gpt predictor: empty history");
    std::vector<std::vector<double>> norm;
    norm.reserve(history.size());
    for (const auto& r : history) norm.push_back(stats_.normalize(r));
    return stats_.denormalize(model_.rollout(norm, 1).front());
}

void GptPredictor::finetune(const std::vector<std::vector<double>>& corpus, std::size_t epochs) {
    if (corpus.size() < 2 || epochs == 0) return; // nothing to learn from
    const std::size_t f = stats_.mean.size();
    const std::size_t len = std::min(corpus.size(), model_.cfg.context);

    // up to 8 most recent windows, stride len/2, oldest first
    std::vector<nn::Tensor> windows;
    const std::size_t stride = std::max<std::size_t>(1, len / 2);
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + len <= corpus.size(); s += stride) starts.push_back(s);
    if (starts.empty() || starts.back() + len < corpus.size())
        starts.push_back(corpus.size() - len);
    const std::size_t first = starts.size() > 8 ? starts.size() - 8 : 0;
    for (std::size_t i = first; i < starts.size(); ++i) {
        std::vector<double> flat;
        flat.reserve(len * f);
        for (std::size_t t = 0; t < len; ++t) {
            const auto n = stats_.normalize(corpus[starts[i] + t]);
            flat.insert(flat.end(), n.begin(), n.end());
        }
        windows.push_back(nn::Tensor::from_values({len, f}, std::move(flat)));
    }

    nn::Adam opt(model_.parameters(), {.lr = 3e-4});
    Rng order_rng(seed_for(seed_, "finetune-" + std::to_string(finetune_round_++)));
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t e = 0; e < epochs; ++e) {
        order_rng.shuffle(order);
        for (std::size_t i : order) {
            opt.zero_grad();
            nn::Tensor loss = nn::gpt_window_loss(model_, windows[i]);
            loss.backward();
            opt.step();
        }
    }
}

// --- feedback loop ---------------------------------------------------------------

LoopResult run_loop(const SnapshotArchive& archive, Predictor& predictor,
                    const BeamCodebook& book, std::size_t history, double tx_power_dbm,
                    const LoopThresholds& thresholds) {
    if (history == 0) throw ConfigError("loop: history must be positive");
    if (archive.slots.size() <= history)
        throw ValidationError("loop: archive shorter than the history prefix");
    if (thresholds.window == 0) throw ConfigError("loop: window must be positive");

    const std::size_t n_tx = archive.n_tx;
    const std::size_t k_count = static_cast<std::size_t>(archive.radio.n_subcarriers);
    std::vector<std::vector<double>> rows;
    rows.reserve(archive.slots.size());
    for (const auto& s : archive.slots) rows.push_back(flatten_cfr(s.cfr));

    const double noise_mw = archive.radio.noise_power_mw();
    const double tx_power_mw = std::pow(10.0, tx_power_dbm / 10.0);

    LoopResult res;
    std::vector<std::vector<double>> corpus; // recollected true rows
    std::size_t consec_above = 0;
    std::vector<double> nmse_trace; // nmse_trace[i] belongs to res.records[i]
    // (retrain index, its record index) awaiting a full after-window
    std::vector<std::pair<std::size_t, std::size_t>> pending_after;
    double nmse_sum = 0.0, ratio_sum = 0.0;

    for (std::size_t t = history; t < rows.size(); ++t) {
        const std::vector<std::vector<double>> ctx(rows.begin() + static_cast<std::ptrdiff_t>(t - history),
                                                   rows.begin() + static_cast<std::ptrdiff_t>(t));
        const std::vector<double> pred = predictor.predict(ctx, t);
        if (pred.size() != rows[t].size()) throw ValidationError("loop: predictor width mismatch");
        const auto& truth = rows[t];

        FeedbackRecord rec;
        rec.slot = archive.slots[t].slot_index;

        double err = 0.0, ref = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const double d = pred[i] - truth[i];
            err += d * d;
            ref += truth[i] * truth[i];
        }
        // a dead slot (no paths) carries no decision signal; score it clean
        rec.nmse = ref > 0.0 ? err / ref : 0.0;

        if (ref > 0.0) {
            const auto true_cfr = unflatten_cfr(truth, n_tx, k_count);
            const BeamChoice oracle = select_beam(true_cfr, book);
            double pred_power = 0.0;
            for (double v : pred) pred_power += v * v;
            // a null prediction has no direction; beam 0 is the fallback
            const std::size_t chosen =
                pred_power > 0.0 ? select_beam(unflatten_cfr(pred, n_tx, k_count), book).index
                                 : 0;
            const double achieved = beam_gain(true_cfr, book.codewords[chosen]);
            rec.gain_ratio = oracle.gain > 0.0 ? achieved / oracle.gain : 1.0;
            rec.powers = allocate_power({achieved > 0.0 ? achieved : 1e-30}, tx_power_mw, noise_mw);
            rec.sinr_db = 10.0 * std::log10(rec.powers[0] * std::max(achieved, 1e-300) / noise_mw);
        } else {
            rec.gain_ratio = 1.0;
            rec.powers = {0.0};
            rec.sinr_db = -300.0; // reporting floor for a dead slot
        }

        rec.action = "none";
        if (rec.nmse > thresholds.recollect_nmse) {
            corpus.push_back(truth);
            ++res.n_recollect;
            rec.action = "recollect";
        }
        consec_above = rec.nmse > thresholds.retrain_nmse ? consec_above + 1 : 0;

        nmse_trace.push_back(rec.nmse);
        const std::size_t rec_idx = nmse_trace.size() - 1;
        if (consec_above >= thresholds.window) {
            rec.action = "retrain";
            ++res.n_retrain;
            RetrainEvent ev;
            ev.slot = rec.slot;
            double before = 0.0;
            for (std::size_t i = nmse_trace.size() - thresholds.window; i < nmse_trace.size(); ++i)
                before += nmse_trace[i];
            ev.nmse_before = before / static_cast<double>(thresholds.window);
            ev.nmse_after = ev.nmse_before; // overwritten once the after-window fills
            res.retrains.push_back(ev);
            pending_after.emplace_back(res.retrains.size() - 1, rec_idx);
            predictor.finetune(corpus, thresholds.finetune_epochs);
            consec_above = 0;
        }

        // resolve after-windows of past retrains
        for (auto it = pending_after.begin(); it != pending_after.end();) {
            const auto [ev_i, ev_rec] = *it;
            if (rec_idx - ev_rec >= thresholds.window) {
                double after = 0.0;
                for (std::size_t i = ev_rec + 1; i <= ev_rec + thresholds.window; ++i)
                    after += nmse_trace[i];
                res.retrains[ev_i].nmse_after = after / static_cast<double>(thresholds.window);
                it = pending_after.erase(it);
            } else {
                ++it;
            }
        }

        nmse_sum += rec.nmse;
        ratio_sum += rec.gain_ratio;
        res.records.push_back(std::move(rec));
    }

    // partial after-windows at loop end
    for (const auto& [ev_i, ev_rec] : pending_after) {
        if (ev_rec + 1 < nmse_trace.size()) {
            double after = 0.0;
            for (std::size_t i = ev_rec + 1; i < nmse_trace.size(); ++i) after += nmse_trace[i];
            res.retrains[ev_i].nmse_after =
                after / static_cast<double>(nmse_trace.size() - ev_rec - 1);
        }
    }

    const double n = static_cast<double>(res.records.size());
    res.mean_nmse = nmse_sum / n;
    res.mean_gain_ratio = ratio_sum / n;
    return res;
}

void write_loop_log(const std::string& path, const LoopResult& result) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& r : result.records) {
        const nlohmann::json j = {{"slot", r.slot},           {"nmse", r.nmse},
                                  {"gain_ratio", r.gain_ratio}, {"sinr_db", r.sinr_db},
                                  {"powers", r.powers},       {"action", r.action}};
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

} // namespace dtc::loop
