// SPDX-License-Identifier: Apache-2.0

#include "dtc/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>

namespace dtc::experiments {

namespace {

double sq_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

std::vector<double> normalize_rows_flat(const std::vector<std::vector<double>>& rows,
                                        const FeatureStats& stats) {
    std::vector<double> flat;
    flat.reserve(rows.size() * rows.front().size());
    for (const auto& r : rows) {
        const auto n = stats.normalize(r);
        flat.insert(flat.end(), n.begin(), n.end());
    }
    return flat;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::vector<double>> snapshot_params(const std::vector<nn::Tensor>& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.values());
    return out;
}

void restore_params(std::vector<nn::Tensor>& params, const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].values() = snap[i];
}

// Solves (A)x = b for symmetric positive definite A, in place.
std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (s <= 0.0) throw NumericError("cholesky: matrix not positive definite");
                a[i * n + i] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) { // forward
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) { // backward with L^T
        double s = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * b[k];
        b[ii] = s / a[ii * n + ii];
    }
    return b;
}

} // namespace

// --- metrics -----------------------------------------------------------------

double nmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw ValidationError("nmse: size mismatch");
    const double ref = sq_norm(truth);
    if (ref == 0.0) throw ValidationError("nmse: zero-norm reference");
    double err = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        err += d * d;
    }
    return err / ref;
}

double cosine_similarity(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw ValidationError("cosine: size mismatch");
    const double np = sq_norm(pred), nt = sq_norm(truth);
    if (np == 0.0 || nt == 0.0) throw ValidationError("cosine: zero-norm input");
    double dot = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) dot += pred[i] * truth[i];
    return dot / std::sqrt(np * nt);
}

void MetricAccumulator::add(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw ValidationError("metrics: size mismatch");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        err_sq += d * d;
        dot += pred[i] * truth[i];
        pred_sq += pred[i] * pred[i];
        ref_sq += truth[i] * truth[i];
    }
}

double MetricAccumulator::nmse() const {
    if (ref_sq == 0.0) throw ValidationError("metrics: zero-norm reference");
    return err_sq / ref_sq;
}

double MetricAccumulator::cosine() const {
    if (ref_sq == 0.0 || pred_sq == 0.0) throw ValidationError("metrics: zero-norm input");
    return dot / std::sqrt(pred_sq * ref_sq);
}

// --- training ------------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("train: lr_decay must be in (0, 1]");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"epochs", epochs},   {"batch_size", batch_size}, {"lr", lr},
            {"lr_decay", lr_decay}, {"seed", seed},           {"patience", patience}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.lr_decay = j.at("lr_decay").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.validate();
    return c;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json curve_rows = nlohmann::json::array();
    for (const auto& s : curves)
        curve_rows.push_back(
            {{"epoch", s.epoch}, {"train_loss", s.train_loss}, {"val_nmse", s.val_nmse}});
    return {{"task", task},
            {"config", config_echo},
            {"dataset_fingerprint", dataset_fingerprint},
            {"scene_ids", scene_ids},
            {"curves", curve_rows},
            {"best_epoch", best_epoch},
            {"best_val_nmse", best_val_nmse},
            {"wall_seconds", wall_seconds}};
}

namespace {

// Teacher-forced pooled NMSE of a GPT over windows, in raw feature space.
double gpt_val_nmse(const nn::GptModel& model, const std::vector<TimeseriesWindow>& windows,
                    const FeatureStats& stats) {
    nn::NoGradGuard guard;
    MetricAccumulator acc;
    const std::size_t f = stats.mean.size();
    for (const auto& w : windows) {
        const std::size_t t = w.rows.size();
        const nn::Tensor x =
            nn::Tensor::from_values({t, f}, normalize_rows_flat(w.rows, stats));
        const auto y = model.forward(x).values();
        for (std::size_t r = 0; r + 1 < t; ++r) {
            const std::vector<double> pred_norm(y.begin() + static_cast<std::ptrdiff_t>(r * f),
                                                y.begin() + static_cast<std::ptrdiff_t>((r + 1) * f));
            acc.add(stats.denormalize(pred_norm), w.rows[r + 1]);
        }
    }
    return acc.nmse();
}

} // namespace

GptTrainResult train_gpt(const TimeseriesDataset& ds, const nn::GptConfig& mcfg,
                         const TrainConfig& tcfg) {
    tcfg.validate();
    mcfg.validate();
    if (mcfg.d_in != ds.feature_width)
        throw ConfigError("train_gpt: model d_in does not match dataset feature width");
    if (ds.history + ds.horizon > mcfg.context)
        throw ConfigError("train_gpt: window length exceeds model context");
    if (ds.train.empty() || ds.val.empty())
        throw ValidationError("train_gpt: empty train or val split");

    const auto t0 = Clock::now();
    Rng init_rng(seed_for(tcfg.seed, "gpt-init"));
    nn::GptModel model = nn::GptModel::init(mcfg, init_rng);
    auto params = model.parameters();

    GptTrainResult out{std::move(model), {}};
    out.report.task = "gpt";
    out.report.config_echo = {{"train", tcfg.to_json()}, {"model", mcfg.to_json()}};
    out.report.scene_ids = {ds.scene_id};

    const std::size_t f = ds.feature_width;
    std::vector<nn::Tensor> windows;
    windows.reserve(ds.train.size());
    for (const auto& w : ds.train)
        windows.push_back(nn::Tensor::from_values({w.rows.size(), f},
                                                  normalize_rows_flat(w.rows, ds.stats)));

    nn::Adam opt(params, {.lr = tcfg.lr});
    Rng order_rng(seed_for(tcfg.seed, "gpt-order"));
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto best = snapshot_params(params);
    double best_val = gpt_val_nmse(out.model, ds.val, ds.stats);
    std::size_t best_epoch = 0, stale = 0;
    double lr = tcfg.lr;

    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t step_members = 0;
        opt.zero_grad();
        for (std::size_t i = 0; i < order.size(); ++i) {
            nn::Tensor loss = nn::gpt_window_loss(out.model, windows[order[i]]);
            loss.backward();
            loss_sum += loss.item();
            if (++step_members == tcfg.batch_size || i + 1 == order.size()) {
                opt.step();
                opt.zero_grad();
                step_members = 0;
            }
        }
        const double val = gpt_val_nmse(out.model, ds.val, ds.stats);
        out.report.curves.push_back({epoch, loss_sum / static_cast<double>(order.size()), val});
        if (val < best_val) {
            best_val = val;
            best_epoch = epoch;
            best = snapshot_params(params);
            stale = 0;
        } else if (++stale >= tcfg.patience) {
            break;
        }
        lr *= tcfg.lr_decay;
        opt.set_lr(lr);
    }

    restore_params(params, best);
    out.report.best_epoch = best_epoch;
    out.report.best_val_nmse = best_val;
    out.report.wall_seconds = seconds_since(t0);
    return out;
}

namespace {

struct FusionBatchCache {
    std::vector<nn::Tensor> pilots;              // [1, pilot_width]
    std::vector<std::vector<nn::Tensor>> views;  // per sample, n_views x [1,R,R]
    std::vector<nn::Tensor> targets;             // [1, F] normalized
};

FusionBatchCache cache_fusion_inputs(const std::vector<FusionSample>& samples,
                                     const FusionDataset& ds, bool with_targets) {
    FusionBatchCache c;
    for (const auto& s : samples) {
        c.pilots.push_back(nn::Tensor::from_values(
            {1, (2 * ds.n_tx + 1) * ds.n_pilots},
            fusion_pilot_input(s, ds.stats, ds.n_tx, ds.n_subcarriers)));
        std::vector<nn::Tensor> vs;
        const std::size_t px = ds.view_res * ds.view_res;
        for (std::size_t v = 0; v < ds.n_views; ++v)
            vs.push_back(nn::Tensor::from_values(
                {1, ds.view_res, ds.view_res},
                std::vector<double>(s.views.begin() + static_cast<std::ptrdiff_t>(v * px),
                                    s.views.begin() + static_cast<std::ptrdiff_t>((v + 1) * px))));
        c.views.push_back(std::move(vs));
        if (with_targets)
            c.targets.push_back(
                nn::Tensor::from_values({1, s.target.size()}, ds.stats.normalize(s.target)));
    }
    return c;
}

} // namespace

EvalResult eval_fusion_split(const nn::FusionModel& model, const std::vector<FusionSample>& samples,
                             const FeatureStats& stats) {
    if (samples.empty()) throw ValidationError("eval_fusion: empty sample list");
    nn::NoGradGuard guard;
    MetricAccumulator acc;
    const std::size_t px = model.cfg.view_res * model.cfg.view_res;
    for (const auto& s : samples) {
        const nn::Tensor pilot = nn::Tensor::from_values(
            {1, model.cfg.pilot_width()},
            fusion_pilot_input(s, stats, model.cfg.n_tx, model.cfg.n_subcarriers));
        std::vector<nn::Tensor> vs;
        for (std::size_t v = 0; v < model.cfg.n_views; ++v)
            vs.push_back(nn::Tensor::from_values(
                {1, model.cfg.view_res, model.cfg.view_res},
                std::vector<double>(s.views.begin() + static_cast<std::ptrdiff_t>(v * px),
                                    s.views.begin() + static_cast<std::ptrdiff_t>((v + 1) * px))));
        acc.add(stats.denormalize(model.forward(pilot, vs).values()), s.target);
    }
    return {acc.nmse(), acc.cosine()};
}

FusionTrainResult train_fusion(const FusionDataset& ds, const nn::FusionConfig& mcfg,
                               const TrainConfig& tcfg) {
    tcfg.validate();
    mcfg.validate();
    if (mcfg.n_tx != ds.n_tx || mcfg.n_subcarriers != ds.n_subcarriers ||
        mcfg.n_pilots != ds.n_pilots || mcfg.n_views != ds.n_views ||
        mcfg.view_res != ds.view_res)
        throw ConfigError("train_fusion: model dims do not match dataset");
    if (ds.train.empty() || ds.val.empty())
        throw ValidationError("train_fusion: empty train or val split");

    const auto t0 = Clock::now();
    Rng init_rng(seed_for(tcfg.seed, "fusion-init"));
    nn::FusionModel model = nn::FusionModel::init(mcfg, init_rng);
    auto params = model.parameters();

    FusionTrainResult out{std::move(model), {}};
    out.report.task = mcfg.use_env ? "fusion" : "rs_wowei";
    out.report.config_echo = {{"train", tcfg.to_json()}, {"model", mcfg.to_json()}};
    out.report.scene_ids = {ds.scene_id};

    const FusionBatchCache cache = cache_fusion_inputs(ds.train, ds, true);

    nn::Adam opt(params, {.lr = tcfg.lr});
    Rng order_rng(seed_for(tcfg.seed, "fusion-order"));
    std::vector<std::size_t> order(ds.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto best = snapshot_params(params);
    double best_val = eval_fusion_split(out.model, ds.val, ds.stats).nmse;
    std::size_t best_epoch = 0, stale = 0;
    double lr = tcfg.lr;

    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t step_members = 0;
        opt.zero_grad();
        for (std::size_t i = 0; i < order.size(); ++i) {
            const std::size_t s = order[i];
            nn::Tensor loss =
                nn::mse_loss(out.model.forward(cache.pilots[s], cache.views[s]), cache.targets[s]);
            loss.backward();
            loss_sum += loss.item();
            if (++step_members == tcfg.batch_size || i + 1 == order.size()) {
                opt.step();
                opt.zero_grad();
                step_members = 0;
            }
        }
        const double val = eval_fusion_split(out.model, ds.val, ds.stats).nmse;
        out.report.curves.push_back({epoch, loss_sum / static_cast<double>(order.size()), val});
        if (val < best_val) {
            best_val = val;
            best_epoch = epoch;
            best = snapshot_params(params);
            stale = 0;
        } else if (++stale >= tcfg.patience) {
            break;
        }
        lr *= tcfg.lr_decay;
        opt.set_lr(lr);
    }

    restore_params(params, best);
    out.report.best_epoch = best_epoch;
    out.report.best_val_nmse = best_val;
    out.report.wall_seconds = seconds_since(t0);
    return out;
}

// --- forecasting baselines ------------------------------------------------------

LinearArModel LinearArModel::fit(const TimeseriesDataset& ds, std::size_t lags, double ridge) {
    if (lags == 0) throw ConfigError("linear_ar: lags must be positive");
    if (ds.train.empty()) throw ValidationError("linear_ar: empty train split");
    if (ds.train.front().rows.size() <= lags)
        throw ConfigError("linear_ar: windows shorter than lag order");

    LinearArModel m;
    m.lags = lags;
    m.ridge = ridge;
    const std::size_t f = ds.feature_width, n = lags + 1;
    m.coef.assign(f, std::vector<double>(n, 0.0));

    // normalized rows, shared by all features
    std::vector<std::vector<std::vector<double>>> norm(ds.train.size());
    for (std::size_t w = 0; w < ds.train.size(); ++w) {
        norm[w].reserve(ds.train[w].rows.size());
        for (const auto& r : ds.train[w].rows) norm[w].push_back(ds.stats.normalize(r));
    }

    parallel_for(f, [&](std::size_t fi) {
        std::vector<double> a(n * n, 0.0), b(n, 0.0), x(n, 1.0); // x[n-1] stays 1 (bias)
        for (const auto& w : norm)
            for (std::size_t t = lags; t < w.size(); ++t) {
                for (std::size_t l = 0; l < lags; ++l) x[l] = w[t - lags + l][fi];
                const double y = w[t][fi];
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j <= i; ++j) a[i * n + j] += x[i] * x[j];
                    b[i] += x[i] * y;
                }
            }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = a[j * n + i];
            a[i * n + i] += ridge;
        }
        m.coef[fi] = cholesky_solve(std::move(a), std::move(b), n);
    });
    return m;
}

std::vector<std::vector<double>> LinearArModel::rollout(
    const std::vector<std::vector<double>>& history, std::size_t n_steps) const {
    if (history.size() < lags) throw ValidationError("linear_ar: history shorter than lag order");
    const std::size_t f = coef.size();
    std::deque<std::vector<double>> ctx(history.end() - static_cast<std::ptrdiff_t>(lags),
                                        history.end());
    std::vector<std::vector<double>> out;
    for (std::size_t s = 0; s < n_steps; ++s) {
        std::vector<double> next(f);
        for (std::size_t fi = 0; fi < f; ++fi) {
            double y = coef[fi][lags]; // bias
            for (std::size_t l = 0; l < lags; ++l) y += coef[fi][l] * ctx[l][fi];
            next[fi] = y;
        }
        ctx.pop_front();
        ctx.push_back(next);
        out.push_back(std::move(next));
    }
    return out;
}

MlpForecaster train_mlp_forecaster(const TimeseriesDataset& ds, std::size_t lags,
                                   std::size_t d_hidden, const TrainConfig& tcfg) {
    tcfg.validate();
    if (ds.train.empty()) throw ValidationError("mlp: empty train split");
    const std::size_t f = ds.feature_width, t_len = ds.train.front().rows.size();
    if (t_len <= lags) throw ConfigError("mlp: windows shorter than lag order");

    nn::MlpConfig mcfg;
    mcfg.d_in = lags * f;
    mcfg.d_hidden = d_hidden;
    mcfg.d_out = f;
    Rng init_rng(seed_for(tcfg.seed, "mlp-init"));
    MlpForecaster fc{lags, nn::MlpModel::init(mcfg, init_rng)};
    auto params = fc.model.parameters();

    // per window: stacked lag matrix X [t_len - lags, lags*f] and next rows Y
    std::vector<nn::Tensor> xs, ys;
    for (const auto& w : ds.train) {
        std::vector<double> xflat, yflat;
        for (std::size_t t = lags; t < w.rows.size(); ++t) {
            for (std::size_t l = 0; l < lags; ++l) {
                const auto n = ds.stats.normalize(w.rows[t - lags + l]);
                xflat.insert(xflat.end(), n.begin(), n.end());
            }
            const auto n = ds.stats.normalize(w.rows[t]);
            yflat.insert(yflat.end(), n.begin(), n.end());
        }
        xs.push_back(nn::Tensor::from_values({t_len - lags, lags * f}, std::move(xflat)));
        ys.push_back(nn::Tensor::from_values({t_len - lags, f}, std::move(yflat)));
    }

    nn::Adam opt(params, {.lr = tcfg.lr});
    Rng order_rng(seed_for(tcfg.seed, "mlp-order"));
    std::vector<std::size_t> order(xs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double lr = tcfg.lr;
    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t i : order) {
            opt.zero_grad();
            nn::Tensor loss = nn::mse_loss(fc.model.forward(xs[i]), ys[i]);
            loss.backward();
            opt.step();
        }
        lr *= tcfg.lr_decay;
        opt.set_lr(lr);
    }
    return fc;
}

std::vector<std::vector<double>> MlpForecaster::rollout(
    const std::vector<std::vector<double>>& history, std::size_t n_steps) const {
    if (history.size() < lags) throw ValidationError("mlp: history shorter than lag order");
    nn::NoGradGuard guard;
    const std::size_t f = history.front().size();
    std::deque<std::vector<double>> ctx(history.end() - static_cast<std::ptrdiff_t>(lags),
                                        history.end());
    std::vector<std::vector<double>> out;
    for (std::size_t s = 0; s < n_steps; ++s) {
        std::vector<double> xflat;
        for (const auto& r : ctx) xflat.insert(xflat.end(), r.begin(), r.end());
        std::vector<double> next = model.forward(
            nn::Tensor::from_values({1, lags * f}, std::move(xflat))).values();
        ctx.pop_front();
        ctx.push_back(next);
        out.push_back(std::move(next));
    }
    return out;
}

// --- horizon sweep ---------------------------------------------------------------

HorizonCurves horizon_sweep(const TimeseriesDataset& ds, const nn::GptModel& gpt,
                            const LinearArModel& ar, const MlpForecaster& mlp,
                            std::size_t max_horizon) {
    if (max_horizon == 0 || max_horizon > ds.horizon)
        throw ConfigError("sweep: max_horizon must be in [1, dataset horizon]");
    if (ds.test.empty()) throw ValidationError("sweep: empty test split");

    const std::vector<std::string> names = {"gpt", "identity_hold", "linear_ar", "mlp"};
    std::vector<std::vector<MetricAccumulator>> acc(
        names.size(), std::vector<MetricAccumulator>(max_horizon));

    nn::NoGradGuard guard;
    for (const auto& w : ds.test) {
        std::vector<std::vector<double>> hist_norm;
        hist_norm.reserve(ds.history);
        for (std::size_t t = 0; t < ds.history; ++t)
            hist_norm.push_back(ds.stats.normalize(w.rows[t]));

        const auto gpt_pred = gpt.rollout(hist_norm, max_horizon);
        const auto ar_pred = ar.rollout(hist_norm, max_horizon);
        const auto mlp_pred = mlp.rollout(hist_norm, max_horizon);
        const auto& hold = w.rows[ds.history - 1];

        for (std::size_t n = 0; n < max_horizon; ++n) {
            const auto& truth = w.rows[ds.history + n];
            acc[0][n].add(ds.stats.denormalize(gpt_pred[n]), truth);
            acc[1][n].add(hold, truth);
            acc[2][n].add(ds.stats.denormalize(ar_pred[n]), truth);
            acc[3][n].add(ds.stats.denormalize(mlp_pred[n]), truth);
        }
    }

    HorizonCurves out;
    out.max_horizon = max_horizon;
    for (std::size_t m = 0; m < names.size(); ++m) {
        std::vector<double> curve(max_horizon);
        for (std::size_t n = 0; n < max_horizon; ++n) curve[n] = acc[m][n].nmse();
        out.models.emplace_back(names[m], std::move(curve));
    }
    return out;
}

// --- generalization study ---------------------------------------------------------

std::vector<Table2Row> generalization_study(const nn::FusionModel& fusion,
                                            const nn::FusionModel& rs_wowei,
                                            const FusionDataset& origin,
                                            const FusionDataset& new_scene) {
    if (origin.scene_id == new_scene.scene_id)
        throw ValidationError("generalization: origin and new corpora share a scene");
    // both models consume origin-normalized inputs; the new corpus only
    // supplies samples
    std::vector<Table2Row> rows;
    const auto f_o = eval_fusion_split(fusion, origin.test, origin.stats);
    const auto f_n = eval_fusion_split(fusion, new_scene.test, origin.stats);
    const auto r_o = eval_fusion_split(rs_wowei, origin.test, origin.stats);
    const auto r_n = eval_fusion_split(rs_wowei, new_scene.test, origin.stats);
    rows.push_back({"fusion", "origin", f_o.nmse, f_o.cosine});
    rows.push_back({"fusion", "new", f_n.nmse, f_n.cosine});
    rows.push_back({"rs_wowei", "origin", r_o.nmse, r_o.cosine});
    rows.push_back({"rs_wowei", "new", r_n.nmse, r_n.cosine});
    return rows;
}

// --- artifact emission -------------------------------------------------------------

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary); // binary: fixed \n line endings
    if (!out) throw IoError("cannot open for writing: " + path);
    return out;
}

} // namespace

void write_curve_csv(const std::string& path, const HorizonCurves& curves) {
    auto out = open_out(path);
    out << "model,horizon,nmse\n";
    for (const auto& [name, nmse_row] : curves.models)
        for (std::size_t n = 0; n < nmse_row.size(); ++n)
            out << name << ',' << (n + 1) << ',' << format_double(nmse_row[n]) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

void write_table2_csv(const std::string& path, const std::vector<Table2Row>& rows) {
    auto out = open_out(path);
    out << "method,scene,nmse,cosine\n";
    for (const auto& r : rows)
        out << r.method << ',' << r.scene << ',' << format_double(r.nmse) << ','
            << format_double(r.cosine) << '\n';
    if (!out) throw IoError("write failed: " + path);
}

std::string format_table2_text(const std::vector<Table2Row>& rows) {
    char buf[128];
    std::string s = "method     scene    nmse        cosine\n";
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-10s %-8s %-11.6f %-.6f\n", r.method.c_str(),
                      r.scene.c_str(), r.nmse, r.cosine);
        s += buf;
    }
    return s;
}

void write_line_plot_svg(const std::string& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<PlotSeries>& series) {
    if (series.empty()) throw ValidationError("plot: no series");
    const double width = 720, height = 440, ml = 70, mr = 160, mt = 40, mb = 50;
    double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
    for (const auto& s : series) {
        if (s.xs.size() != s.ys.size() || s.xs.empty())
            throw ValidationError("plot: series '" + s.name + "' malformed");
        for (double x : s.xs) x_min = std::min(x_min, x), x_max = std::max(x_max, x);
        for (double y : s.ys) y_min = std::min(y_min, y), y_max = std::max(y_max, y);
    }
    if (x_max == x_min) x_max = x_min + 1;
    if (y_max == y_min) y_max = y_min + 1;

    const auto px = [&](double x) {
        return ml + (x - x_min) / (x_max - x_min) * (width - ml - mr);
    };
    const auto py = [&](double y) {
        return height - mb - (y - y_min) / (y_max - y_min) * (height - mt - mb);
    };
    const auto coord = [](double v) {
        char b[32];
        std::snprintf(b, sizeof(b), "%.2f", v);
        return std::string(b);
    };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b"};
    auto out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << (width - mr + ml) / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";

    // axes and ticks
    out << "<line x1=\"" << coord(ml) << "\" y1=\"" << coord(height - mb) << "\" x2=\""
        << coord(width - mr) << "\" y2=\"" << coord(height - mb)
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << coord(ml) << "\" y1=\"" << coord(mt) << "\" x2=\"" << coord(ml)
        << "\" y2=\"" << coord(height - mb) << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fx = x_min + (x_max - x_min) * i / 5.0;
        const double fy = y_min + (y_max - y_min) * i / 5.0;
        out << "<text x=\"" << coord(px(fx)) << "\" y=\"" << coord(height - mb + 18)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << format_double(std::round(fx * 1000.0) / 1000.0) << "</text>\n";
        out << "<text x=\"" << coord(ml - 8) << "\" y=\"" << coord(py(fy) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << format_double(std::round(fy * 10000.0) / 10000.0) << "</text>\n";
        out << "<line x1=\"" << coord(ml) << "\" y1=\"" << coord(py(fy)) << "\" x2=\""
            << coord(width - mr) << "\" y2=\"" << coord(py(fy))
            << "\" stroke=\"#dddddd\"/>\n";
    }
    out << "<text x=\"" << (width - mr + ml) / 2 << "\" y=\"" << height - 12
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
        << "</text>\n";
    out << "<text x=\"16\" y=\"" << (height - mb + mt) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << (height - mb + mt) / 2 << ")\">" << y_label
        << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const char* color = colors[si % 6];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[si].xs.size(); ++i) {
            if (i) out << ' ';
            out << coord(px(series[si].xs[i])) << ',' << coord(py(series[si].ys[i]));
        }
        out << "\"/>\n";
        const double ly = mt + 16.0 * static_cast<double>(si);
        out << "<line x1=\"" << coord(width - mr + 10) << "\" y1=\"" << coord(ly) << "\" x2=\""
            << coord(width - mr + 30) << "\" y2=\"" << coord(ly) << "\" stroke=\"" << color
            << "\" stroke-width=\"1.5\"/>\n";
        out << "<text x=\"" << coord(width - mr + 36) << "\" y=\"" << coord(ly + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[si].name
            << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw IoError("write failed: " + path);
}

} // namespace dtc::experiments
