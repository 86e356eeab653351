// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dtc/experiments.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace dtc;
using namespace dtc::experiments;

namespace {

// Multi-tone synthetic corpus: feature f of slot t is a sum of two
// sinusoids plus a slow drift, wrapped into the dataset layout by hand.
TimeseriesDataset synthetic_ts(std::size_t n_slots, std::size_t history, std::size_t horizon,
                               std::size_t f_width, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> freq1(f_width), freq2(f_width), ph(f_width), amp(f_width);
    for (std::size_t f = 0; f < f_width; ++f) {
        freq1[f] = rng.uniform(0.05, 0.4);
        freq2[f] = rng.uniform(0.5, 1.2);
        ph[f] = rng.uniform(0.0, 2.0 * kPi);
        amp[f] = rng.uniform(0.5, 2.0);
    }
    std::vector<std::vector<double>> rows(n_slots, std::vector<double>(f_width));
    for (std::size_t t = 0; t < n_slots; ++t)
        for (std::size_t f = 0; f < f_width; ++f)
            rows[t][f] = amp[f] * (std::cos(freq1[f] * static_cast<double>(t) + ph[f]) +
                                   0.4 * std::sin(freq2[f] * static_cast<double>(t)));

    TimeseriesDataset ds;
    ds.history = history;
    ds.horizon = horizon;
    ds.feature_width = f_width;
    ds.scene_id = seed;
    const std::size_t len = history + horizon;
    const std::size_t t_end = n_slots * 6 / 10, v_end = n_slots * 8 / 10;
    std::vector<std::vector<double>> train_rows;
    for (std::size_t s = 0; s + len <= n_slots; ++s) {
        TimeseriesWindow w;
        w.start_slot = s;
        w.rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(s),
                      rows.begin() + static_cast<std::ptrdiff_t>(s + len));
        if (s + len <= t_end) {
            ds.train.push_back(w);
            for (const auto& r : w.rows) train_rows.push_back(r);
        } else if (s >= t_end && s + len <= v_end) {
            ds.val.push_back(w);
        } else if (s >= v_end) {
            ds.test.push_back(w);
        }
    }
    ds.stats = compute_stats(train_rows);
    return ds;
}

FusionDataset synthetic_fusion(std::uint64_t seed) {
    FusionDataset ds;
    ds.n_tx = 2;
    ds.n_subcarriers = 4;
    ds.n_pilots = 2;
    ds.n_views = 2;
    ds.view_res = 8;
    ds.scene_id = seed;
    ds.seed = seed;
    Rng rng(seed);
    const std::size_t f = 2 * ds.n_tx * ds.n_subcarriers;
    auto make = [&](std::size_t idx) {
        FusionSample s;
        s.sample_index = idx;
        s.rx_position = {rng.uniform(-50, 50), rng.uniform(-50, 50), 1.5};
        s.pilot_indices = {static_cast<std::uint32_t>(rng.uniform_int(2)),
                           static_cast<std::uint32_t>(2 + rng.uniform_int(2))};
        s.target.resize(f);
        for (double& v : s.target) v = rng.normal();
        s.views.resize(ds.n_views * ds.view_res * ds.view_res);
        for (double& v : s.views) v = rng.uniform();
        return s;
    };
    std::size_t idx = 0;
    std::vector<std::vector<double>> train_rows;
    for (int i = 0; i < 12; ++i) {
        ds.train.push_back(make(idx++));
        train_rows.push_back(ds.train.back().target);
    }
    for (int i = 0; i < 4; ++i) ds.val.push_back(make(idx++));
    for (int i = 0; i < 4; ++i) ds.test.push_back(make(idx++));
    ds.stats = compute_stats(train_rows);
    return ds;
}

} // namespace

TEST_CASE("nmse identities") {
    const std::vector<double> t = {1.0, -2.0, 3.0, 0.5};
    CHECK(nmse(t, t) == 0.0);
    CHECK(nmse(std::vector<double>(4, 0.0), t) == 1.0);
    std::vector<double> twice = t;
    for (double& v : twice) v *= 2.0;
    CHECK(nmse(twice, t) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(nmse(t, std::vector<double>(4, 0.0)), ValidationError);
    CHECK_THROWS_AS(nmse({1.0}, t), ValidationError);
}

TEST_CASE("nmse is quadratic in the error scale") {
    Rng rng(3);
    std::vector<double> p(16), t(16);
    for (auto& v : p) v = rng.normal();
    for (auto& v : t) v = rng.normal();
    const double base = nmse(p, t);
    for (double a : {0.25, 0.5, 2.0}) {
        std::vector<double> mix(16);
        for (std::size_t i = 0; i < 16; ++i) mix[i] = a * p[i] + (1.0 - a) * t[i];
        CHECK(nmse(mix, t) == doctest::Approx(a * a * base).epsilon(1e-12));
    }
}

TEST_CASE("cosine similarity identities") {
    const std::vector<double> t = {1.0, -2.0, 3.0, 0.5};
    CHECK(cosine_similarity(t, t) == doctest::Approx(1.0).epsilon(1e-15));
    std::vector<double> neg = t;
    for (double& v : neg) v = -v;
    CHECK(cosine_similarity(neg, t) == doctest::Approx(-1.0).epsilon(1e-15));
    std::vector<double> scaled = t;
    for (double& v : scaled) v *= 7.5;
    CHECK(cosine_similarity(scaled, t) == doctest::Approx(1.0).epsilon(1e-12));
    // interleaved re/im of i*z is (-im, re): orthogonal under the real dot
    const std::vector<double> z = {1.0, 2.0, -0.5, 0.25};
    const std::vector<double> iz = {-2.0, 1.0, -0.25, -0.5};
    CHECK(cosine_similarity(iz, z) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK_THROWS_AS(cosine_similarity(std::vector<double>(4, 0.0), t), ValidationError);
}

TEST_CASE("pooled accumulator equals metrics over concatenation") {
    Rng rng(5);
    std::vector<double> p1(6), t1(6), p2(10), t2(10);
    for (auto* v : {&p1, &t1, &p2, &t2})
        for (double& x : *v) x = rng.normal();
    MetricAccumulator acc;
    acc.add(p1, t1);
    acc.add(p2, t2);
    std::vector<double> pc = p1, tc = t1;
    pc.insert(pc.end(), p2.begin(), p2.end());
    tc.insert(tc.end(), t2.begin(), t2.end());
    CHECK(acc.nmse() == doctest::Approx(nmse(pc, tc)).epsilon(1e-14));
    CHECK(acc.cosine() == doctest::Approx(cosine_similarity(pc, tc)).epsilon(1e-14));
}

TEST_CASE("linear AR solves the normal equations of a known process") {
    // rows follow x_t = 0.9 x_{t-1} - 0.5 x_{t-2} + 0.3 exactly; the ridge
    // fit must recover the coefficients and continue the sequence.
    TimeseriesDataset ds;
    ds.history = 6;
    ds.horizon = 2;
    ds.feature_width = 1;
    std::vector<double> x = {1.0, 0.8};
    for (std::size_t t = 2; t < 60; ++t)
        x.push_back(0.9 * x[t - 1] - 0.5 * x[t - 2] + 0.3);
    std::vector<std::vector<double>> train_rows;
    for (std::size_t s = 0; s + 8 <= 48; ++s) {
        TimeseriesWindow w;
        w.start_slot = s;
        for (std::size_t t = s; t < s + 8; ++t) w.rows.push_back({x[t]});
        ds.train.push_back(w);
        for (const auto& r : ds.train.back().rows) train_rows.push_back(r);
    }
    ds.stats = compute_stats(train_rows);

    const auto ar = LinearArModel::fit(ds, 2, 1e-10);
    // continue from the last 2 true values (normalized space)
    std::vector<std::vector<double>> hist = {ds.stats.normalize({x[50]}),
                                             ds.stats.normalize({x[51]})};
    const auto pred = ar.rollout(hist, 5);
    for (std::size_t n = 0; n < 5; ++n) {
        const double want = x[52 + n];
        CHECK(ds.stats.denormalize(pred[n])[0] == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("linear AR matches an independent dense least-squares solve") {
    const auto ds = synthetic_ts(60, 4, 2, 3, 11);
    const std::size_t lags = 3, n = lags + 1;
    const double ridge = 1e-4;
    const auto ar = LinearArModel::fit(ds, lags, ridge);

    // oracle: explicit normal equations + Gauss-Jordan, per feature
    for (std::size_t fi = 0; fi < 3; ++fi) {
        std::vector<double> a(n * n, 0.0), b(n, 0.0);
        for (const auto& w : ds.train) {
            std::vector<std::vector<double>> norm;
            for (const auto& r : w.rows) norm.push_back(ds.stats.normalize(r));
            for (std::size_t t = lags; t < norm.size(); ++t) {
                std::vector<double> xv(n, 1.0);
                for (std::size_t l = 0; l < lags; ++l) xv[l] = norm[t - lags + l][fi];
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < n; ++j) a[i * n + j] += xv[i] * xv[j];
                    b[i] += xv[i] * norm[t][fi];
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) a[i * n + i] += ridge;
        // Gauss-Jordan with partial pivoting
        std::vector<double> aug(a);
        std::vector<double> sol(b);
        for (std::size_t col = 0; col < n; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < n; ++r)
                if (std::abs(aug[r * n + col]) > std::abs(aug[piv * n + col])) piv = r;
            for (std::size_t c = 0; c < n; ++c) std::swap(aug[col * n + c], aug[piv * n + c]);
            std::swap(sol[col], sol[piv]);
            const double d = aug[col * n + col];
            for (std::size_t c = 0; c < n; ++c) aug[col * n + c] /= d;
            sol[col] /= d;
            for (std::size_t r = 0; r < n; ++r) {
                if (r == col) continue;
                const double m = aug[r * n + col];
                for (std::size_t c = 0; c < n; ++c) aug[r * n + c] -= m * aug[col * n + c];
                sol[r] -= m * sol[col];
            }
        }
        for (std::size_t i = 0; i < n; ++i)
            CHECK(ar.coef[fi][i] == doctest::Approx(sol[i]).epsilon(1e-9));
    }
}

TEST_CASE("gpt training is deterministic per seed and skips work at 0 epochs") {
    const auto ds = synthetic_ts(80, 6, 3, 4, 13);
    nn::GptConfig mcfg;
    mcfg.d_in = 4;
    mcfg.d_model = 8;
    mcfg.n_layers = 1;
    mcfg.n_heads = 2;
    mcfg.d_ff = 16;
    mcfg.context = 12;
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.seed = 21;

    auto r1 = train_gpt(ds, mcfg, tcfg);
    auto r2 = train_gpt(ds, mcfg, tcfg);
    auto p1 = r1.model.named_parameters(), p2 = r2.model.named_parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].second.values() == p2[i].second.values());
    CHECK(r1.report.curves.size() == 2);
    CHECK(r1.report.config_echo.at("train").at("seed") == 21);

    TrainConfig zero = tcfg;
    zero.epochs = 0;
    auto r0 = train_gpt(ds, mcfg, zero);
    CHECK(r0.report.curves.empty());
    Rng init_rng(seed_for(zero.seed, "gpt-init"));
    auto fresh = nn::GptModel::init(mcfg, init_rng);
    CHECK(r0.model.w_in.values() == fresh.w_in.values());

    nn::GptConfig bad = mcfg;
    bad.d_in = 5;
    CHECK_THROWS_AS(train_gpt(ds, bad, tcfg), ConfigError);
}

TEST_CASE("gpt memorizes a tiny corpus") {
    // single slow tone per feature: trivially predictable once fitted
    TimeseriesDataset ds;
    ds.history = 6;
    ds.horizon = 3;
    ds.feature_width = 2;
    std::vector<std::vector<double>> rows, train_rows;
    for (std::size_t t = 0; t < 70; ++t)
        rows.push_back({std::cos(0.18 * static_cast<double>(t)),
                        std::sin(0.11 * static_cast<double>(t) + 0.4)});
    for (std::size_t s = 0; s + 9 <= 48; ++s) {
        TimeseriesWindow w;
        w.start_slot = s;
        w.rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(s),
                      rows.begin() + static_cast<std::ptrdiff_t>(s + 9));
        ds.train.push_back(w);
        for (const auto& r : w.rows) train_rows.push_back(r);
    }
    ds.stats = compute_stats(train_rows);
    ds.val = ds.train; // memorization check: validate on the training windows
    ds.test = {ds.train.front()};

    nn::GptConfig mcfg;
    mcfg.d_in = 2;
    mcfg.d_model = 16;
    mcfg.n_layers = 1;
    mcfg.n_heads = 2;
    mcfg.d_ff = 32;
    mcfg.context = 12;
    TrainConfig tcfg;
    tcfg.epochs = 80;
    tcfg.lr = 3e-3;
    tcfg.lr_decay = 0.98;
    tcfg.patience = 80;
    const auto r = train_gpt(ds, mcfg, tcfg);
    CHECK(r.report.best_val_nmse < 0.01);
}

TEST_CASE("fusion training is deterministic and honors use_env") {
    const auto ds = synthetic_fusion(23);
    nn::FusionConfig mcfg;
    mcfg.n_tx = 2;
    mcfg.n_subcarriers = 4;
    mcfg.n_pilots = 2;
    mcfg.n_views = 2;
    mcfg.view_res = 8;
    mcfg.d_model = 8;
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.seed = 29;

    const auto r1 = train_fusion(ds, mcfg, tcfg);
    const auto r2 = train_fusion(ds, mcfg, tcfg);
    CHECK(r1.model.pw1.values() == r2.model.pw1.values());
    CHECK(r1.model.hw2.values() == r2.model.hw2.values());
    CHECK(r1.report.task == "fusion");

    nn::FusionConfig blind = mcfg;
    blind.use_env = false;
    const auto rb = train_fusion(ds, blind, tcfg);
    CHECK(rb.report.task == "rs_wowei");

    nn::FusionConfig bad = mcfg;
    bad.n_pilots = 3;
    CHECK_THROWS_AS(train_fusion(ds, bad, tcfg), ConfigError);
}

TEST_CASE("horizon sweep emits every model at every horizon") {
    const auto ds = synthetic_ts(80, 6, 4, 2, 31);
    nn::GptConfig mcfg;
    mcfg.d_in = 2;
    mcfg.d_model = 8;
    mcfg.n_layers = 1;
    mcfg.n_heads = 2;
    mcfg.d_ff = 16;
    mcfg.context = 12;
    TrainConfig tcfg;
    tcfg.epochs = 1;
    const auto gpt = train_gpt(ds, mcfg, tcfg);
    const auto ar = LinearArModel::fit(ds, 3, 1e-6);
    const auto mlp = train_mlp_forecaster(ds, 2, 8, tcfg);

    const auto curves = horizon_sweep(ds, gpt.model, ar, mlp, 4);
    REQUIRE(curves.models.size() == 4);
    CHECK(curves.models[0].first == "gpt");
    CHECK(curves.models[1].first == "identity_hold");
    CHECK(curves.models[2].first == "linear_ar");
    CHECK(curves.models[3].first == "mlp");
    for (const auto& [name, nm] : curves.models) {
        REQUIRE(nm.size() == 4);
        for (double v : nm) CHECK(v >= 0.0);
    }
    CHECK_THROWS_AS(horizon_sweep(ds, gpt.model, ar, mlp, 5), ConfigError);
}

TEST_CASE("identity hold is exact on a static channel") {
    // constant rows: holding the last value is a perfect forecast
    TimeseriesDataset ds;
    ds.history = 3;
    ds.horizon = 2;
    ds.feature_width = 2;
    TimeseriesWindow w;
    w.start_slot = 0;
    for (int t = 0; t < 5; ++t) w.rows.push_back({1.5, -0.5});
    ds.train = {w, w};
    ds.val = {w};
    ds.test = {w};
    std::vector<std::vector<double>> rows;
    for (const auto& win : ds.train)
        for (const auto& r : win.rows) rows.push_back(r);
    ds.stats = compute_stats(rows);

    nn::GptConfig mcfg;
    mcfg.d_in = 2;
    mcfg.d_model = 8;
    mcfg.n_layers = 1;
    mcfg.n_heads = 2;
    mcfg.d_ff = 16;
    mcfg.context = 8;
    TrainConfig tcfg;
    tcfg.epochs = 0;
    const auto gpt = train_gpt(ds, mcfg, tcfg);
    const auto ar = LinearArModel::fit(ds, 2, 1e-6);
    const auto mlp = train_mlp_forecaster(ds, 2, 8, tcfg);
    const auto curves = horizon_sweep(ds, gpt.model, ar, mlp, 2);
    for (double v : curves.models[1].second) CHECK(v == 0.0); // identity_hold
}

TEST_CASE("generalization study emits the four rows and rejects shared scenes") {
    const auto origin = synthetic_fusion(41);
    auto fresh = synthetic_fusion(43);
    nn::FusionConfig mcfg;
    mcfg.n_tx = 2;
    mcfg.n_subcarriers = 4;
    mcfg.n_pilots = 2;
    mcfg.n_views = 2;
    mcfg.view_res = 8;
    mcfg.d_model = 8;
    TrainConfig tcfg;
    tcfg.epochs = 1;
    const auto fusion = train_fusion(origin, mcfg, tcfg);
    nn::FusionConfig blind = mcfg;
    blind.use_env = false;
    const auto wowei = train_fusion(origin, blind, tcfg);

    const auto rows = generalization_study(fusion.model, wowei.model, origin, fresh);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].method == "fusion");
    CHECK(rows[0].scene == "origin");
    CHECK(rows[1].scene == "new");
    CHECK(rows[2].method == "rs_wowei");
    CHECK(rows[3].method == "rs_wowei");
    for (const auto& r : rows) {
        CHECK(r.nmse >= 0.0);
        CHECK(r.cosine >= -1.0);
        CHECK(r.cosine <= 1.0);
    }
    CHECK_THROWS_AS(generalization_study(fusion.model, wowei.model, origin, origin),
                    ValidationError);
}

TEST_CASE("csv emitters write the documented schemas") {
    const auto dir = std::filesystem::temp_directory_path();
    const std::string curve_path = (dir / "dtc_curve.csv").string();
    HorizonCurves curves;
    curves.max_horizon = 2;
    curves.models = {{"gpt", {0.125, 0.25}}, {"identity_hold", {0.5, 1.0}}};
    write_curve_csv(curve_path, curves);
    std::ifstream in(curve_path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "model,horizon,nmse");
    std::getline(in, line);
    CHECK(line == "gpt,1,0.125");
    std::getline(in, line);
    CHECK(line == "gpt,2,0.25");
    std::getline(in, line);
    CHECK(line == "identity_hold,1,0.5");

    const std::string t2_path = (dir / "dtc_table2.csv").string();
    write_table2_csv(t2_path, {{"fusion", "origin", 0.0128, 0.99}});
    std::ifstream t2(t2_path);
    std::getline(t2, line);
    CHECK(line == "method,scene,nmse,cosine");
    std::getline(t2, line);
    CHECK(line == "fusion,origin,0.0128,0.99");

    std::filesystem::remove(curve_path);
    std::filesystem::remove(t2_path);
}

TEST_CASE("format_double round-trips exactly") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0, 69.0}) {
        const std::string s = format_double(v);
        CHECK(std::stod(s) == v);
    }
}

TEST_CASE("svg plot writer emits all series") {
    const auto path = (std::filesystem::temp_directory_path() / "dtc_plot.svg").string();
    write_line_plot_svg(path, "title", "x", "y",
                        {{"alpha", {1, 2, 3}, {0.1, 0.2, 0.15}},
                         {"beta", {1, 2, 3}, {0.3, 0.1, 0.05}}});
    std::ifstream in(path);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(all.find("<svg") != std::string::npos);
    CHECK(all.find("alpha") != std::string::npos);
    CHECK(all.find("beta") != std::string::npos);
    CHECK(all.find("polyline") != std::string::npos);
    CHECK(all.rfind("</svg>\n") == all.size() - 7);
    std::filesystem::remove(path);
}
