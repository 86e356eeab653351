// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dtc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

using namespace dtc;

namespace {

// Archive with deterministic synthetic CFR rows: slot s, antenna m,
// subcarrier k -> (s + 0.1*m + 0.01*k) + i*(s - 0.1*m).
SnapshotArchive synthetic_archive(std::size_t n_slots, std::size_t n_tx, int n_sub) {
    SnapshotArchive a;
    a.radio.n_subcarriers = n_sub;
    a.n_tx = n_tx;
    a.scene_id = 77;
    for (std::size_t s = 0; s < n_slots; ++s) {
        rt::ChannelSnapshot snap;
        snap.slot_index = s;
        snap.rx_position = {static_cast<double>(s), 0.0, 1.5};
        snap.cfr.assign(n_tx, std::vector<cplx>(static_cast<std::size_t>(n_sub)));
        for (std::size_t m = 0; m < n_tx; ++m)
            for (int k = 0; k < n_sub; ++k)
                snap.cfr[m][static_cast<std::size_t>(k)] =
                    cplx(static_cast<double>(s) + 0.1 * static_cast<double>(m) + 0.01 * k,
                         static_cast<double>(s) - 0.1 * static_cast<double>(m));
        a.slots.push_back(std::move(snap));
    }
    return a;
}

std::string temp_dir(const char* name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    return dir.string();
}

} // namespace

TEST_CASE("cfr flattening round-trips and uses the documented layout") {
    const std::vector<std::vector<cplx>> cfr = {{cplx(1, 2), cplx(3, 4)},
                                                {cplx(5, 6), cplx(7, 8)}};
    const auto flat = flatten_cfr(cfr);
    CHECK(flat == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(flat[2 * (1 * 2 + 0)] == 5.0);     // antenna 1, subcarrier 0, re
    CHECK(flat[2 * (1 * 2 + 1) + 1] == 8.0); // antenna 1, subcarrier 1, im
    const auto back = unflatten_cfr(flat, 2, 2);
    CHECK(back == cfr);
    CHECK_THROWS_AS(unflatten_cfr(flat, 3, 2), ValidationError);
}

TEST_CASE("feature stats match hand-computed mean and population sigma") {
    const std::vector<std::vector<double>> rows = {{1.0, 10.0}, {3.0, 10.0}};
    const FeatureStats st = compute_stats(rows);
    CHECK(st.mean == std::vector<double>{2.0, 10.0});
    CHECK(st.std_dev[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(st.std_dev[1] == 1e-9); // constant feature floored, not zero

    const auto n = st.normalize({3.0, 10.0});
    CHECK(n[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(n[1] == 0.0);
    const auto d = st.denormalize(n);
    CHECK(d[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(d[1] == doctest::Approx(10.0).epsilon(1e-15));

    CHECK_THROWS_AS(compute_stats({}), ValidationError);
}

TEST_CASE("window counts match the containment rule at stride 1") {
    // 100 slots, fractions .6/.2: regions [0,60), [60,80), [80,100).
    // windows of length 5+3=8 starting at s fit region [a,b) iff a<=s, s+8<=b:
    // train 60-8+1=53, val 20-8+1=13, test 20-8+1=13.
    const auto a = synthetic_archive(100, 1, 2);
    const auto ds = build_timeseries_dataset(a, 5, 3, 1, 0.6, 0.2);
    CHECK(ds.train.size() == 53);
    CHECK(ds.val.size() == 13);
    CHECK(ds.test.size() == 13);
    CHECK(ds.feature_width == 4);
    CHECK(ds.scene_id == 77);

    // boundaries: last train window starts at 52, first val at 60
    CHECK(ds.train.back().start_slot == 52);
    CHECK(ds.val.front().start_slot == 60);
    CHECK(ds.test.front().start_slot == 80);
    for (const auto& w : ds.train) REQUIRE(w.rows.size() == 8);
}

TEST_CASE("window counts match the containment rule at stride 2") {
    // starts in [0,52] even -> 27; in [60,72] even -> 7; in [80,92] even -> 7
    const auto a = synthetic_archive(100, 1, 2);
    const auto ds = build_timeseries_dataset(a, 5, 3, 2, 0.6, 0.2);
    CHECK(ds.train.size() == 27);
    CHECK(ds.val.size() == 7);
    CHECK(ds.test.size() == 7);
}

TEST_CASE("window rows carry the raw features of their slots") {
    const auto a = synthetic_archive(30, 2, 3);
    const auto ds = build_timeseries_dataset(a, 4, 2, 1, 0.5, 0.25);
    const auto& w = ds.train.front();
    CHECK(w.start_slot == 0);
    for (std::size_t t = 0; t < 6; ++t)
        CHECK(w.rows[t] == flatten_cfr(a.slots[t].cfr));
}

TEST_CASE("stats are computed over train rows only") {
    const auto a = synthetic_archive(40, 1, 1);
    const auto ds = build_timeseries_dataset(a, 2, 1, 1, 0.5, 0.25);
    // train region is slots [0,20); every slot contributes its row once per
    // covering window, so recompute the oracle the same way
    std::vector<std::vector<double>> rows;
    for (const auto& w : ds.train)
        for (const auto& r : w.rows) rows.push_back(r);
    const FeatureStats want = compute_stats(rows);
    CHECK(ds.stats.mean == want.mean);
    CHECK(ds.stats.std_dev == want.std_dev);
    // no slot outside the train region may appear: max feature value is re
    // of slot 19 -> 19.0
    double max_re = 0.0;
    for (const auto& w : ds.train)
        for (const auto& r : w.rows) max_re = std::max(max_re, r[0]);
    CHECK(max_re == 19.0);
}

TEST_CASE("degenerate splits are rejected") {
    const auto a = synthetic_archive(20, 1, 1);
    CHECK_THROWS_AS(build_timeseries_dataset(a, 30, 5, 1, 0.6, 0.2), ValidationError);
    CHECK_THROWS_AS(build_timeseries_dataset(a, 5, 3, 0, 0.6, 0.2), ValidationError);
    CHECK_THROWS_AS(build_timeseries_dataset(a, 5, 3, 1, 0.0, 0.2), ValidationError);
    CHECK_THROWS_AS(build_timeseries_dataset(a, 5, 3, 1, 0.9, 0.2), ValidationError);
}

TEST_CASE("pilot input layout follows pilots-then-positions order") {
    FusionSample s;
    s.pilot_indices = {1, 3};
    // 2 antennas, 4 subcarriers: target[2*(m*4+k)] = re, +1 = im
    s.target.assign(16, 0.0);
    auto set = [&s](std::size_t m, std::size_t k, double re, double im) {
        s.target[2 * (m * 4 + k)] = re;
        s.target[2 * (m * 4 + k) + 1] = im;
    };
    set(0, 1, 1.0, 2.0);
    set(1, 1, 3.0, 4.0);
    set(0, 3, 5.0, 6.0);
    set(1, 3, 7.0, 8.0);

    FeatureStats st; // identity normalization
    st.mean.assign(16, 0.0);
    st.std_dev.assign(16, 1.0);

    const auto in = fusion_pilot_input(s, st, 2, 4);
    // per pilot: (2*n_tx) values, then n_pilots positions: 2*(2*2)+2 = 10
    REQUIRE(in.size() == 10);
    CHECK(in[0] == 1.0); // pilot k=1, antenna 0 re
    CHECK(in[1] == 2.0);
    CHECK(in[2] == 3.0); // antenna 1
    CHECK(in[3] == 4.0);
    CHECK(in[4] == 5.0); // pilot k=3
    CHECK(in[7] == 8.0);
    CHECK(in[8] == doctest::Approx(1.0 / 3.0).epsilon(1e-15)); // position 1/(K-1)
    CHECK(in[9] == doctest::Approx(3.0 / 3.0).epsilon(1e-15));

    // normalization uses the per-feature stats of the touched entries
    st.mean[2 * (0 * 4 + 1)] = 1.0;
    st.std_dev[2 * (0 * 4 + 1)] = 2.0;
    const auto in2 = fusion_pilot_input(s, st, 2, 4);
    CHECK(in2[0] == 0.0);
    CHECK(in2[1] == 2.0);
}

TEST_CASE("depth views see a box where it stands and sky elsewhere") {
    scene::Scene sc;
    sc.bounds = Rect{-100, -100, 100, 100};
    scene::Box b;
    b.footprint = Rect{10, -5, 20, 5}; // due +x of the eye
    b.height = 30.0;
    sc.buildings.push_back(b);

    const std::size_t res = 16;
    const double max_range = 50.0;
    const auto views = render_env_views(sc, {0, 0, 1.5}, 4, res, max_range);
    REQUIRE(views.size() == 4 * res * res);

    // view 0 faces +x: center pixel hits the wall at x=10 -> depth ~ 10/50
    const auto at = [&](std::size_t v, std::size_t r, std::size_t c) {
        return views[(v * res + r) * res + c];
    };
    const double center = at(0, res / 2, res / 2);
    CHECK(center > 0.15);
    CHECK(center < 0.35);

    // view 2 faces -x: nothing but ground and sky. top half sky
    CHECK(at(2, 0, res / 2) == 1.0);
    // bottom rows hit the ground within range
    CHECK(at(2, res - 1, res / 2) < 1.0);

    // all depths normalized
    for (double d : views) {
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
    }

    // views from a different eye differ
    const auto views2 = render_env_views(sc, {5, 0, 1.5}, 4, res, max_range);
    CHECK(views != views2);
}

TEST_CASE("fusion dataset construction is seeded and well-formed") {
    const auto sc = scene::generate_urban_scene(7);
    scene::Transceiver bs;
    bs.position = scene::default_bs_position(sc);
    bs.array.kind = scene::ArrayKind::upa;
    bs.array.rows = 2;
    bs.array.cols = 2;
    rt::RadioConfig radio;
    radio.n_subcarriers = 9;

    FusionBuildSpec spec;
    spec.n_train = 12;
    spec.n_val = 4;
    spec.n_test = 4;
    spec.n_pilots = 3;
    spec.n_views = 2;
    spec.view_res = 8;
    spec.max_order = 1;
    spec.seed = 5;

    const auto ds = build_fusion_dataset(sc, bs, radio, spec);
    CHECK(ds.train.size() == 12);
    CHECK(ds.val.size() == 4);
    CHECK(ds.test.size() == 4);
    CHECK(ds.n_tx == 4);
    CHECK(ds.n_subcarriers == 9);
    CHECK(ds.seed == 5);

    std::set<std::uint64_t> indices;
    for (const auto* split : {&ds.train, &ds.val, &ds.test})
        for (const auto& s : *split) {
            indices.insert(s.sample_index);
            REQUIRE(s.pilot_indices.size() == 3);
            CHECK(std::is_sorted(s.pilot_indices.begin(), s.pilot_indices.end()));
            CHECK(s.pilot_indices.back() < 9);
            CHECK(std::set<std::uint32_t>(s.pilot_indices.begin(), s.pilot_indices.end()).size() ==
                  3);
            REQUIRE(s.target.size() == 2 * 4 * 9);
            REQUIRE(s.views.size() == 2 * 8 * 8);
            CHECK(s.rx_position.z == doctest::Approx(1.5).epsilon(1e-12));
            // on some road
            bool on_road = false;
            for (const auto& r : sc.roads)
                if (r.contains(s.rx_position.x, s.rx_position.y)) on_road = true;
            CHECK(on_road);
        }
    CHECK(indices.size() == 20); // all samples distinct, split is a partition

    // different sample indices draw different pilot masks somewhere
    bool masks_differ = false;
    for (std::size_t i = 1; i < ds.train.size(); ++i)
        if (ds.train[i].pilot_indices != ds.train[0].pilot_indices) masks_differ = true;
    CHECK(masks_differ);

    // same spec -> identical dataset
    const auto ds2 = build_fusion_dataset(sc, bs, radio, spec);
    REQUIRE(ds2.train.size() == ds.train.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(ds2.train[i].target == ds.train[i].target);
        CHECK(ds2.train[i].pilot_indices == ds.train[i].pilot_indices);
    }
}

TEST_CASE("timeseries dataset persists byte-for-byte") {
    const auto a = synthetic_archive(40, 2, 3);
    const auto ds = build_timeseries_dataset(a, 4, 2, 1, 0.5, 0.25);
    const std::string dir = temp_dir("dtc_ts_ds");
    save_timeseries_dataset(dir, ds);
    const auto back = load_timeseries_dataset(dir);

    CHECK(back.history == ds.history);
    CHECK(back.horizon == ds.horizon);
    CHECK(back.feature_width == ds.feature_width);
    CHECK(back.scene_id == ds.scene_id);
    CHECK(back.stats.mean == ds.stats.mean);
    CHECK(back.stats.std_dev == ds.stats.std_dev);
    REQUIRE(back.train.size() == ds.train.size());
    REQUIRE(back.val.size() == ds.val.size());
    REQUIRE(back.test.size() == ds.test.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].start_slot == ds.train[i].start_slot);
        CHECK(back.train[i].rows == ds.train[i].rows);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("fusion dataset persists byte-for-byte") {
    const auto sc = scene::generate_urban_scene(7);
    scene::Transceiver bs;
    bs.position = scene::default_bs_position(sc);
    bs.array.kind = scene::ArrayKind::upa;
    bs.array.rows = 2;
    bs.array.cols = 1;
    rt::RadioConfig radio;
    radio.n_subcarriers = 5;

    FusionBuildSpec spec;
    spec.n_train = 6;
    spec.n_val = 2;
    spec.n_test = 2;
    spec.n_pilots = 2;
    spec.n_views = 2;
    spec.view_res = 8;
    spec.max_order = 1;

    const auto ds = build_fusion_dataset(sc, bs, radio, spec);
    const std::string dir = temp_dir("dtc_fu_ds");
    save_fusion_dataset(dir, ds);
    const auto back = load_fusion_dataset(dir);

    CHECK(back.n_tx == ds.n_tx);
    CHECK(back.n_subcarriers == ds.n_subcarriers);
    CHECK(back.n_pilots == ds.n_pilots);
    CHECK(back.seed == ds.seed);
    CHECK(back.stats.mean == ds.stats.mean);
    REQUIRE(back.train.size() == ds.train.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        CHECK(back.train[i].sample_index == ds.train[i].sample_index);
        CHECK(back.train[i].pilot_indices == ds.train[i].pilot_indices);
        CHECK(back.train[i].target == ds.train[i].target);
        CHECK(back.train[i].views == ds.train[i].views);
        CHECK(back.train[i].rx_position.x == ds.train[i].rx_position.x);
    }

    const std::uint64_t fp1 = manifest_fingerprint(dir);
    CHECK(fp1 == manifest_fingerprint(dir)); // stable
    CHECK_THROWS_AS(manifest_fingerprint(temp_dir("dtc_missing")), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("dataset loaders reject missing directories") {
    CHECK_THROWS_AS(load_timeseries_dataset(temp_dir("dtc_missing_ts")), IoError);
    CHECK_THROWS_AS(load_fusion_dataset(temp_dir("dtc_missing_fu")), IoError);
}
