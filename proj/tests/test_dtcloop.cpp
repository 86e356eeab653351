// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dtc/dtcloop.hpp"
#include "dtc/experiments.hpp"
#include "dtc/serialize.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

using namespace dtc;
using namespace dtc::loop;

namespace {

scene::AntennaArray upa(std::size_t rows, std::size_t cols) {
    scene::AntennaArray a;
    a.kind = scene::ArrayKind::upa;
    a.rows = rows;
    a.cols = cols;
    return a;
}

// independent beamforming gain: mean over subcarriers of |w^H h_k|^2
double ref_gain(const std::vector<std::vector<cplx>>& cfr, const std::vector<cplx>& w) {
    double acc = 0.0;
    const std::size_t k_count = cfr.front().size();
    for (std::size_t k = 0; k < k_count; ++k) {
        cplx dot{0.0, 0.0};
        for (std::size_t m = 0; m < cfr.size(); ++m) dot += std::conj(w[m]) * cfr[m][k];
        acc += std::norm(dot);
    }
    return acc / static_cast<double>(k_count);
}

SnapshotArchive synthetic_archive(std::size_t n_slots) {
    SnapshotArchive ar;
    ar.radio.n_subcarriers = 4;
    ar.n_tx = 2;
    ar.scene_id = 5;
    for (std::size_t t = 0; t < n_slots; ++t) {
        rt::ChannelSnapshot s;
        s.slot_index = t;
        s.rx_position = {static_cast<double>(t), 0.0, 1.5};
        s.cfr.assign(2, std::vector<cplx>(4));
        for (std::size_t m = 0; m < 2; ++m)
            for (std::size_t k = 0; k < 4; ++k) {
                const double ph = 0.3 * static_cast<double>(t) + 0.5 * static_cast<double>(m) +
                                  0.2 * static_cast<double>(k);
                s.cfr[m][k] = std::polar(1.0 + 0.1 * static_cast<double>(m), ph) +
                              std::polar(0.4, -1.7 * ph);
            }
        ar.slots.push_back(std::move(s));
    }
    return ar;
}

} // namespace

TEST_CASE("codebook codewords are unit norm on the requested grid") {
    const auto book = BeamCodebook::make(upa(2, 4), 6, 3, 0.4);
    CHECK(book.size() == 18);
    CHECK(book.angles.size() == 18);
    for (const auto& w : book.codewords) {
        REQUIRE(w.size() == 8);
        double n = 0.0;
        for (const auto& c : w) n += std::norm(c);
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    }
    // azimuths stay in the front half-plane around the bearing
    for (const auto& [az, el] : book.angles) {
        CHECK(std::abs(std::sin(az - 0.4)) < 1.0);
        CHECK(std::abs(el) <= std::asin(0.5) + 1e-12);
    }
    CHECK_THROWS_AS(BeamCodebook::make(upa(2, 2), 0, 2, 0.0), ConfigError);
}

TEST_CASE("select_beam is the exhaustive argmax") {
    const auto book = BeamCodebook::make(upa(2, 4), 6, 2, 0.0);
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::vector<cplx>> cfr(8, std::vector<cplx>(5));
        for (auto& row : cfr)
            for (auto& v : row) v = {rng.normal(), rng.normal()};
        const auto choice = select_beam(cfr, book);
        std::size_t best = 0;
        double best_gain = -1.0;
        for (std::size_t b = 0; b < book.size(); ++b) {
            const double g = ref_gain(cfr, book.codewords[b]);
            if (g > best_gain) {
                best_gain = g;
                best = b;
            }
        }
        CHECK(choice.index == best);
        CHECK(choice.gain == doctest::Approx(best_gain).epsilon(1e-12));

        // scaling the channel cannot move the argmax
        std::vector<std::vector<cplx>> scaled = cfr;
        for (auto& row : scaled)
            for (auto& v : row) v *= 3.0;
        const auto big = select_beam(scaled, book);
        CHECK(big.index == choice.index);
        CHECK(big.gain == doctest::Approx(9.0 * choice.gain).epsilon(1e-12));
    }
}

TEST_CASE("a codebook-aligned single path earns the full array gain") {
    const auto array = upa(2, 4);
    const double bearing = 0.2;
    const auto book = BeamCodebook::make(array, 8, 2, bearing);
    const auto [az, el] = book.angles[5];
    const cplx g = std::polar(0.3, 0.7);
    std::vector<std::vector<cplx>> cfr(8, std::vector<cplx>(3));
    for (std::size_t m = 0; m < 8; ++m) {
        const cplx a = rt::element_response(array, m, az, el, bearing);
        for (std::size_t k = 0; k < 3; ++k) cfr[m][k] = g * a;
    }
    const auto choice = select_beam(cfr, book);
    CHECK(choice.gain == doctest::Approx(8.0 * std::norm(g)).epsilon(1e-9));
    CHECK(ref_gain(cfr, book.codewords[choice.index]) ==
          doctest::Approx(8.0 * std::norm(g)).epsilon(1e-9));
}

TEST_CASE("select_beam rejects degenerate inputs") {
    const auto book = BeamCodebook::make(upa(2, 2), 4, 1, 0.0);
    CHECK_THROWS_AS(select_beam(std::vector<std::vector<cplx>>(4, std::vector<cplx>(3)), book),
                    ValidationError); // all zero
    CHECK_THROWS_AS(select_beam({{cplx{1, 0}}, {cplx{0, 1}}}, book), ValidationError);
    CHECK_THROWS_AS(select_beam({{cplx{1, 0}}}, BeamCodebook{}), ConfigError);
}

TEST_CASE("water-filling reproduces the worked two-user split") {
    const auto p = allocate_power({1.0, 0.25}, 2.0, 1.0);
    REQUIRE(p.size() == 2);
    CHECK(p[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(p[1] == 0.0);
}

TEST_CASE("water-filling satisfies the KKT conditions") {
    Rng rng(12);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(6);
        std::vector<double> gains(n);
        for (double& g : gains) g = std::exp(rng.uniform(-3.0, 2.0));
        const double total = std::exp(rng.uniform(-1.0, 3.0));
        const double noise = std::exp(rng.uniform(-2.0, 1.0));
        const auto p = allocate_power(gains, total, noise);
        REQUIRE(p.size() == n);

        double sum = 0.0, level = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(p[i] >= 0.0);
            sum += p[i];
            if (p[i] > 0.0) {
                const double li = noise / gains[i] + p[i];
                if (level < 0.0) level = li;
                CHECK(li == doctest::Approx(level).epsilon(1e-6));
            }
        }
        CHECK(sum == doctest::Approx(total).epsilon(1e-9));
        REQUIRE(level > 0.0); // at least one user is on
        for (std::size_t i = 0; i < n; ++i)
            if (p[i] == 0.0) CHECK(noise / gains[i] >= level - 1e-9 * level);
    }
}

TEST_CASE("water-filling beats a simplex grid search on sum rate") {
    auto sum_rate = [](const std::vector<double>& p, const std::vector<double>& g, double noise) {
        double r = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) r += std::log2(1.0 + p[i] * g[i] / noise);
        return r;
    };
    Rng rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        const std::vector<double> gains = {std::exp(rng.uniform(-2.0, 1.5)),
                                           std::exp(rng.uniform(-2.0, 1.5)),
                                           std::exp(rng.uniform(-2.0, 1.5))};
        const double total = 4.0, noise = 0.7;
        const auto p = allocate_power(gains, total, noise);
        const double wf = sum_rate(p, gains, noise);
        const int steps = 60;
        double best = 0.0;
        for (int i = 0; i <= steps; ++i)
            for (int j = 0; i + j <= steps; ++j) {
                const double p0 = total * i / steps, p1 = total * j / steps;
                best = std::max(best, sum_rate({p0, p1, total - p0 - p1}, gains, noise));
            }
        CHECK(wf >= best - 1e-9);
    }
}

TEST_CASE("water-filling rejects invalid instances") {
    CHECK_THROWS_AS(allocate_power({}, 1.0, 1.0), ValidationError);
    CHECK_THROWS_AS(allocate_power({1.0, 0.0}, 1.0, 1.0), ValidationError);
    CHECK_THROWS_AS(allocate_power({1.0}, 0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(allocate_power({1.0}, 1.0, 0.0), ValidationError);
}

TEST_CASE("free-space map loses power monotonically with distance") {
    scene::Scene sc;
    sc.bounds = {-50.0, -50.0, 50.0, 50.0};
    scene::Transceiver tx;
    tx.position = {-45.0, 0.0, 12.0};
    tx.array = upa(2, 2);
    tx.tx_power_dbm = 30.0;
    rt::RadioConfig radio;
    radio.n_subcarriers = 5;
    const auto book = BeamCodebook::make(tx.array, 4, 2, 0.0);

    const auto map = build_channel_map(sc, tx, 5.0, radio, book, 0, 1.5, 0.0);
    CHECK(map.nx == 20);
    CHECK(map.ny == 20);
    REQUIRE(map.cells.size() == 400);
    CHECK(map.cells[0].x == doctest::Approx(-47.5));
    CHECK(map.cells[0].y == doctest::Approx(-47.5));
    CHECK(map.cells[1].x == doctest::Approx(-42.5)); // x varies fastest

    auto dist = [&](const MapCell& c) {
        return std::sqrt((c.x - tx.position.x) * (c.x - tx.position.x) +
                         (c.y - tx.position.y) * (c.y - tx.position.y) +
                         (1.5 - tx.position.z) * (1.5 - tx.position.z));
    };
    for (const auto& a : map.cells) {
        REQUIRE(!a.outage);
        CHECK(a.rsrp_dbm < tx.tx_power_dbm);
    }
    for (std::size_t i = 0; i < map.cells.size(); i += 7)
        for (std::size_t j = 0; j < map.cells.size(); j += 11) {
            const auto &a = map.cells[i], &b = map.cells[j];
            if (dist(a) < dist(b) - 1e-9)
                CHECK(a.path_loss_db < b.path_loss_db);
        }
}

TEST_CASE("cells shadowed by a building report outage") {
    scene::Scene sc;
    sc.bounds = {-50.0, -50.0, 50.0, 50.0};
    scene::Box wall;
    wall.footprint = {-5.0, -20.0, 5.0, 20.0};
    wall.height = 30.0;
    sc.buildings.push_back(wall);
    scene::Transceiver tx;
    tx.position = {-45.0, 0.0, 12.0};
    tx.array = upa(2, 2);
    rt::RadioConfig radio;
    radio.n_subcarriers = 3;
    const auto book = BeamCodebook::make(tx.array, 4, 1, 0.0);

    const auto map = build_channel_map(sc, tx, 10.0, radio, book, 0, 1.5, 0.0);
    REQUIRE(map.nx == 10);
    auto cell_at = [&](double x, double y) -> const MapCell& {
        for (const auto& c : map.cells)
            if (std::abs(c.x - x) < 1e-9 && std::abs(c.y - y) < 1e-9) return c;
        throw std::runtime_error("cell not found");
    };
    CHECK(!cell_at(-25.0, -5.0).outage);     // clear line of sight
    CHECK(cell_at(25.0, -5.0).outage);       // directly behind the slab
    CHECK(!cell_at(25.0, -45.0).outage);     // past the slab's south edge

    const auto path = (std::filesystem::temp_directory_path() / "dtc_map.csv").string();
    write_channel_map_csv(path, map);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "x,y,path_loss_db,rsrp_dbm,outage");
    std::size_t rows = 0, outage_rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        if (line.find(",,,1") != std::string::npos) {
            ++outage_rows;
        } else {
            CHECK(line.back() == '0');
        }
    }
    CHECK(rows == map.cells.size());
    std::size_t expect_outage = 0;
    for (const auto& c : map.cells) expect_outage += c.outage ? 1 : 0;
    CHECK(outage_rows == expect_outage);
    std::filesystem::remove(path);
}

TEST_CASE("map rejects bad resolution") {
    scene::Scene sc;
    sc.bounds = {-50.0, -50.0, 50.0, 50.0};
    scene::Transceiver tx;
    tx.array = upa(2, 2);
    rt::RadioConfig radio;
    const auto book = BeamCodebook::make(tx.array, 4, 1, 0.0);
    CHECK_THROWS_AS(build_channel_map(sc, tx, 0.0, radio, book, 0, 1.5, 0.0), ConfigError);
    CHECK_THROWS_AS(build_channel_map(sc, tx, 1e6, radio, book, 0, 1.5, 0.0), ConfigError);
}

TEST_CASE("oracle predictions keep the loop silent at full gain") {
    const auto ar = synthetic_archive(30);
    std::vector<std::vector<double>> truth;
    for (const auto& s : ar.slots) truth.push_back(flatten_cfr(s.cfr));
    OraclePredictor oracle(truth);
    const auto book = BeamCodebook::make(upa(1, 2), 4, 1, 0.0);

    const auto res = run_loop(ar, oracle, book, 5, 30.0, {});
    REQUIRE(res.records.size() == 25);
    for (const auto& r : res.records) {
        CHECK(r.nmse == 0.0);
        CHECK(r.gain_ratio == 1.0);
        CHECK(r.action == "none");
        REQUIRE(r.powers.size() == 1);
        CHECK(r.powers[0] == doctest::Approx(1000.0).epsilon(1e-12)); // 30 dBm, one user
        CHECK(std::isfinite(r.sinr_db));
    }
    CHECK(res.n_recollect == 0);
    CHECK(res.n_retrain == 0);
    CHECK(res.mean_nmse == 0.0);
    CHECK(res.mean_gain_ratio == 1.0);
    CHECK(res.retrains.empty());
}

TEST_CASE("a useless predictor triggers recollection and scheduled retrains") {
    const auto ar = synthetic_archive(40);
    ZeroPredictor zero(flatten_cfr(ar.slots[0].cfr).size());
    const auto book = BeamCodebook::make(upa(1, 2), 4, 1, 0.0);
    LoopThresholds th;
    th.window = 5;

    const auto res = run_loop(ar, zero, book, 4, 30.0, th);
    REQUIRE(res.records.size() == 36);
    for (const auto& r : res.records) {
        CHECK(r.nmse == 1.0); // zero prediction: error power equals reference power
        CHECK(r.gain_ratio >= 0.0);
        CHECK(r.gain_ratio <= 1.0);
    }
    // every slot exceeds the recollect threshold
    CHECK(res.n_recollect == 36);
    // retrain fires on the 5th consecutive bad slot, then every 5 after reset
    CHECK(res.records[3].action == "recollect");
    CHECK(res.records[4].action == "retrain");
    CHECK(res.records[9].action == "retrain");
    CHECK(res.n_retrain == 7);
    REQUIRE(res.retrains.size() == 7);
    for (const auto& ev : res.retrains) {
        CHECK(ev.nmse_before == 1.0);
        CHECK(ev.nmse_after == 1.0); // the no-op finetune cannot move it
    }
    CHECK(res.retrains[0].slot == res.records[4].slot);
    CHECK(res.mean_nmse == 1.0);
}

TEST_CASE("infinite thresholds reduce the loop to pure evaluation") {
    const auto ar = synthetic_archive(20);
    ZeroPredictor zero(flatten_cfr(ar.slots[0].cfr).size());
    const auto book = BeamCodebook::make(upa(1, 2), 4, 1, 0.0);
    LoopThresholds th;
    th.recollect_nmse = 1e300;
    th.retrain_nmse = 1e300;

    const auto res = run_loop(ar, zero, book, 4, 30.0, th);
    for (const auto& r : res.records) CHECK(r.action == "none");
    CHECK(res.n_recollect == 0);
    CHECK(res.n_retrain == 0);
}

TEST_CASE("the loop is deterministic") {
    const auto ar = synthetic_archive(24);
    const auto book = BeamCodebook::make(upa(1, 2), 4, 1, 0.0);
    std::vector<std::vector<double>> truth;
    for (const auto& s : ar.slots) truth.push_back(flatten_cfr(s.cfr));

    auto run = [&] {
        OraclePredictor oracle(truth);
        return run_loop(ar, oracle, book, 6, 27.0, {});
    };
    const auto a = run(), b = run();
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].nmse == b.records[i].nmse);
        CHECK(a.records[i].sinr_db == b.records[i].sinr_db);
        CHECK(a.records[i].powers == b.records[i].powers);
    }
}

TEST_CASE("loop rejects degenerate setups") {
    const auto ar = synthetic_archive(8);
    ZeroPredictor zero(16);
    const auto book = BeamCodebook::make(upa(1, 2), 4, 1, 0.0);
    CHECK_THROWS_AS(run_loop(ar, zero, book, 0, 30.0, {}), ConfigError);
    CHECK_THROWS_AS(run_loop(ar, zero, book, 8, 30.0, {}), ValidationError);
    LoopThresholds th;
    th.window = 0;
    CHECK_THROWS_AS(run_loop(ar, zero, book, 2, 30.0, th), ConfigError);
    // predictor width mismatch
    ZeroPredictor narrow(4);
    CHECK_THROWS_AS(run_loop(ar, narrow, book, 2, 30.0, {}), ValidationError);
}

TEST_CASE("loop log is one json record per slot") {
    const auto ar = synthetic_archive(16);
    std::vector<std::vector<double>> truth;
    for (const auto& s : ar.slots) truth.push_back(flatten_cfr(s.cfr));
    OraclePredictor oracle(truth);
    const auto book = BeamCodebook::make(upa(1, 2), 4, 1, 0.0);
    const auto res = run_loop(ar, oracle, book, 4, 30.0, {});

    const auto path = (std::filesystem::temp_directory_path() / "dtc_loop.jsonl").string();
    write_loop_log(path, res);
    std::ifstream in(path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("slot"));
        CHECK(j.contains("nmse"));
        CHECK(j.contains("gain_ratio"));
        CHECK(j.contains("sinr_db"));
        CHECK(j.contains("powers"));
        CHECK(j.at("action") == "none");
        ++n;
    }
    CHECK(n == res.records.size());
    std::filesystem::remove(path);
}

TEST_CASE("gpt predictor round-trips normalization and clips context") {
    nn::GptConfig cfg;
    cfg.d_in = 4;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.context = 6;
    Rng rng(seed_for(3, "gpt-init"));
    auto model = nn::GptModel::init(cfg, rng);
    FeatureStats stats;
    stats.mean.assign(4, 0.5);
    stats.std_dev.assign(4, 2.0);
    GptPredictor pred(std::move(model), stats);

    std::vector<std::vector<double>> hist(10, std::vector<double>(4));
    Rng data_rng(8);
    for (auto& r : hist)
        for (double& v : r) v = data_rng.normal();
    const auto out = pred.predict(hist, 10);
    REQUIRE(out.size() == 4);
    for (double v : out) CHECK(std::isfinite(v));
    // rollout only sees the trailing `context` rows
    const std::vector<std::vector<double>> tail(hist.end() - 6, hist.end());
    CHECK(pred.predict(tail, 10) == out);
    CHECK(pred.name() == "gpt");
}
