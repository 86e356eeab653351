// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dtc/serialize.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace dtc;

namespace {
std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
} // namespace

TEST_CASE("snapshot archives round-trip exactly") {
    SnapshotArchive a;
    a.radio.carrier_freq = 2.4e9;
    a.radio.subcarrier_spacing = 15e3;
    a.radio.n_subcarriers = 3;
    a.n_tx = 2;
    a.scene_id = 0xdeadbeefcafe;
    for (std::size_t s = 0; s < 4; ++s) {
        rt::ChannelSnapshot snap;
        snap.slot_index = s * 10;
        snap.rx_position = {1.5 * static_cast<double>(s), -2.25, 1.5};
        snap.cfr = {{cplx(0.1 * static_cast<double>(s), -0.5), cplx(2, 3), cplx(-1e-7, 4e9)},
                    {cplx(0, 0), cplx(1e-300, 5), cplx(7, -8)}};
        a.slots.push_back(snap);
    }

    const std::string path = temp_path("dtc_arch.dtcs");
    save_archive(path, a);
    const SnapshotArchive b = load_archive(path);

    CHECK(b.radio.carrier_freq == a.radio.carrier_freq);
    CHECK(b.radio.subcarrier_spacing == a.radio.subcarrier_spacing);
    CHECK(b.radio.n_subcarriers == a.radio.n_subcarriers);
    CHECK(b.n_tx == a.n_tx);
    CHECK(b.scene_id == a.scene_id);
    REQUIRE(b.slots.size() == a.slots.size());
    for (std::size_t s = 0; s < a.slots.size(); ++s) {
        CHECK(b.slots[s].slot_index == a.slots[s].slot_index);
        CHECK(b.slots[s].rx_position.x == a.slots[s].rx_position.x);
        CHECK(b.slots[s].rx_position.y == a.slots[s].rx_position.y);
        CHECK(b.slots[s].rx_position.z == a.slots[s].rx_position.z);
        CHECK(b.slots[s].cfr == a.slots[s].cfr); // bit-exact doubles
    }

    // sidecar exists and is valid JSON with the right dimensions
    std::ifstream side(path + ".json");
    REQUIRE(side.good());
    const auto j = nlohmann::json::parse(side);
    CHECK(j.at("n_slots") == 4);
    CHECK(j.at("n_tx") == 2);
    CHECK(j.at("n_subcarriers") == 3);

    std::remove(path.c_str());
    std::remove((path + ".json").c_str());
}

TEST_CASE("archive loader rejects bad files") {
    CHECK_THROWS_AS(load_archive(temp_path("dtc_nonexistent.dtcs")), IoError);
    const std::string path = temp_path("dtc_garbage.dtcs");
    {
        std::ofstream out(path, std::ios::binary);
        out << "MAGIC MISMATCH ..............";
    }
    CHECK_THROWS_AS(load_archive(path), IoError);
    std::remove(path.c_str());
}

TEST_CASE("scene content id depends on the scene") {
    const auto s1 = scene::generate_urban_scene(1);
    const auto s2 = scene::generate_urban_scene(99);
    CHECK(scene_content_id(s1) == scene_content_id(s1));
    CHECK(scene_content_id(s1) != scene_content_id(s2));
}
