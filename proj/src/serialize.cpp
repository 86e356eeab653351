// SPDX-License-Identifier: Apache-2.0

#include "dtc/serialize.hpp"

#include "dtc/binio.hpp"

#include <json.hpp>

#include <fstream>

namespace dtc {

namespace {
constexpr char kMagic[4] = {'D', 'T', 'C', 'S'};
constexpr std::uint32_t kVersion = 1;
} // namespace

std::uint64_t scene_content_id(const scene::Scene& scene) {
    return fnv1a64(scene::to_json(scene));
}

void save_archive(const std::string& path, const SnapshotArchive& archive) {
    const std::size_t n_slots = archive.slots.size();
    const std::size_t n_tx = archive.n_tx;
    const auto k = static_cast<std::size_t>(archive.radio.n_subcarriers);
    for (const auto& s : archive.slots) {
        if (s.cfr.size() != n_tx) throw ValidationError("archive slot antenna count mismatch");
        for (const auto& row : s.cfr)
            if (row.size() != k) throw ValidationError("archive slot subcarrier count mismatch");
    }

    io::BinWriter w(path);
    w.magic(kMagic);
    w.u32(kVersion);
    w.u64(archive.scene_id);
    w.u32(static_cast<std::uint32_t>(n_slots));
    w.u32(static_cast<std::uint32_t>(n_tx));
    w.u32(static_cast<std::uint32_t>(k));
    w.f64(archive.radio.carrier_freq);
    w.f64(archive.radio.subcarrier_spacing);
    w.f64(archive.radio.noise_figure_db);
    for (const auto& s : archive.slots) {
        w.u64(s.slot_index);
        w.f64(s.rx_position.x);
        w.f64(s.rx_position.y);
        w.f64(s.rx_position.z);
        for (const auto& row : s.cfr)
            for (const cplx& v : row) {
                w.f64(v.real());
                w.f64(v.imag());
            }
    }
    w.close();

    nlohmann::json side;
    side["format"] = "dtc-snapshot-archive";
    side["version"] = kVersion;
    side["scene_id"] = archive.scene_id;
    side["n_slots"] = n_slots;
    side["n_tx"] = n_tx;
    side["n_subcarriers"] = k;
    side["radio"] = {{"carrier_freq", archive.radio.carrier_freq},
                     {"subcarrier_spacing", archive.radio.subcarrier_spacing},
                     {"noise_figure_db", archive.radio.noise_figure_db}};
    std::ofstream sf(path + ".json");
    if (!sf) throw IoError("cannot open for writing: " + path + ".json");
    sf << side.dump(2) << "\n";
    if (!sf) throw IoError("write failed: " + path + ".json");
}

SnapshotArchive load_archive(const std::string& path) {
    io::BinReader r(path);
    r.expect_magic(kMagic);
    const auto version = r.u32();
    if (version != kVersion)
        throw IoError(path + ": unsupported archive version " + std::to_string(version));
    SnapshotArchive a;
    a.scene_id = r.u64();
    const auto n_slots = r.u32();
    const auto n_tx = r.u32();
    const auto k = r.u32();
    a.n_tx = n_tx;
    a.radio.carrier_freq = r.f64();
    a.radio.subcarrier_spacing = r.f64();
    a.radio.n_subcarriers = static_cast<int>(k);
    a.radio.noise_figure_db = r.f64();
    a.slots.resize(n_slots);
    for (auto& s : a.slots) {
        s.slot_index = r.u64();
        s.rx_position.x = r.f64();
        s.rx_position.y = r.f64();
        s.rx_position.z = r.f64();
        s.cfr.assign(n_tx, std::vector<cplx>(k));
        for (auto& row : s.cfr)
            for (cplx& v : row) {
                const double re = r.f64();
                const double im = r.f64();
                v = cplx(re, im);
            }
    }
    return a;
}

} // namespace dtc
