// SPDX-License-Identifier: Apache-2.0
//
// Snapshot archive persistence: binary CFR payload plus a human-readable
// JSON sidecar describing dimensions and radio parameters.

#pragma once

#include "dtc/raytrace.hpp"

namespace dtc {

// Archive of channel snapshots along one trajectory (or position set).
struct SnapshotArchive {
    rt::RadioConfig radio;
    std::size_t n_tx = 0;
    std::uint64_t scene_id = 0; // FNV-1a hash of the scene JSON text
    std::vector<rt::ChannelSnapshot> slots;
};

std::uint64_t scene_content_id(const scene::Scene& scene);

// Writes `path` (binary) and `path + ".json"` (sidecar). Ray path lists are
// not persisted; archives carry only CFR, positions and slot indices.
void save_archive(const std::string& path, const SnapshotArchive& archive);
SnapshotArchive load_archive(const std::string& path);

} // namespace dtc
