// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "nocsloc/renderer.hpp"
#include "nocsloc/synth.hpp"

namespace nocsloc {

// On-disk layout written by the synth command and consumed by fit and
// localize:
//   <dir>/scene.json
//   <dir>/object_000/{meta.json, color.nlt, mask.nlt, gt_nocs.nlt,
//                     gt_hit.nlt, corr_clean.nlt, corr_noisy.nlt,
//                     corr_pixels.nlt, lidar.nlt, licomp.nlt,
//                     color.ppm, mask.pgm, nocs.ppm}
void write_dataset(const std::filesystem::path& dir, const SceneSpec& spec,
                   const std::vector<GeneratedObject>& objects);

struct Dataset {
  uint64_t seed = 0;
  std::vector<GeneratedObject> objects;
};

Dataset load_dataset(const std::filesystem::path& dir);

// 8-bit previews. NOCS channels map [-0.5, 0.5] to [0, 255].
std::vector<std::array<uint8_t, 3>> preview_color(const std::vector<Vec3>& colors);
std::vector<uint8_t> preview_mask(const TriMask& mask);
std::vector<std::array<uint8_t, 3>> preview_nocs(const std::vector<Vec3>& nocs,
                                                 const std::vector<uint8_t>& valid);

}  // namespace nocsloc
