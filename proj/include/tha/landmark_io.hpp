#pragma once

#include <string>

#include "tha/geometry.hpp"

namespace tha {

// Landmark sequence file: one text header line
//   lmk <version> <fps> <n_frames> <n_points=68>
// followed by n_frames lines of 204 whitespace-separated decimals
// (x1 y1 z1 ... x68 y68 z68). Values are printed with 17 significant digits
// so a save/load round trip is bit-exact. A template file is the same format
// with n_frames = 1.
void save_landmarks(const std::string& path, const LandmarkSequence& seq);
LandmarkSequence load_landmarks(const std::string& path);

void save_template(const std::string& path, const LandmarkFrame& frame);
LandmarkFrame load_template(const std::string& path);

}  // namespace tha
