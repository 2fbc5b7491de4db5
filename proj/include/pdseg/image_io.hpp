#pragma once

#include <filesystem>

#include "pdseg/image.hpp"

namespace pdseg {

/// PFM, grey ("Pf", 1 channel) or color ("PF", 3 channels interleaved per
/// pixel). Rows are stored bottom-to-top; the writer emits little-endian
/// (negative scale), the reader honours either sign.
void write_pfm(const std::filesystem::path& path, const Image& image);
Image read_pfm(const std::filesystem::path& path);

/// 16-bit binary PGM ("P5", maxval 65535, big-endian samples). Values are
/// clamped to [lo, hi] and mapped linearly onto 0..65535.
void write_pgm16(const std::filesystem::path& path, const Image& plane, float lo = 0.0f, float hi = 1.0f);
/// Only maxval 65535 is accepted.
Image read_pgm16(const std::filesystem::path& path, float lo = 0.0f, float hi = 1.0f);

/// Label maps as 8-bit binary PGM (maxval 255).
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_pgm(const std::filesystem::path& path);

}  // namespace pdseg
