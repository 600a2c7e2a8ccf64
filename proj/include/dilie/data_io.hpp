#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dilie/image.hpp"

namespace dilie {

// PNG/JPEG, 8-bit, sRGB bytes mapped linearly to [0,1] (no ICC handling).
// Larger-than-cap images are downscaled by exact area averaging so the
// longest side is resize_max_side; cap <= 0 disables resizing.
Image load_image(const std::string& path, int resize_max_side);

// Round-half-up 8-bit quantization; format chosen by extension
// (.png default, .jpg/.jpeg via libjpeg at quality 95).
void save_image(const std::string& path, const Image& img);

Image resize_max_side(const Image& img, int max_side);
Image resize_exact(const Image& img, int h, int w);

enum class PairConvention { ihaze, ohaze, generic_suffix };

struct PairedDataset {
    std::string root;
    std::vector<std::pair<std::string, std::string>> pairs;  // (hazy, gt), sorted
    std::vector<std::string> warnings;                       // unpaired files
    int resize_cap = 512;
};

// Pairs files by the benchmark filename convention: a shared stem plus a
// role token ("hazy" vs "GT"; generic_suffix uses "_hazy"/"_gt").
// Deterministic byte-wise lexicographic ordering. Throws DatasetError when
// nothing pairs up.
PairedDataset scan_paired(const std::string& root, PairConvention convention);

// --- small filesystem helpers (single-writer run directories) -------------

void ensure_directory(const std::string& path);
// write-temp-then-rename
void write_text_atomic(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

}  // namespace dilie
