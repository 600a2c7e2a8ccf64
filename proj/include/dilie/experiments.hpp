#pragma once

#include <string>
#include <vector>

#include "dilie/data_io.hpp"
#include "dilie/metrics.hpp"
#include "dilie/pipelines.hpp"

namespace dilie {

struct AblationRow {
    std::string pair_name;
    std::uint64_t seed = 0;
    double ssim_with_cl = 0.0;   // lambda_cl = 1
    double ssim_without_cl = 0.0;  // lambda_cl = 0
    double delta_ssim = 0.0;
    std::string error;  // non-empty when this pair failed
};

struct AblationReport {
    std::vector<AblationRow> rows;
    double mean_delta = 0.0;
    int wins = 0;  // pairs with delta >= 0
    std::string summary_csv_path;
    std::vector<std::string> manifest_dirs;
};

// Paired decomposition runs with lambda_cl in {0, 1} and shared seeds.
// Per-pair failures are recorded, not fatal. Writes one manifest directory
// per run plus summary.csv under out_dir.
AblationReport run_ablation_contextual(const PairedDataset& dataset,
                                       const std::vector<std::uint64_t>& seeds,
                                       const FeatureExtractor& ext, LossWeights weights,
                                       const OptimizerConfig& opt,
                                       const std::string& out_dir);

struct HazeStudyRow {
    std::string method;
    double h = 0.0;
    double e_clean = 0.0;  // E(clean, st(clean, style))
    double e_hazy = 0.0;   // E(clean, st(hazy, style))
};

struct HazeStudyReport {
    std::vector<HazeStudyRow> rows;
    std::string summary_csv_path;
    std::string grid_png_path;
};

// Haze-corruption scores H for a set of stylization functions on one
// (clean, hazy, style) triple. Writes summary.csv and a side-by-side
// grid.png under out_dir.
HazeStudyReport run_haze_corruption_study(
    const Image& clean, const Image& hazy, const Image& style,
    const std::vector<std::pair<std::string, StylizeFn>>& methods,
    const PerceptualErrorBackend& backend, const std::string& out_dir);

// Row-major tiling with black padding; used for report grids.
Image tile_grid(const std::vector<std::vector<Image>>& rows);

std::string csv_quote(const std::string& field);

}  // namespace dilie
