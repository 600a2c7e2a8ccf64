#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dilie/features.hpp"
#include "dilie/generators.hpp"
#include "dilie/image.hpp"
#include "dilie/losses.hpp"
#include "dilie/optimizer.hpp"

namespace dilie {

enum class CfeMode { decompose, reconstruct };  // alpha
enum class SfeMode { photo, artistic };         // beta

const char* to_string(CfeMode m);
const char* to_string(SfeMode m);
CfeMode cfe_mode_from_string(const std::string& s);
SfeMode sfe_mode_from_string(const std::string& s);

// Head specs for the decomposition run. The haze head defaults to a
// spatially uniform airlight (three learned logits); flip uniform_airlight
// off to use the full generator given in `haze`.
struct DecomposeSpecs {
    GeneratorSpec clean;
    GeneratorSpec haze;
    GeneratorSpec mask;
    bool uniform_airlight = true;
};
DecomposeSpecs default_decompose_specs();
GeneratorSpec default_reconstruct_spec();  // no skips: the denoising prior

struct LossRow {
    int iter = 0;
    double total = 0.0;
    double ema = 0.0;
    std::map<std::string, double> components;
};

struct StageRecord {
    std::string name;
    std::vector<LossRow> rows;
    std::map<std::string, double> final_losses;
    double wall_time_s = 0.0;
    int iterations_run = 0;
    int early_stop_iter = 0;  // 0 = ran to the cap
    std::uint64_t seed = 0;
};

struct DecompositionResult {
    Image clean;        // I_cfe
    HazeLayer haze;     // H
    TransmissionMap mask;
    Image recomposed;   // compose_haze(clean, haze, mask), bit-for-bit
    std::map<std::string, double> final_losses;
    StageRecord stage;
};

// Per-logged-iteration peek for consistency checks; tensors alias tape
// storage and are only valid during the callback.
struct DecomposeObservation {
    int iter;
    const Tensor& clean;
    const Tensor& haze;   // {3,H,W}
    const Tensor& mask;   // {1,H,W}
    double reported_loss_id;
    double reported_total;
};
using DecomposeObserver = std::function<void(const DecomposeObservation&)>;

// Joint minimization of L_ID + lambda_cl * L_CL over the three heads.
DecompositionResult run_cfe_decompose(const Image& input, const FeatureExtractor& ext,
                                      const DecomposeSpecs& specs, const LossWeights& w,
                                      const OptimizerConfig& opt,
                                      const DecomposeObserver& observer = nullptr);

struct ReconstructResult {
    Image out;  // snapshot at the lowest smoothed loss, not the final iterate
    StageRecord stage;
};

ReconstructResult run_cfe_reconstruct(const Image& input, const GeneratorSpec& spec,
                                      const Transform& transform,
                                      const OptimizerConfig& opt, EarlyStopState stop);

struct SfeResult {
    Image out;
    StageRecord stage;
};

// Pixel-space minimization of L_PE (photo) or L_AE (artistic), initialized
// at icfe. The photo path builds a Matting Laplacian from icfe, at a working
// resolution capped at matting_pixel_cap pixels.
SfeResult run_sfe(const Image& icfe, const Image& style, const FeatureExtractor& ext,
                  SfeMode beta, const LossWeights& w, const OptimizerConfig& opt,
                  int matting_pixel_cap = 512 * 512);

struct DilieOptions {
    CfeMode alpha = CfeMode::decompose;
    SfeMode beta = SfeMode::photo;
    DecomposeSpecs decompose = default_decompose_specs();
    GeneratorSpec reconstruct = default_reconstruct_spec();
    Transform transform;  // identity: denoising
    LossWeights weights;
    OptimizerConfig cfe_opt;  // step 0.01; 4000 iters decompose / 3000 reconstruct
    OptimizerConfig sfe_opt;  // step 0.05; 1000 iters
    EarlyStopState stop;      // reconstruct only
    int matting_pixel_cap = 512 * 512;
};
DilieOptions default_dilie_options(CfeMode alpha, SfeMode beta);

struct RunManifest {
    nlohmann::json config;  // full effective configuration echo
    std::vector<StageRecord> stages;
    std::vector<std::pair<std::string, Image>> images;  // name -> image
    std::map<std::string, Tensor> aux;                  // e.g. the mask plane
    std::map<std::string, double> metrics;
    double wall_time_s = 0.0;
};

struct DilieResult {
    Image istar;
    RunManifest manifest;
};

// The two-stage composition: CFE selected by alpha, then SFE by beta.
DilieResult run_dilie(const Image& input, const Image& style, const FeatureExtractor& ext,
                      const DilieOptions& options);

nlohmann::json manifest_to_json(const RunManifest& m);
std::string losses_csv(const RunManifest& m);
// Writes manifest.json (atomically), losses.csv and all images under dir.
void write_run_directory(const std::string& dir, const RunManifest& m);

}  // namespace dilie
