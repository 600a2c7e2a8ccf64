#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "dilie/tensor.hpp"

namespace dilie {

struct OptimizerConfig {
    double step_size = 0.01;
    int iterations = 4000;
    std::uint64_t seed = 0;
    double jitter_sigma = 1.0 / 30.0;
    int log_every = 25;

    void validate() const;
};

// Adaptive-moment first-order updater over a list of parameter tensors.
class Adam {
public:
    explicit Adam(double step_size, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    // Applies one update. Parameter/gradient lists must keep a stable order
    // and shapes across calls.
    void step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads);

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Early stopping on the exponentially smoothed loss. Snapshots are taken at
// `window`-iteration cadence whenever the smoothed loss beats the best seen
// by at least min_rel_improvement (relative); the run stops once `patience`
// iterations pass without such an improvement.
struct EarlyStopState {
    int window = 25;
    double best_smoothed_loss = std::numeric_limits<double>::infinity();
    int patience = 200;
    double ema_alpha = 0.99;
    double min_rel_improvement = 1e-3;

    // runtime fields
    double ema = std::numeric_limits<double>::quiet_NaN();
    int best_iter = 0;
    bool fired = false;

    void validate() const;

    // Feed the raw loss at `iter` (1-based). Returns true when the caller
    // should snapshot the current iterate as the new best.
    bool observe(int iter, double loss);

    // True once patience is exhausted; check after observe().
    bool should_stop(int iter) const;
};

}  // namespace dilie
