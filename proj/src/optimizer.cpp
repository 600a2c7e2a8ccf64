#include "dilie/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "dilie/errors.hpp"

namespace dilie {

void OptimizerConfig::validate() const {
    if (iterations < 1) throw ArgumentError("OptimizerConfig: iterations must be >= 1");
    if (!(step_size > 0.0) || !std::isfinite(step_size))
        throw ArgumentError("OptimizerConfig: step_size must be finite and > 0");
    if (jitter_sigma < 0.0) throw ArgumentError("OptimizerConfig: jitter_sigma must be >= 0");
    if (log_every < 1) throw ArgumentError("OptimizerConfig: log_every must be >= 1");
}

Adam::Adam(double step_size, double beta1, double beta2, double eps)
    : lr_(step_size), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size())
        throw std::invalid_argument("Adam::step: parameter/gradient count mismatch");
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->numel(), 0.0);
            v_[i].assign(params[i]->numel(), 0.0);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, double(t_));
    const double bc2 = 1.0 - std::pow(b2_, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
            v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
            p[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
        }
    }
}

void EarlyStopState::validate() const {
    if (patience < 1) throw ArgumentError("EarlyStopState: patience must be >= 1");
    if (window < 1) throw ArgumentError("EarlyStopState: window must be >= 1");
    if (!(ema_alpha > 0.0) || !(ema_alpha < 1.0))
        throw ArgumentError("EarlyStopState: ema_alpha must be in (0, 1)");
}

bool EarlyStopState::observe(int iter, double loss) {
    ema = std::isnan(ema) ? loss : ema_alpha * ema + (1.0 - ema_alpha) * loss;
    if (iter % window != 0) return false;
    if (ema < best_smoothed_loss * (1.0 - min_rel_improvement) ||
        !std::isfinite(best_smoothed_loss)) {
        best_smoothed_loss = ema;
        best_iter = iter;
        return true;
    }
    return false;
}

bool EarlyStopState::should_stop(int iter) const {
    return iter - best_iter >= patience && best_iter > 0;
}

}  // namespace dilie
