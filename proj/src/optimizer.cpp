#include "lst/optimizer.hpp"

#include <cmath>

namespace lst {

double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm) {
    double sq = 0.0;
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& p : params) {
            if (!p.tensor.has_grad()) continue;
            for (double& g : p.tensor.grad()) g *= s;
        }
    }
    return norm;
}

void Optimizer::zero_grad(std::vector<NamedTensor>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

void Sgd::step(std::vector<NamedTensor>& params) {
    for (auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        auto& v = p.tensor.mutable_values();
        const auto& g = p.tensor.grad();
        for (size_t i = 0; i < v.size(); ++i) v[i] -= lr_ * g[i];
    }
}

void AdamW::step(std::vector<NamedTensor>& params) {
    if (slots_.size() != params.size()) {
        slots_.assign(params.size(), {});
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi].tensor;
        if (!p.has_grad()) continue;
        Slot& s = slots_[pi];
        auto& v = p.mutable_values();
        const auto& g = p.grad();
        if (s.m.empty()) {
            s.m.assign(v.size(), 0.0);
            s.v.assign(v.size(), 0.0);
        }
        for (size_t i = 0; i < v.size(); ++i) {
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            // Decoupled weight decay.
            v[i] -= lr_ * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                           cfg_.weight_decay * v[i]);
        }
    }
}

void AdamW::reset_state() {
    slots_.clear();
    t_ = 0;
}

double StepLrSchedule::lr_at(int64_t step) const {
    return base_lr_ * std::pow(gamma_, static_cast<double>(step / step_size_));
}

double CosineMinLrSchedule::lr_at(int64_t step) const {
    const double min_lr = base_lr_ * min_lr_rate_;
    if (warmup_ > 0 && step < warmup_) {
        return base_lr_ * static_cast<double>(step + 1) / static_cast<double>(warmup_);
    }
    if (total_ <= warmup_) return min_lr;
    const double frac = static_cast<double>(step - warmup_) /
                        static_cast<double>(total_ - warmup_);
    const double clamped = std::min(1.0, std::max(0.0, frac));
    const double cosv = 0.5 * (1.0 + std::cos(M_PI * clamped));
    return min_lr + (base_lr_ - min_lr) * cosv;
}

}  // namespace lst
