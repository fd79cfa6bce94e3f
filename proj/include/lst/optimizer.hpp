#pragma once

#include <string>
#include <vector>

#include "lst/tensor.hpp"

namespace lst {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm);

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::vector<NamedTensor>& params) = 0;
    virtual void reset_state() {}
    void zero_grad(std::vector<NamedTensor>& params);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

protected:
    explicit Optimizer(double lr) : lr_(lr) {}
    double lr_;
};

// Plain gradient descent. Used where optimizer-state effects must be ruled
// out (e.g. zero-advantage update checks).
class Sgd : public Optimizer {
public:
    explicit Sgd(double lr) : Optimizer(lr) {}
    void step(std::vector<NamedTensor>& params) override;
};

class AdamW : public Optimizer {
public:
    struct Config {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    explicit AdamW(const Config& cfg) : Optimizer(cfg.lr), cfg_(cfg) {}
    void step(std::vector<NamedTensor>& params) override;
    void reset_state() override;

private:
    struct Slot {
        std::vector<double> m, v;
    };
    Config cfg_;
    std::vector<Slot> slots_;
    int64_t t_ = 0;
};

// Multiplies lr by gamma every step_size optimizer steps.
class StepLrSchedule {
public:
    StepLrSchedule(double base_lr, double gamma, int step_size)
        : base_lr_(base_lr), gamma_(gamma), step_size_(step_size) {}
    double lr_at(int64_t step) const;
    void reset() {}

private:
    double base_lr_, gamma_;
    int step_size_;
};

// Cosine decay from base_lr to min_lr_rate * base_lr over total_steps, with
// linear warmup.
class CosineMinLrSchedule {
public:
    CosineMinLrSchedule(double base_lr, double min_lr_rate, int64_t warmup_steps,
                        int64_t total_steps)
        : base_lr_(base_lr),
          min_lr_rate_(min_lr_rate),
          warmup_(warmup_steps),
          total_(total_steps) {}
    double lr_at(int64_t step) const;

private:
    double base_lr_, min_lr_rate_;
    int64_t warmup_, total_;
};

}  // namespace lst
