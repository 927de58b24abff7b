#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rdml/matrix.hpp"

namespace rdml {

/// A named, mutable view of one trainable tensor.
struct ParamRef {
    std::string name;
    Matrix* value = nullptr;
};

/// AdamW hyper-parameters plus the per-parameter moment buffers. Moments are
/// allocated lazily on the first step so one state can follow any parameter
/// list; after that the shapes are pinned.
struct OptimizerState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::uint64_t step = 0;
};

/// One AdamW update: bias-corrected Adam step on `grads`, plus decay of
/// lr * weight_decay * param kept out of the moment estimates.
void adamw_step(std::span<const ParamRef> params, std::span<const Matrix> grads,
                OptimizerState& state);

/// Step decay: initial * factor^(epoch / interval).
struct LrSchedule {
    double initial = 1e-4;
    double factor = 0.5;
    std::uint64_t interval = 50;
};

double lr_at(const LrSchedule& schedule, std::uint64_t epoch);

/// Central-difference gradient of a scalar function, one entry at a time.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                        double h = 1e-5);

/// max_ij |a - b| / max(|a|, |b|, floor).
double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-8);

}  // namespace rdml
