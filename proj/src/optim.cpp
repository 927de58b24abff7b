#include "rdml/optim.hpp"

#include <algorithm>
#include <cmath>

#include "rdml/error.hpp"

namespace rdml {

void adamw_step(std::span<const ParamRef> params, std::span<const Matrix> grads,
                OptimizerState& state) {
    require(params.size() == grads.size(), ErrorKind::ShapeMismatch,
            "adamw_step: " + std::to_string(params.size()) + " parameters but " +
                std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(params[i].value != nullptr, ErrorKind::InvalidArgument,
                "adamw_step: parameter '" + params[i].name + "' is null");
        require(params[i].value->same_shape(grads[i]), ErrorKind::ShapeMismatch,
                "adamw_step: gradient for '" + params[i].name + "' is " + grads[i].shape_str() +
                    ", parameter is " + params[i].value->shape_str());
    }
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.value->rows(), p.value->cols());
            state.second_moment.emplace_back(p.value->rows(), p.value->cols());
        }
    }
    require(state.first_moment.size() == params.size(), ErrorKind::ShapeMismatch,
            "adamw_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                " parameters, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
        require(state.first_moment[i].same_shape(*params[i].value), ErrorKind::ShapeMismatch,
                "adamw_step: moment shape for '" + params[i].name + "' changed");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    const double decay = state.lr * state.weight_decay;

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].value->data();
        const auto& g = grads[i].data();
        auto& m = state.first_moment[i].data();
        auto& v = state.second_moment[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p[j] = p[j] - state.lr * m_hat / (std::sqrt(v_hat) + state.eps) - decay * p[j];
        }
    }
}

double lr_at(const LrSchedule& schedule, std::uint64_t epoch) {
    const std::uint64_t interval = std::max<std::uint64_t>(schedule.interval, 1);
    return schedule.initial * std::pow(schedule.factor, static_cast<double>(epoch / interval));
}

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x,
                        double h) {
    require(h > 0.0, ErrorKind::InvalidArgument, "finite_diff_grad: step must be positive");
    Matrix grad(x.rows(), x.cols());
    Matrix probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + h;
        const double up = f(probe);
        probe.data()[i] = orig - h;
        const double down = f(probe);
        probe.data()[i] = orig;
        require(std::isfinite(up) && std::isfinite(down), ErrorKind::NumericFailure,
                "finite_diff_grad: non-finite function value at entry " + std::to_string(i));
        grad.data()[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
    require(analytic.same_shape(numeric), ErrorKind::ShapeMismatch,
            "max_relative_error: " + analytic.shape_str() + " vs " + numeric.shape_str());
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic.data()[i];
        const double n = numeric.data()[i];
        const double scale = std::max({std::abs(a), std::abs(n), floor});
        worst = std::max(worst, std::abs(a - n) / scale);
    }
    return worst;
}

}  // namespace rdml
