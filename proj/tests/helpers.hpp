#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "rdml/embedder.hpp"
#include "rdml/matrix.hpp"
#include "rdml/optim.hpp"
#include "rdml/rng.hpp"

namespace testing {

inline rdml::Matrix random_matrix(std::size_t r, std::size_t c, rdml::Rng& rng, double lo = -1.0, double hi = 1.0) {
    rdml::Matrix m(r, c);
    for (double& v : m.data()) v = rng.uniform(lo, hi);
    return m;
}

/// Flattens every parameter of a model into one row so finite differences can
/// walk it.
inline rdml::Matrix flatten(const rdml::EmbeddingModel& model) {
    std::vector<double> flat;
    for (const auto& layer : model.layers) {
        flat.insert(flat.end(), layer.weight.data().begin(), layer.weight.data().end());
        flat.insert(flat.end(), layer.bias.data().begin(), layer.bias.data().end());
    }
    return rdml::Matrix(1, flat.size(), flat);
}

inline rdml::EmbeddingModel unflatten(rdml::EmbeddingModel model, const rdml::Matrix& flat) {
    std::size_t at = 0;
    for (auto& layer : model.layers) {
        for (double& v : layer.weight.data()) v = flat.data()[at++];
        for (double& v : layer.bias.data()) v = flat.data()[at++];
    }
    return model;
}

inline rdml::Matrix flatten(const rdml::ParamGrads& grads) {
    std::vector<double> flat;
    for (const auto& g : grads) flat.insert(flat.end(), g.data().begin(), g.data().end());
    return rdml::Matrix(1, flat.size(), flat);
}

/// Relative error of an analytic gradient against central differences, with
/// a 1e-8 floor so entries that should be zero compare absolutely.
inline double rel_err(const rdml::Matrix& a, const rdml::Matrix& n) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({std::abs(a.data()[i]), std::abs(n.data()[i]), 1e-8});
        worst = std::max(worst, std::abs(a.data()[i] - n.data()[i]) / scale);
    }
    return worst;
}

/// Central differences at h and h/2 combined to cancel the h^2 term, which
/// allows a step large enough to keep round-off well below 1e-8.
inline rdml::Matrix richardson_grad(const std::function<double(const rdml::Matrix&)>& f, const rdml::Matrix& x,
                                    double h = 1e-3) {
    const rdml::Matrix coarse = rdml::finite_diff_grad(f, x, h);
    const rdml::Matrix fine = rdml::finite_diff_grad(f, x, h / 2.0);
    return (fine * 4.0 - coarse) * (1.0 / 3.0);
}

/// Smallest |pre-activation| over the hidden layers. Finite differences with
/// step h are only meaningful when no ReLU sits within reach of its kink.
inline double kink_margin(const rdml::EmbeddingModel& model, const rdml::Matrix& x) {
    const auto fwd = rdml::forward(model, x);
    double m = INFINITY;
    for (std::size_t l = 0; l + 1 < fwd.trace.pre_activations.size(); ++l)
        for (double v : fwd.trace.pre_activations[l].data()) m = std::min(m, std::abs(v));
    return m;
}

inline double norm_rel_err(const rdml::Matrix& a, const rdml::Matrix& n) {
    return rdml::frobenius_norm(a - n) / std::max(rdml::frobenius_norm(n), 1e-300);
}

}  // namespace testing
