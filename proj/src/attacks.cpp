#include "rdml/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "rdml/error.hpp"
#include "rdml/rng.hpp"

namespace rdml {

AttackConfig AttackConfig::pgd(double epsilon, std::size_t steps) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.steps = steps;
    cfg.step_size = steps == 0 ? 0.0 : 2.5 * epsilon / static_cast<double>(steps);
    return cfg;
}

void AttackConfig::validate(std::size_t dim) const {
    require(std::isfinite(epsilon) && epsilon >= 0.0, ErrorKind::InvalidArgument,
            "attack: epsilon must be finite and non-negative");
    require(std::isfinite(step_size) && step_size >= 0.0, ErrorKind::InvalidArgument,
            "attack: step size must be finite and non-negative");
    require(steps == 0 || epsilon == 0.0 || step_size > 0.0, ErrorKind::InvalidArgument,
            "attack: step size must be positive when steps > 0");
    auto check_bounds = [dim](const std::vector<double>& b, const char* name) {
        require(b.size() == 1 || b.size() == dim, ErrorKind::ShapeMismatch,
                std::string("attack: ") + name + " must have 1 or " + std::to_string(dim) + " entries");
    };
    check_bounds(domain_lo, "domain_lo");
    check_bounds(domain_hi, "domain_hi");
    for (std::size_t f = 0; f < dim; ++f)
        require(lo(f) <= hi(f), ErrorKind::InvalidArgument,
                "attack: domain_lo exceeds domain_hi at feature " + std::to_string(f));
}

Matrix project_linf(const Matrix& candidate, const Matrix& clean, const AttackConfig& cfg) {
    require(candidate.same_shape(clean), ErrorKind::ShapeMismatch,
            "project_linf: " + candidate.shape_str() + " vs " + clean.shape_str());
    Matrix out(clean.rows(), clean.cols());
    const double eps = cfg.epsilon;
    for (std::size_t r = 0; r < clean.rows(); ++r)
        for (std::size_t c = 0; c < clean.cols(); ++c) {
            const double delta = std::clamp(candidate(r, c) - clean(r, c), -eps, eps);
            out(r, c) = std::clamp(clean(r, c) + delta, cfg.lo(c), cfg.hi(c));
        }
    return out;
}

namespace {

Matrix starting_point(const Matrix& x, const AttackConfig& cfg) {
    if (!cfg.random_start || cfg.epsilon == 0.0) return x;
    Rng rng = Rng(cfg.seed).derive("attack.random_start");
    Matrix start = x;
    for (auto& v : start.data()) v += rng.uniform(-cfg.epsilon, cfg.epsilon);
    return project_linf(start, x, cfg);
}

void sign_step(Matrix& x_adv, const Matrix& grad, const Matrix& clean, const AttackConfig& cfg) {
    for (std::size_t i = 0; i < x_adv.size(); ++i)
        x_adv.data()[i] += cfg.step_size * sign(grad.data()[i]);
    x_adv = project_linf(x_adv, clean, cfg);
}

}  // namespace

AdversarialBatch pgd_single(const EmbeddingModel& model, const Matrix& x, const AttackConfig& cfg) {
    cfg.validate(x.cols());
    const Matrix reference = embed(model, x);
    Matrix x_adv = starting_point(x, cfg);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        auto fwd = forward(model, x_adv);
        auto div = embed_divergence(fwd.embeddings, reference, cfg.divergence);
        auto back = backward(model, fwd.trace, div.grad);
        sign_step(x_adv, back.input_grad, x, cfg);
    }
    AdversarialBatch out;
    out.divergence = row_divergence(embed(model, x_adv), reference, cfg.divergence);
    out.adversarial = std::move(x_adv);
    out.clean = x;
    return out;
}

AdversarialBatch gen(const Matrix& x, std::span<const EmbeddingModel> models, const AttackConfig& cfg) {
    require(!models.empty(), ErrorKind::InvalidArgument, "gen: ensemble is empty");
    cfg.validate(x.cols());
    std::vector<Matrix> references;
    references.reserve(models.size());
    for (const auto& m : models) references.push_back(embed(m, x));

    Matrix x_adv = starting_point(x, cfg);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        Matrix summed(x.rows(), x.cols());
        for (std::size_t i = 0; i < models.size(); ++i) {
            auto fwd = forward(models[i], x_adv);
            auto div = embed_divergence(fwd.embeddings, references[i], cfg.divergence);
            summed += backward(models[i], fwd.trace, div.grad).input_grad;
        }
        sign_step(x_adv, summed, x, cfg);
    }

    AdversarialBatch out;
    out.divergence.assign(x.rows(), 0.0);
    for (std::size_t i = 0; i < models.size(); ++i) {
        const auto d = row_divergence(embed(models[i], x_adv), references[i], cfg.divergence);
        for (std::size_t r = 0; r < d.size(); ++r) out.divergence[r] += d[r];
    }
    for (auto& d : out.divergence) d /= static_cast<double>(models.size());
    out.adversarial = std::move(x_adv);
    out.clean = x;
    return out;
}

}  // namespace rdml
