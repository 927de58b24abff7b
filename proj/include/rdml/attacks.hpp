#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rdml/embedder.hpp"
#include "rdml/losses.hpp"
#include "rdml/matrix.hpp"

namespace rdml {

/// l-infinity PGD settings. Domain bounds hold one value per feature or a
/// single value applied to every feature.
struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    std::size_t steps = 10;
    double step_size = 2.5 * (8.0 / 255.0) / 10.0;
    std::vector<double> domain_lo{0.0};
    std::vector<double> domain_hi{1.0};
    bool random_start = false;
    std::uint64_t seed = 0;
    DivergenceKind divergence = DivergenceKind::Cosine;

    /// Budget and iteration count with step size 2.5 * eps / steps and a [0,1] box.
    static AttackConfig pgd(double epsilon, std::size_t steps);

    double lo(std::size_t feature) const { return domain_lo.size() == 1 ? domain_lo[0] : domain_lo[feature]; }
    double hi(std::size_t feature) const { return domain_hi.size() == 1 ? domain_hi[0] : domain_hi[feature]; }

    void validate(std::size_t dim) const;
};

struct AdversarialBatch {
    Matrix adversarial;
    Matrix clean;
    /// Divergence of each row from its clean embedding, averaged over models.
    std::vector<double> divergence;
};

/// Clamp (candidate - clean) into [-eps, eps], then clamp into the domain box.
Matrix project_linf(const Matrix& candidate, const Matrix& clean, const AttackConfig& cfg);

/// Sign-gradient ascent on embed_divergence(F(x_adv), F(x_clean)) for one model.
AdversarialBatch pgd_single(const EmbeddingModel& model, const Matrix& x, const AttackConfig& cfg);

/// Ensemble PGD: each step follows the sign of the summed input gradients of
/// every model's divergence. Only the last iterate is returned.
AdversarialBatch gen(const Matrix& x, std::span<const EmbeddingModel> models, const AttackConfig& cfg);

/// sgn with sgn(0) == 0.
inline double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace rdml
