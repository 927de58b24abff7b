#pragma once

#include <map>
#include <span>
#include <vector>

#include "rdml/matrix.hpp"
#include "rdml/rng.hpp"

namespace rdml {

using Label = int;

struct LossGrad {
    double loss = 0.0;
    Matrix grad;  // d loss / d embeddings
};

struct TripletConfig {
    double margin = 0.2;
};

/// Mean over every valid in-batch (anchor, positive, negative) triple of
/// d(a,p) + max(0, margin - d(a,n)), Euclidean d. Throws ErrorKind::Resample
/// when the batch holds no valid triple.
LossGrad triplet_loss(const Matrix& embeddings, std::span<const Label> labels, const TripletConfig& cfg);

/// One learnable proxy per training class.
struct ProxySet {
    Matrix proxies;                    // classes x d
    std::map<Label, std::size_t> index; // class id -> proxy row
    double scale = 32.0;               // alpha
    double margin = 0.1;

    std::size_t size() const noexcept { return proxies.rows(); }
    std::vector<Label> classes() const;
};

/// Gaussian-initialised proxies for the given class roster.
ProxySet init_proxies(std::span<const Label> classes, std::size_t dim, Rng& rng,
                      double scale = 32.0, double margin = 0.1);

struct PalResult {
    double loss = 0.0;
    Matrix grad;        // d loss / d embeddings
    Matrix proxy_grad;  // d loss / d proxies
};

/// Proxy Anchor loss:
///   1/|P+| sum_{p in P+} softplus(LSE_{x in X_p+} -a(s(x,p) - m))
/// + 1/|P|  sum_{p in P}  softplus(LSE_{x in X_p-}  a(s(x,p) + m))
/// with s the cosine similarity. Empty X_p- terms are dropped.
PalResult pal_loss(const Matrix& embeddings, std::span<const Label> labels, const ProxySet& proxies);

/// Pointwise divergence between embeddings and a constant reference.
enum class DivergenceKind { Cosine, SquaredL2 };

/// Mean over rows of the divergence; Cosine = 1 - cos(e, ref), SquaredL2 =
/// |e - ref|^2. `reference` receives no gradient.
LossGrad embed_divergence(const Matrix& embeddings, const Matrix& reference,
                          DivergenceKind kind = DivergenceKind::Cosine);

/// Per-row divergence values (no gradient).
std::vector<double> row_divergence(const Matrix& embeddings, const Matrix& reference,
                                   DivergenceKind kind = DivergenceKind::Cosine);

double softplus(double x) noexcept;

}  // namespace rdml
