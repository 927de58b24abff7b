#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdml/attacks.hpp"
#include "rdml/data.hpp"
#include "rdml/ensemble.hpp"
#include "rdml/matrix.hpp"
#include "rdml/rng.hpp"

namespace rdml {

enum class Distance { Cosine, Euclidean };

double distance(std::span<const double> a, std::span<const double> b, Distance metric);

struct ClusterAssignment {
    std::vector<std::size_t> cluster;
    std::size_t k = 0;
    double inertia = 0.0;
};

/// k-means++ seeding then Lloyd iterations until every centroid moves less
/// than 1e-6 or 100 iterations pass. Empty clusters take the point farthest
/// from its centroid.
ClusterAssignment kmeans(const Matrix& points, std::size_t k, Rng& rng);

/// 2 I(classes, clusters) / (H(classes) + H(clusters)), natural log; 1.0 when
/// both partitions are a single block.
double nmi(std::span<const std::size_t> clusters, std::span<const Label> labels);

/// 2TP / (2TP + FN + FP) over unordered sample pairs.
double pairwise_f1(std::span<const std::size_t> clusters, std::span<const Label> labels);

/// Indices of all other rows ordered by (distance, index).
std::vector<std::size_t> neighbor_order(const Matrix& e, std::size_t query, Distance metric);

/// Fraction of queries with a same-class row among their k nearest neighbours.
double recall_at_k(const Matrix& e, std::span<const Label> labels, std::size_t k, Distance metric);

struct VoteResult {
    std::vector<Label> predicted;
    /// k -> per-query hit flag of the fused top-k list.
    std::map<std::size_t, std::vector<bool>> hits;

    double accuracy(std::span<const Label> labels) const;
    double recall(std::size_t k) const;
};

/// Each model votes the class of its own nearest neighbour; the majority
/// wins, ties going to the lower mean first-occurrence rank, then the lower
/// label. Fused top-k ranks candidate rows by how many models put them in
/// their top-k, then by mean rank.
VoteResult vote_predict(std::span<const Matrix> per_model, std::span<const Label> labels,
                        std::span<const std::size_t> ks, Distance metric);

enum class EvalMode { Clean, Attacked };

struct MetricsReport {
    EvalMode mode = EvalMode::Clean;
    double nmi = 0.0;
    double f1 = 0.0;
    double vote_accuracy = 0.0;
    std::map<std::size_t, double> recall_at;
    std::size_t n_models = 0;
    std::size_t n_samples = 0;
    std::optional<AttackConfig> attack;
    std::uint64_t seed = 0;
};

/// Clustering-based evaluation of a model set on a class-disjoint test set.
/// With an attack every test row is perturbed by gen() against all models.
MetricsReport evaluate(const Ensemble& ensemble, const Dataset& test,
                       const std::optional<AttackConfig>& attack, std::span<const std::size_t> ks,
                       std::uint64_t seed);

nlohmann::json to_json(const AttackConfig& cfg);
AttackConfig attack_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetricsReport& report);

/// Stable CSV layout: mode,n_models,n_samples,epsilon,steps,step_size,nmi,f1,vote_accuracy,recall_at_<k>...
std::string csv_header(std::span<const std::size_t> ks);
std::string csv_row(const MetricsReport& report);

const char* to_string(EvalMode mode);

}  // namespace rdml
