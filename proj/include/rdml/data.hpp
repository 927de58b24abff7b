#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdml/losses.hpp"
#include "rdml/matrix.hpp"
#include "rdml/rng.hpp"

namespace rdml {

enum class Role { Train, Test, Unsplit };

/// Affine map applied at load time: scaled = (raw - offset) * scale.
struct ScaleTransform {
    double offset = 0.0;
    double scale = 1.0;
};

struct SyntheticSpec {
    std::size_t n_classes = 16;
    std::size_t per_class = 40;
    std::size_t dim = 20;
    double sigma = 0.03;
    /// Class centres are drawn uniformly from [centre_lo, centre_hi]^m.
    double centre_lo = 0.2;
    double centre_hi = 0.8;
};

struct Dataset {
    Matrix x;                   // n x m, every value in [0, 1]
    std::vector<Label> labels;  // n
    Role role = Role::Unsplit;
    std::optional<ScaleTransform> scaling;
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return x.cols(); }

    /// Sorted distinct class ids.
    std::vector<Label> roster() const;

    /// Throws unless features lie in [0,1], shapes agree, and every class has >= 2 samples.
    void validate() const;

    Dataset subset(std::span<const std::size_t> indices) const;
};

/// Class centres uniform in [centre_lo, centre_hi]^m (default [0.2, 0.8]), pairwise at least 4 sigma apart;
/// samples are centre + N(0, sigma^2) clamped to [0, 1].
Dataset gen_synthetic(const SyntheticSpec& spec, Rng& rng);

/// Partitions classes (not samples) into a train and a test roster.
std::pair<Dataset, Dataset> class_disjoint_split(const Dataset& ds, double train_fraction, Rng& rng);

/// CSV with header f0,...,f{m-1},label.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

/// Sidecar JSON: role, shape, roster, scaling, provenance.
nlohmann::json metadata_json(const Dataset& ds);

const char* to_string(Role role);

}  // namespace rdml
