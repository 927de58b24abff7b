#pragma once

#include <vector>

#include "rdml/embedder.hpp"
#include "rdml/losses.hpp"

namespace rdml {

/// N embedding models, their proxies, and the training-sample indices each
/// member was trained on (the full set unless the ensemble-split is active).
struct Ensemble {
    std::vector<EmbeddingModel> models;
    std::vector<ProxySet> proxies;
    std::vector<std::vector<std::size_t>> assignments;
    /// Split parts when trained with the data split; empty otherwise.
    std::vector<std::vector<std::size_t>> parts;
    std::vector<Label> train_classes;

    std::size_t size() const noexcept { return models.size(); }
    bool normalized() const noexcept { return !models.empty() && models.front().normalize_output; }
};

}  // namespace rdml
