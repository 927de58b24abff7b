#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdml/matrix.hpp"
#include "rdml/optim.hpp"
#include "rdml/rng.hpp"

namespace rdml {

enum class Activation { Relu, Identity };

struct DenseLayer {
    Matrix weight;  // in x out
    Matrix bias;    // 1 x out
    Activation activation = Activation::Relu;

    std::size_t in_dim() const noexcept { return weight.rows(); }
    std::size_t out_dim() const noexcept { return weight.cols(); }
};

/// Dense MLP embedding network; the last layer is linear and the output rows
/// are optionally L2-normalised.
struct EmbeddingModel {
    std::vector<DenseLayer> layers;
    bool normalize_output = true;

    std::size_t input_dim() const noexcept { return layers.empty() ? 0 : layers.front().in_dim(); }
    std::size_t embedding_dim() const noexcept { return layers.empty() ? 0 : layers.back().out_dim(); }
    std::vector<std::size_t> layer_sizes() const;

    /// Throws unless dims chain and the last activation is identity.
    void validate() const;

    /// Mutable views in [w0, b0, w1, b1, ...] order.
    std::vector<ParamRef> params();
    std::size_t param_count() const noexcept;

    /// Order-sensitive hash of every parameter bit; used to detect stale traces.
    std::uint64_t fingerprint() const noexcept;

    friend bool operator==(const EmbeddingModel& a, const EmbeddingModel& b);
};

/// Gradients in the same [w0, b0, w1, b1, ...] order as EmbeddingModel::params.
using ParamGrads = std::vector<Matrix>;

ParamGrads zero_grads(const EmbeddingModel& model);
void accumulate(ParamGrads& into, const ParamGrads& g, double scale = 1.0);

struct ForwardTrace {
    std::vector<Matrix> inputs;          // input to each layer
    std::vector<Matrix> pre_activations; // affine output of each layer
    Matrix raw_output;                   // last layer output before normalisation
    std::vector<double> row_norms;       // filled when the output was normalised
    std::uint64_t model_fingerprint = 0;
};

struct ForwardResult {
    Matrix embeddings;
    ForwardTrace trace;
};

struct BackwardResult {
    ParamGrads param_grads;
    Matrix input_grad;
};

/// He-initialised weights, zero biases, relu on every hidden layer.
EmbeddingModel init_model(const std::vector<std::size_t>& layer_sizes, bool normalize, Rng& rng);

ForwardResult forward(const EmbeddingModel& model, const Matrix& x);

/// Embeddings only; skips the trace.
Matrix embed(const EmbeddingModel& model, const Matrix& x);

BackwardResult backward(const EmbeddingModel& model, const ForwardTrace& trace, const Matrix& grad_out);

nlohmann::json to_json(const EmbeddingModel& model);
EmbeddingModel model_from_json(const nlohmann::json& j);

}  // namespace rdml
