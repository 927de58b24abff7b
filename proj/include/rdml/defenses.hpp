#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdml/attacks.hpp"
#include "rdml/data.hpp"
#include "rdml/embedder.hpp"
#include "rdml/ensemble.hpp"
#include "rdml/losses.hpp"
#include "rdml/optim.hpp"
#include "rdml/rng.hpp"

namespace rdml {

enum class DefenseKind { None, At, Mixup, Iat, Trades, NaiveEnsemble, Eat };
enum class LossKind { Pal, Triplet };
/// How a mixed sample enters training: an L2 pull towards the frozen mixed
/// embedding, or the metric loss with the dominant component's label.
enum class MixupTarget { Consistency, Relabel };

const char* to_string(DefenseKind kind);
DefenseKind parse_defense(const std::string& name);
const char* to_string(LossKind kind);

struct ModelSpec {
    std::vector<std::size_t> hidden{64, 64};
    std::size_t embedding_dim = 16;
    bool normalize = true;

    std::vector<std::size_t> layer_sizes(std::size_t input_dim) const;
};

struct TrainConfig {
    DefenseKind defense = DefenseKind::None;
    std::size_t epochs = 200;
    /// A batch is `batch_classes` class chunks of `samples_per_class` rows.
    std::size_t batch_classes = 4;
    std::size_t samples_per_class = 8;
    double lr = 1e-4;
    double lr_decay = 0.5;
    std::size_t lr_decay_every = 50;
    double weight_decay = 1e-4;
    /// Proxy learning rate = lr * proxy_lr_scale.
    double proxy_lr_scale = 100.0;
    double beta = 0.5;
    double mixup_alpha = 1.0;
    MixupTarget mixup_target = MixupTarget::Consistency;
    double trades_lambda = 1.0;
    std::size_t n_models = 3;
    bool eat_split = true;
    LossKind loss = LossKind::Pal;
    double pal_scale = 32.0;
    double pal_margin = 0.1;
    TripletConfig triplet;
    AttackConfig attack = AttackConfig::pgd(16.0 / 255.0, 10);

    void validate() const;
    LrSchedule schedule() const { return {lr, lr_decay, lr_decay_every}; }
    /// Number of models the defense trains.
    std::size_t ensemble_size() const;
};

/// One model with its proxies and optimiser state.
struct Member {
    EmbeddingModel model;
    ProxySet proxies;
    OptimizerState model_opt;
    OptimizerState proxy_opt;
};

Member init_member(const Dataset& train, const ModelSpec& spec, const TrainConfig& cfg,
                   std::size_t index, const Rng& rng);

struct LossTerm {
    double loss = 0.0;
    ParamGrads model_grads;
    Matrix proxy_grad;
};

/// Metric loss (PAL or triplet) of one model on a batch, with gradients.
LossTerm metric_term(const Member& m, const Matrix& x, std::span<const Label> labels, const TrainConfig& cfg);

/// Training loss of a single-model defense on one batch.
LossTerm defense_loss(DefenseKind kind, const Member& m, const Matrix& x, std::span<const Label> labels,
                      const TrainConfig& cfg, Rng& rng);

/// beta * ml + (1 - beta) * adv, for values and gradients alike.
LossTerm blend(const LossTerm& ml, const LossTerm& adv, double beta);

/// Ensemble adversarial loss of member `m` on a batch; adversarial rows come
/// from gen() against `attack_models`.
struct EatLoss {
    LossTerm clean;
    LossTerm adversarial;
    LossTerm total;
};
EatLoss eat_loss(const Member& m, const Matrix& x, std::span<const Label> labels,
                 std::span<const EmbeddingModel> attack_models, const TrainConfig& cfg);

/// Random permutation cut into n contiguous parts whose sizes differ by <= 1.
std::vector<std::vector<std::size_t>> split_dataset(std::span<const std::size_t> indices, std::size_t n,
                                                    Rng& rng);

/// Class-balanced batches over `indices`: every batch holds >= 2 classes and,
/// where the class has them, >= 2 rows per present class.
std::vector<std::vector<std::size_t>> make_batches(std::span<const Label> labels,
                                                   std::span<const std::size_t> indices,
                                                   const TrainConfig& cfg, Rng& rng);

struct EpochLog {
    std::size_t epoch = 0;
    std::size_t model = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
    std::size_t batches = 0;
};

struct TrainResult {
    Ensemble ensemble;
    std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains one member on `indices` with a single-model defense.
void train_member(Member& member, std::size_t member_index, const Dataset& train,
                  std::span<const std::size_t> indices, DefenseKind kind, const TrainConfig& cfg,
                  const Rng& rng, std::vector<EpochLog>* log = nullptr);

TrainResult train(const Dataset& train, const ModelSpec& spec, const TrainConfig& cfg, const Rng& rng,
                  const EpochCallback& on_epoch = {});

nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const ModelSpec& spec);

/// Checkpoint directory: manifest.json + model_<i>.json + proxies_<i>.json.
void save_checkpoint(const std::string& dir, const Ensemble& ensemble, const nlohmann::json& config_echo);
Ensemble load_checkpoint(const std::string& dir, nlohmann::json* manifest = nullptr);

}  // namespace rdml
