#include "rdml/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "rdml/error.hpp"

namespace rdml {

const char* to_string(DefenseKind kind) {
    switch (kind) {
        case DefenseKind::None: return "none";
        case DefenseKind::At: return "at";
        case DefenseKind::Mixup: return "mixup";
        case DefenseKind::Iat: return "iat";
        case DefenseKind::Trades: return "trades";
        case DefenseKind::NaiveEnsemble: return "naive_ensemble";
        case DefenseKind::Eat: return "eat";
    }
    return "none";
}

DefenseKind parse_defense(const std::string& name) {
    for (auto k : {DefenseKind::None, DefenseKind::At, DefenseKind::Mixup, DefenseKind::Iat,
                   DefenseKind::Trades, DefenseKind::NaiveEnsemble, DefenseKind::Eat})
        if (name == to_string(k)) return k;
    fail(ErrorKind::Config, "unknown defense '" + name +
                                "' (expected none, at, mixup, iat, trades, naive_ensemble or eat)");
}

const char* to_string(LossKind kind) { return kind == LossKind::Pal ? "pal" : "triplet"; }

std::vector<std::size_t> ModelSpec::layer_sizes(std::size_t input_dim) const {
    std::vector<std::size_t> sizes{input_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(embedding_dim);
    return sizes;
}

void TrainConfig::validate() const {
    require(epochs >= 1, ErrorKind::Config, "train.epochs must be >= 1");
    require(beta >= 0.0 && beta <= 1.0, ErrorKind::Config, "train.beta must lie in [0, 1]");
    require(n_models >= 1, ErrorKind::Config, "train.n_models must be >= 1");
    require(batch_classes >= 2, ErrorKind::Config, "train.batch_classes must be >= 2");
    require(samples_per_class >= 2, ErrorKind::Config, "train.samples_per_class must be >= 2");
    require(lr > 0.0 && std::isfinite(lr), ErrorKind::Config, "train.lr must be positive");
    require(weight_decay >= 0.0, ErrorKind::Config, "train.weight_decay must be >= 0");
    require(proxy_lr_scale > 0.0, ErrorKind::Config, "train.proxy_lr_scale must be positive");
    require(mixup_alpha > 0.0, ErrorKind::Config, "train.mixup_alpha must be positive");
    require(trades_lambda >= 0.0, ErrorKind::Config, "train.trades_lambda must be >= 0");
    require(lr_decay > 0.0 && lr_decay <= 1.0, ErrorKind::Config, "train.lr_decay must lie in (0, 1]");
    require(lr_decay_every >= 1, ErrorKind::Config, "train.lr_decay_every must be >= 1");
    require(!(defense == DefenseKind::Eat && eat_split && n_models < 2), ErrorKind::Config,
            "train: the ensemble data split needs n_models >= 2 (each model drops one part)");
}

std::size_t TrainConfig::ensemble_size() const {
    return defense == DefenseKind::Eat || defense == DefenseKind::NaiveEnsemble ? n_models : 1;
}

Member init_member(const Dataset& train, const ModelSpec& spec, const TrainConfig& cfg,
                   std::size_t index, const Rng& rng) {
    Member m;
    Rng init_rng = rng.derive("train.init", index);
    m.model = init_model(spec.layer_sizes(train.dim()), spec.normalize, init_rng);
    Rng proxy_rng = rng.derive("train.proxies", index);
    const auto classes = train.roster();
    m.proxies = init_proxies(classes, spec.embedding_dim, proxy_rng, cfg.pal_scale, cfg.pal_margin);
    m.model_opt.lr = cfg.lr;
    m.model_opt.weight_decay = cfg.weight_decay;
    m.proxy_opt.lr = cfg.lr * cfg.proxy_lr_scale;
    m.proxy_opt.weight_decay = 0.0;
    return m;
}

namespace {

LossTerm zero_term(const Member& m) {
    return {0.0, zero_grads(m.model), Matrix(m.proxies.proxies.rows(), m.proxies.proxies.cols())};
}

void add_term(LossTerm& into, const LossTerm& t, double w) {
    into.loss += w * t.loss;
    accumulate(into.model_grads, t.model_grads, w);
    for (std::size_t i = 0; i < into.proxy_grad.size(); ++i)
        into.proxy_grad.data()[i] += w * t.proxy_grad.data()[i];
}

// mean_i |F(x_i) - target_i|^2 with the target held constant
LossTerm consistency_term(const Member& m, const Matrix& x, const Matrix& target) {
    auto fwd = forward(m.model, x);
    auto div = embed_divergence(fwd.embeddings, target, DivergenceKind::SquaredL2);
    LossTerm t = zero_term(m);
    t.loss = div.loss;
    t.model_grads = backward(m.model, fwd.trace, div.grad).param_grads;
    return t;
}

struct Mix {
    double lambda = 1.0;
    std::vector<std::size_t> perm;
};

Matrix mix_rows(const Matrix& x, const Mix& mix) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c)
            out(r, c) = mix.lambda * x(r, c) + (1.0 - mix.lambda) * x(mix.perm[r], c);
    return out;
}

// Loss of a mixed batch: pull towards the frozen mixed embedding of the
// clean pair, or the metric loss under the dominant component's label.
LossTerm mixed_term(const Member& m, const Matrix& x_mixed, const Matrix& mixed_target,
                    std::span<const Label> labels, const Mix& mix, const TrainConfig& cfg) {
    if (cfg.mixup_target == MixupTarget::Consistency) return consistency_term(m, x_mixed, mixed_target);
    std::vector<Label> dominant(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        dominant[i] = mix.lambda >= 0.5 ? labels[i] : labels[mix.perm[i]];
    return metric_term(m, x_mixed, dominant, cfg);
}

void check_batch(std::span<const Label> labels) {
    std::set<Label> distinct(labels.begin(), labels.end());
    require(distinct.size() >= 2, ErrorKind::Resample,
            "defense_loss: batch holds a single class; resample");
}

}  // namespace

LossTerm metric_term(const Member& m, const Matrix& x, std::span<const Label> labels, const TrainConfig& cfg) {
    auto fwd = forward(m.model, x);
    LossTerm t = zero_term(m);
    Matrix grad;
    if (cfg.loss == LossKind::Pal) {
        auto pal = pal_loss(fwd.embeddings, labels, m.proxies);
        t.loss = pal.loss;
        t.proxy_grad = std::move(pal.proxy_grad);
        grad = std::move(pal.grad);
    } else {
        auto trip = triplet_loss(fwd.embeddings, labels, cfg.triplet);
        t.loss = trip.loss;
        grad = std::move(trip.grad);
    }
    t.model_grads = backward(m.model, fwd.trace, grad).param_grads;
    return t;
}

LossTerm blend(const LossTerm& ml, const LossTerm& adv, double beta) {
    LossTerm t;
    t.loss = beta * ml.loss + (1.0 - beta) * adv.loss;
    t.model_grads = ml.model_grads;
    for (auto& g : t.model_grads) g *= beta;
    accumulate(t.model_grads, adv.model_grads, 1.0 - beta);
    t.proxy_grad = ml.proxy_grad * beta;
    t.proxy_grad += adv.proxy_grad * (1.0 - beta);
    return t;
}

LossTerm defense_loss(DefenseKind kind, const Member& m, const Matrix& x, std::span<const Label> labels,
                      const TrainConfig& cfg, Rng& rng) {
    check_batch(labels);
    switch (kind) {
        case DefenseKind::None:
        case DefenseKind::NaiveEnsemble:
            return metric_term(m, x, labels, cfg);

        case DefenseKind::At: {
            const Matrix adv = pgd_single(m.model, x, cfg.attack).adversarial;
            return metric_term(m, adv, labels, cfg);
        }

        case DefenseKind::Mixup:
        case DefenseKind::Iat: {
            Mix mix;
            mix.lambda = sample_beta(rng, cfg.mixup_alpha);
            mix.perm = rng.permutation(x.rows());
            const Matrix clean_emb = embed(m.model, x);
            const Matrix target = mix_rows(clean_emb, mix);

            LossTerm total = metric_term(m, x, labels, cfg);
            add_term(total, mixed_term(m, mix_rows(x, mix), target, labels, mix, cfg), 1.0);
            if (kind == DefenseKind::Iat) {
                const Matrix adv = pgd_single(m.model, x, cfg.attack).adversarial;
                add_term(total, metric_term(m, adv, labels, cfg), 1.0);
                add_term(total, mixed_term(m, mix_rows(adv, mix), target, labels, mix, cfg), 1.0);
            }
            return total;
        }

        case DefenseKind::Trades: {
            LossTerm total = metric_term(m, x, labels, cfg);
            const Matrix reference = embed(m.model, x);
            const Matrix adv = pgd_single(m.model, x, cfg.attack).adversarial;
            auto fwd = forward(m.model, adv);
            auto div = embed_divergence(fwd.embeddings, reference, cfg.attack.divergence);
            LossTerm robust = zero_term(m);
            robust.loss = div.loss;
            robust.model_grads = backward(m.model, fwd.trace, div.grad).param_grads;
            add_term(total, robust, cfg.trades_lambda);
            return total;
        }

        case DefenseKind::Eat:
            fail(ErrorKind::InvalidArgument, "defense_loss: eat needs the whole ensemble; use eat_loss");
    }
    fail(ErrorKind::InvalidArgument, "defense_loss: unknown defense");
}

EatLoss eat_loss(const Member& m, const Matrix& x, std::span<const Label> labels,
                 std::span<const EmbeddingModel> attack_models, const TrainConfig& cfg) {
    check_batch(labels);
    EatLoss out;
    out.clean = metric_term(m, x, labels, cfg);
    if (cfg.beta == 1.0) {
        out.adversarial = zero_term(m);
        out.total = out.clean;
        return out;
    }
    const Matrix adv = gen(x, attack_models, cfg.attack).adversarial;
    out.adversarial = metric_term(m, adv, labels, cfg);
    out.total = blend(out.clean, out.adversarial, cfg.beta);
    return out;
}

std::vector<std::vector<std::size_t>> split_dataset(std::span<const std::size_t> indices, std::size_t n,
                                                    Rng& rng) {
    require(n >= 1, ErrorKind::InvalidArgument, "split_dataset: need at least one part");
    require(!indices.empty(), ErrorKind::InvalidArgument, "split_dataset: no samples");
    require(n <= indices.size(), ErrorKind::InvalidArgument,
            "split_dataset: " + std::to_string(n) + " parts for " + std::to_string(indices.size()) +
                " samples");
    std::vector<std::size_t> shuffled(indices.begin(), indices.end());
    rng.shuffle(shuffled);
    std::vector<std::vector<std::size_t>> parts(n);
    const std::size_t base = shuffled.size() / n;
    const std::size_t extra = shuffled.size() % n;
    std::size_t pos = 0;
    for (std::size_t p = 0; p < n; ++p) {
        const std::size_t len = base + (p < extra ? 1 : 0);
        parts[p].assign(shuffled.begin() + static_cast<std::ptrdiff_t>(pos),
                        shuffled.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    return parts;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const Label> labels,
                                                   std::span<const std::size_t> indices,
                                                   const TrainConfig& cfg, Rng& rng) {
    std::map<Label, std::vector<std::size_t>> by_class;
    for (std::size_t i : indices) by_class[labels[i]].push_back(i);
    require(by_class.size() >= 2, ErrorKind::InvalidArgument,
            "make_batches: training subset holds fewer than two classes");

    struct Chunk {
        Label label;
        std::vector<std::size_t> rows;
    };
    std::vector<Chunk> chunks;
    for (auto& [label, rows] : by_class) {
        rng.shuffle(rows);
        const std::size_t k = cfg.samples_per_class;
        for (std::size_t pos = 0; pos < rows.size(); pos += k) {
            const std::size_t end = std::min(rows.size(), pos + k);
            if (end - pos < 2 && !chunks.empty() && chunks.back().label == label) {
                chunks.back().rows.insert(chunks.back().rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(pos),
                                          rows.begin() + static_cast<std::ptrdiff_t>(end));
                continue;
            }
            chunks.push_back({label, {rows.begin() + static_cast<std::ptrdiff_t>(pos),
                                      rows.begin() + static_cast<std::ptrdiff_t>(end)}});
        }
    }
    rng.shuffle(chunks);

    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::set<Label>> batch_classes;
    for (std::size_t c = 0; c < chunks.size(); c += cfg.batch_classes) {
        std::vector<std::size_t> batch;
        std::set<Label> present;
        for (std::size_t j = c; j < std::min(chunks.size(), c + cfg.batch_classes); ++j) {
            batch.insert(batch.end(), chunks[j].rows.begin(), chunks[j].rows.end());
            present.insert(chunks[j].label);
        }
        batches.push_back(std::move(batch));
        batch_classes.push_back(std::move(present));
    }
    // Fold single-class batches into a neighbour so every batch has negatives.
    for (std::size_t b = 0; b < batches.size();) {
        if (batch_classes[b].size() >= 2 || batches.size() == 1) {
            ++b;
            continue;
        }
        const std::size_t into = b > 0 ? b - 1 : b + 1;
        batches[into].insert(batches[into].end(), batches[b].begin(), batches[b].end());
        batch_classes[into].insert(batch_classes[b].begin(), batch_classes[b].end());
        batches.erase(batches.begin() + static_cast<std::ptrdiff_t>(b));
        batch_classes.erase(batch_classes.begin() + static_cast<std::ptrdiff_t>(b));
        if (b > 0) --b;
    }
    return batches;
}

namespace {

void apply_update(Member& m, const LossTerm& t, double lr, const TrainConfig& cfg) {
    m.model_opt.lr = lr;
    auto params = m.model.params();
    adamw_step(params, t.model_grads, m.model_opt);
    if (cfg.loss == LossKind::Pal) {
        m.proxy_opt.lr = lr * cfg.proxy_lr_scale;
        const ParamRef proxy{"proxies", &m.proxies.proxies};
        adamw_step(std::span<const ParamRef>(&proxy, 1), std::span<const Matrix>(&t.proxy_grad, 1), m.proxy_opt);
    }
}

void check_finite(const LossTerm& t, std::size_t epoch, std::size_t model, std::size_t batch) {
    bool ok = std::isfinite(t.loss) && t.proxy_grad.all_finite();
    for (const auto& g : t.model_grads) ok = ok && g.all_finite();
    require(ok, ErrorKind::NumericFailure,
            "training diverged: non-finite loss or gradient at epoch " + std::to_string(epoch) +
                ", model " + std::to_string(model) + ", batch " + std::to_string(batch) +
                " (loss = " + std::to_string(t.loss) + ")");
}

Rng batch_rng(const Rng& rng, std::size_t member, std::size_t epoch) {
    return rng.derive("train.batches", member).derive("epoch", epoch);
}

Matrix batch_rows(const Dataset& ds, std::span<const std::size_t> idx, std::vector<Label>& labels) {
    labels.clear();
    for (std::size_t i : idx) labels.push_back(ds.labels[i]);
    return ds.x.gather_rows(idx);
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
}

}  // namespace

void train_member(Member& member, std::size_t member_index, const Dataset& train,
                  std::span<const std::size_t> indices, DefenseKind kind, const TrainConfig& cfg,
                  const Rng& rng, std::vector<EpochLog>* log) {
    std::vector<Label> labels;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg.schedule(), epoch);
        Rng brng = batch_rng(rng, member_index, epoch);
        const auto batches = make_batches(train.labels, indices, cfg, brng);
        Rng drng = rng.derive("train.defense", member_index).derive("epoch", epoch);
        double sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const Matrix x = batch_rows(train, batches[b], labels);
            const LossTerm t = defense_loss(kind, member, x, labels, cfg, drng);
            check_finite(t, epoch, member_index, b);
            apply_update(member, t, lr, cfg);
            sum += t.loss;
        }
        if (log) log->push_back({epoch, member_index, lr, sum / static_cast<double>(batches.size()), batches.size()});
    }
}

TrainResult train(const Dataset& train, const ModelSpec& spec, const TrainConfig& cfg, const Rng& rng,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    train.validate();
    require(train.roster().size() >= 2, ErrorKind::InvalidArgument, "train: need at least two training classes");

    const std::size_t n_models = cfg.ensemble_size();
    const auto everything = all_indices(train.size());

    TrainResult res;
    Ensemble& ens = res.ensemble;
    ens.train_classes = train.roster();
    if (cfg.defense == DefenseKind::Eat && cfg.eat_split) {
        Rng split_rng = rng.derive("train.split");
        ens.parts = split_dataset(everything, n_models, split_rng);
        for (std::size_t i = 0; i < n_models; ++i) {
            std::vector<std::size_t> assign;
            for (std::size_t p = 0; p < n_models; ++p)
                if (p != i) assign.insert(assign.end(), ens.parts[p].begin(), ens.parts[p].end());
            std::sort(assign.begin(), assign.end());
            ens.assignments.push_back(std::move(assign));
        }
    } else {
        ens.assignments.assign(n_models, everything);
    }

    std::vector<Member> members;
    for (std::size_t i = 0; i < n_models; ++i) members.push_back(init_member(train, spec, cfg, i, rng));

    if (cfg.defense != DefenseKind::Eat) {
        for (std::size_t i = 0; i < n_models; ++i) {
            std::vector<EpochLog> log;
            train_member(members[i], i, train, ens.assignments[i], cfg.defense, cfg, rng, &log);
            for (const auto& e : log) {
                if (on_epoch) on_epoch(e);
                res.log.push_back(e);
            }
        }
    } else {
        // Lock-step rounds: every round snapshots all members, then each member
        // takes one step on its own next batch with adversarial rows generated
        // against the snapshot.
        std::vector<Label> labels;
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            const double lr = lr_at(cfg.schedule(), epoch);
            std::vector<std::vector<std::vector<std::size_t>>> batches(n_models);
            std::size_t rounds = 0;
            for (std::size_t i = 0; i < n_models; ++i) {
                Rng brng = batch_rng(rng, i, epoch);
                batches[i] = make_batches(train.labels, ens.assignments[i], cfg, brng);
                rounds = std::max(rounds, batches[i].size());
            }
            std::vector<double> sums(n_models, 0.0);
            std::vector<EmbeddingModel> snapshot;
            for (std::size_t b = 0; b < rounds; ++b) {
                snapshot.clear();
                for (const auto& m : members) snapshot.push_back(m.model);
                for (std::size_t i = 0; i < n_models; ++i) {
                    if (b >= batches[i].size()) continue;
                    const Matrix x = batch_rows(train, batches[i][b], labels);
                    const EatLoss l = eat_loss(members[i], x, labels, snapshot, cfg);
                    check_finite(l.total, epoch, i, b);
                    apply_update(members[i], l.total, lr, cfg);
                    sums[i] += l.total.loss;
                }
            }
            for (std::size_t i = 0; i < n_models; ++i) {
                const EpochLog e{epoch, i, lr, sums[i] / static_cast<double>(batches[i].size()), batches[i].size()};
                if (on_epoch) on_epoch(e);
                res.log.push_back(e);
            }
        }
    }

    for (auto& m : members) {
        ens.models.push_back(std::move(m.model));
        ens.proxies.push_back(std::move(m.proxies));
    }
    return res;
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"defense", to_string(cfg.defense)},
            {"epochs", cfg.epochs},
            {"batch_classes", cfg.batch_classes},
            {"samples_per_class", cfg.samples_per_class},
            {"lr", cfg.lr},
            {"lr_decay", cfg.lr_decay},
            {"lr_decay_every", cfg.lr_decay_every},
            {"weight_decay", cfg.weight_decay},
            {"proxy_lr_scale", cfg.proxy_lr_scale},
            {"beta", cfg.beta},
            {"mixup_alpha", cfg.mixup_alpha},
            {"mixup_target", cfg.mixup_target == MixupTarget::Consistency ? "consistency" : "relabel"},
            {"trades_lambda", cfg.trades_lambda},
            {"n_models", cfg.n_models},
            {"eat_split", cfg.eat_split},
            {"loss", to_string(cfg.loss)},
            {"pal_scale", cfg.pal_scale},
            {"pal_margin", cfg.pal_margin},
            {"triplet_margin", cfg.triplet.margin},
            {"attack", {{"epsilon", cfg.attack.epsilon},
                        {"steps", cfg.attack.steps},
                        {"step_size", cfg.attack.step_size},
                        {"random_start", cfg.attack.random_start}}}};
}

nlohmann::json to_json(const ModelSpec& spec) {
    return {{"hidden", spec.hidden}, {"embedding_dim", spec.embedding_dim}, {"normalize", spec.normalize}};
}

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    require(out.good(), ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << j.dump(1) << '\n';
    require(out.good(), ErrorKind::Io, "write to '" + path.string() + "' failed");
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Io, "cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, path.string() + ": " + e.what());
    }
}

}  // namespace

void save_checkpoint(const std::string& dir, const Ensemble& ens, const nlohmann::json& config_echo) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t i = 0; i < ens.size(); ++i) {
        const std::string model_file = "model_" + std::to_string(i) + ".json";
        const std::string proxy_file = "proxies_" + std::to_string(i) + ".json";
        write_json(fs::path(dir) / model_file, to_json(ens.models[i]));
        const auto& ps = ens.proxies[i];
        write_json(fs::path(dir) / proxy_file, {{"classes", ps.classes()},
                                                {"rows", ps.proxies.rows()},
                                                {"cols", ps.proxies.cols()},
                                                {"scale", ps.scale},
                                                {"margin", ps.margin},
                                                {"proxies", ps.proxies.data()}});
        files.push_back({{"model", model_file}, {"proxies", proxy_file}, {"assignment", ens.assignments[i]}});
    }
    write_json(fs::path(dir) / "manifest.json", {{"format", "rdml-ensemble/1"},
                                                 {"n_models", ens.size()},
                                                 {"train_classes", ens.train_classes},
                                                 {"parts", ens.parts},
                                                 {"members", files},
                                                 {"config", config_echo}});
}

Ensemble load_checkpoint(const std::string& dir, nlohmann::json* manifest_out) {
    namespace fs = std::filesystem;
    const auto manifest = read_json(fs::path(dir) / "manifest.json");
    try {
        require(manifest.at("format") == "rdml-ensemble/1", ErrorKind::Config,
                dir + ": unsupported checkpoint format");
        Ensemble ens;
        ens.train_classes = manifest.at("train_classes").get<std::vector<Label>>();
        ens.parts = manifest.at("parts").get<std::vector<std::vector<std::size_t>>>();
        for (const auto& member : manifest.at("members")) {
            ens.models.push_back(model_from_json(read_json(fs::path(dir) / member.at("model").get<std::string>())));
            const auto pj = read_json(fs::path(dir) / member.at("proxies").get<std::string>());
            ProxySet ps;
            ps.scale = pj.at("scale").get<double>();
            ps.margin = pj.at("margin").get<double>();
            ps.proxies = Matrix(pj.at("rows").get<std::size_t>(), pj.at("cols").get<std::size_t>(),
                                pj.at("proxies").get<std::vector<double>>());
            const auto classes = pj.at("classes").get<std::vector<Label>>();
            require(classes.size() == ps.proxies.rows(), ErrorKind::Config, dir + ": proxy roster mismatch");
            for (std::size_t r = 0; r < classes.size(); ++r) ps.index[classes[r]] = r;
            ens.proxies.push_back(std::move(ps));
            ens.assignments.push_back(member.at("assignment").get<std::vector<std::size_t>>());
        }
        require(ens.size() == manifest.at("n_models").get<std::size_t>(), ErrorKind::Config,
                dir + ": manifest member count mismatch");
        if (manifest_out) *manifest_out = manifest;
        return ens;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, dir + "/manifest.json: " + e.what());
    }
}

}  // namespace rdml
