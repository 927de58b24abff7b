#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "rdml/defenses.hpp"
#include "rdml/error.hpp"

using namespace rdml;
namespace fs = std::filesystem;

namespace {

Dataset small_dataset(std::uint64_t seed, std::size_t classes = 3, std::size_t per_class = 4, std::size_t dim = 5) {
    SyntheticSpec spec;
    spec.n_classes = classes;
    spec.per_class = per_class;
    spec.dim = dim;
    Rng rng(seed);
    return gen_synthetic(spec, rng);
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.pal_scale = 4.0;  // moderate scale keeps finite differences accurate
    cfg.attack = AttackConfig::pgd(0.05, 3);
    return cfg;
}

ModelSpec small_spec() {
    ModelSpec s;
    s.hidden = {8};
    s.embedding_dim = 4;
    return s;
}

bool same_grads(const LossTerm& a, const LossTerm& b) {
    return a.loss == b.loss && testing::flatten(a.model_grads) == testing::flatten(b.model_grads) &&
           a.proxy_grad == b.proxy_grad;
}

Member with_params(const Member& m, const Matrix& flat) {
    Member out = m;
    out.model = testing::unflatten(m.model, flat);
    return out;
}

double mean_sq_to(const EmbeddingModel& model, const Matrix& x, const Matrix& target) {
    return embed_divergence(embed(model, x), target, DivergenceKind::SquaredL2).loss;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("split_dataset") {
    std::vector<std::size_t> idx(9);
    for (std::size_t i = 0; i < 9; ++i) idx[i] = i;
    Rng rng(1);

    const auto one = split_dataset(idx, 1, rng);
    REQUIRE(one.size() == 1);
    CHECK(std::set<std::size_t>(one[0].begin(), one[0].end()).size() == 9);

    for (const auto& p : split_dataset(idx, 3, rng)) CHECK(p.size() == 3);

    idx.push_back(9);
    const auto ten = split_dataset(idx, 3, rng);
    CHECK(ten[0].size() == 4);
    CHECK(ten[1].size() == 3);
    CHECK(ten[2].size() == 3);
    std::set<std::size_t> all;
    for (const auto& p : ten) all.insert(p.begin(), p.end());
    CHECK(all.size() == 10);

    CHECK_THROWS_AS(split_dataset(idx, 11, rng), Error);
    CHECK_THROWS_AS(split_dataset(idx, 0, rng), Error);

    Rng a(5), b(5);
    CHECK(split_dataset(idx, 3, a) == split_dataset(idx, 3, b));
}

TEST_CASE("make_batches covers the subset with balanced batches") {
    const Dataset ds = small_dataset(2, 7, 11);
    TrainConfig cfg;
    cfg.batch_classes = 3;
    cfg.samples_per_class = 4;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); i += 1 + (i % 3 == 0)) idx.push_back(i);
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(100 + trial);
        const auto batches = make_batches(ds.labels, idx, cfg, rng);
        std::multiset<std::size_t> seen;
        for (const auto& b : batches) {
            std::map<Label, int> count;
            for (std::size_t i : b) {
                ++count[ds.labels[i]];
                seen.insert(i);
            }
            CHECK(count.size() >= 2);
            for (const auto& [c, n] : count) CHECK(n >= 2);
        }
        CHECK(seen == std::multiset<std::size_t>(idx.begin(), idx.end()));
    }
    const std::vector<std::size_t> one_class{0, 1, 2};
    Rng rng(1);
    CHECK_THROWS_AS(make_batches(ds.labels, one_class, cfg, rng), Error);
}

TEST_CASE("defense reductions") {
    const Dataset ds = small_dataset(3);
    TrainConfig cfg = small_config();
    const Member m = init_member(ds, small_spec(), cfg, 0, Rng(4));
    Rng rng(5);

    const LossTerm none = defense_loss(DefenseKind::None, m, ds.x, ds.labels, cfg, rng);
    CHECK(same_grads(none, metric_term(m, ds.x, ds.labels, cfg)));

    SUBCASE("trades with lambda 0") {
        TrainConfig t = cfg;
        t.trades_lambda = 0.0;
        CHECK(same_grads(defense_loss(DefenseKind::Trades, m, ds.x, ds.labels, t, rng), none));
    }
    SUBCASE("at with a zero budget") {
        TrainConfig t = cfg;
        t.attack = AttackConfig::pgd(0.0, 10);
        CHECK(same_grads(defense_loss(DefenseKind::At, m, ds.x, ds.labels, t, rng), none));
    }
    SUBCASE("single-class batches are refused") {
        const std::vector<std::size_t> rows{0, 1, 2};
        const Matrix x = ds.x.gather_rows(rows);
        const std::vector<Label> labels(3, ds.labels[0]);
        try {
            defense_loss(DefenseKind::None, m, x, labels, cfg, rng);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Resample);
        }
    }
    SUBCASE("eat is refused as a single-model defense") {
        CHECK_THROWS_AS(defense_loss(DefenseKind::Eat, m, ds.x, ds.labels, cfg, rng), Error);
    }
}

TEST_CASE("defense gradients match finite differences") {
    const Dataset ds = small_dataset(6);
    for (auto target : {MixupTarget::Consistency, MixupTarget::Relabel}) {
        TrainConfig cfg = small_config();
        cfg.mixup_target = target;
        const Member m = init_member(ds, small_spec(), cfg, 0, Rng(7));
        const Matrix theta = testing::flatten(m.model);

        for (auto kind : {DefenseKind::None, DefenseKind::At, DefenseKind::Mixup, DefenseKind::Iat,
                          DefenseKind::Trades}) {
            CAPTURE(to_string(kind));
            Rng rng(8);
            Rng replay = rng;
            const LossTerm got = defense_loss(kind, m, ds.x, ds.labels, cfg, rng);

            // Rebuild the loss with the adversarial rows, the mixing draw and
            // any embedding targets frozen at the current parameters.
            const Matrix adv = pgd_single(m.model, ds.x, cfg.attack).adversarial;
            const Matrix clean_emb = embed(m.model, ds.x);
            double lambda = 1.0;
            std::vector<std::size_t> perm;
            if (kind == DefenseKind::Mixup || kind == DefenseKind::Iat) {
                lambda = sample_beta(replay, cfg.mixup_alpha);
                perm = replay.permutation(ds.size());
            }
            auto mix = [&](const Matrix& x) {
                Matrix out(x.rows(), x.cols());
                for (std::size_t r = 0; r < x.rows(); ++r)
                    for (std::size_t c = 0; c < x.cols(); ++c)
                        out(r, c) = lambda * x(r, c) + (1.0 - lambda) * x(perm[r], c);
                return out;
            };
            std::vector<Label> dominant(ds.size());
            for (std::size_t i = 0; i < ds.size() && !perm.empty(); ++i)
                dominant[i] = lambda >= 0.5 ? ds.labels[i] : ds.labels[perm[i]];
            const Matrix mixed_target = perm.empty() ? Matrix() : mix(clean_emb);

            auto mixed_loss = [&](const Member& p, const Matrix& x) {
                if (target == MixupTarget::Consistency) return mean_sq_to(p.model, mix(x), mixed_target);
                return metric_term(p, mix(x), dominant, cfg).loss;
            };
            auto loss = [&](const Matrix& flat) {
                const Member p = with_params(m, flat);
                double v = 0.0;
                switch (kind) {
                    case DefenseKind::None: v = metric_term(p, ds.x, ds.labels, cfg).loss; break;
                    case DefenseKind::At: v = metric_term(p, adv, ds.labels, cfg).loss; break;
                    case DefenseKind::Mixup:
                        v = metric_term(p, ds.x, ds.labels, cfg).loss + mixed_loss(p, ds.x);
                        break;
                    case DefenseKind::Iat:
                        v = metric_term(p, ds.x, ds.labels, cfg).loss + mixed_loss(p, ds.x) +
                            metric_term(p, adv, ds.labels, cfg).loss + mixed_loss(p, adv);
                        break;
                    case DefenseKind::Trades:
                        v = metric_term(p, ds.x, ds.labels, cfg).loss +
                            cfg.trades_lambda * embed_divergence(embed(p.model, adv), clean_emb).loss;
                        break;
                    default: break;
                }
                return v;
            };
            CHECK(got.loss == doctest::Approx(loss(theta)).epsilon(1e-12));
            const Matrix fd = testing::richardson_grad(loss, theta);
            const Matrix analytic = testing::flatten(got.model_grads);
            CHECK(testing::norm_rel_err(analytic, fd) <= 1e-6);
            CHECK(testing::rel_err(analytic, fd) <= 1e-4);
        }
    }
}

TEST_CASE("proxy gradients match finite differences") {
    const Dataset ds = small_dataset(9);
    const TrainConfig cfg = small_config();
    const Member m = init_member(ds, small_spec(), cfg, 0, Rng(10));
    Rng rng(11);
    const LossTerm got = defense_loss(DefenseKind::None, m, ds.x, ds.labels, cfg, rng);
    const auto fd = testing::richardson_grad(
        [&](const Matrix& p) {
            Member q = m;
            q.proxies.proxies = p;
            return metric_term(q, ds.x, ds.labels, cfg).loss;
        },
        m.proxies.proxies);
    CHECK(testing::rel_err(got.proxy_grad, fd) <= 1e-4);
}

TEST_CASE("blend is linear in beta") {
    const Dataset ds = small_dataset(12);
    const TrainConfig cfg = small_config();
    const Member m = init_member(ds, small_spec(), cfg, 0, Rng(13));
    const LossTerm a = metric_term(m, ds.x, ds.labels, cfg);
    const LossTerm b = metric_term(m, pgd_single(m.model, ds.x, cfg.attack).adversarial, ds.labels, cfg);
    CHECK(same_grads(blend(a, b, 1.0), a));
    CHECK(same_grads(blend(a, b, 0.0), b));
    for (double beta : {0.1, 0.25, 0.5, 0.8}) {
        const LossTerm x = blend(a, b, beta);
        const LossTerm y = blend(b, a, 1.0 - beta);
        CHECK(x.loss == doctest::Approx(y.loss).epsilon(1e-14));
        CHECK(testing::norm_rel_err(testing::flatten(x.model_grads), testing::flatten(y.model_grads)) <= 1e-14);
        CHECK(x.loss == doctest::Approx(beta * a.loss + (1.0 - beta) * b.loss).epsilon(1e-14));
    }
}

TEST_CASE("eat loss reductions") {
    const Dataset ds = small_dataset(14);
    TrainConfig cfg = small_config();
    const Member m = init_member(ds, small_spec(), cfg, 0, Rng(15));
    const EmbeddingModel one[] = {m.model};

    SUBCASE("a single model is adversarial training with pgd") {
        cfg.beta = 0.5;
        const EatLoss l = eat_loss(m, ds.x, ds.labels, one, cfg);
        const Matrix adv = pgd_single(m.model, ds.x, cfg.attack).adversarial;
        const LossTerm expect =
            blend(metric_term(m, ds.x, ds.labels, cfg), metric_term(m, adv, ds.labels, cfg), 0.5);
        CHECK(same_grads(l.total, expect));
    }
    SUBCASE("beta 1 is the clean metric loss") {
        cfg.beta = 1.0;
        const EatLoss l = eat_loss(m, ds.x, ds.labels, one, cfg);
        CHECK(same_grads(l.total, metric_term(m, ds.x, ds.labels, cfg)));
    }
}

TEST_CASE("eat with beta 1 trains each member independently") {
    const Dataset ds = small_dataset(16, 4, 9);
    TrainConfig cfg = small_config();
    cfg.defense = DefenseKind::Eat;
    cfg.beta = 1.0;
    cfg.n_models = 3;
    cfg.epochs = 3;
    cfg.lr = 1e-3;
    const Rng rng(17);
    const auto res = train(ds, small_spec(), cfg, rng);
    for (std::size_t i = 0; i < 3; ++i) {
        Member mem = init_member(ds, small_spec(), cfg, i, rng);
        train_member(mem, i, ds, res.ensemble.assignments[i], DefenseKind::None, cfg, rng);
        CHECK(testing::flatten(mem.model) == testing::flatten(res.ensemble.models[i]));
        CHECK(mem.proxies.proxies == res.ensemble.proxies[i].proxies);
    }
}

TEST_CASE("ensemble split invariants") {
    const Dataset ds = small_dataset(18, 4, 10);
    TrainConfig cfg = small_config();
    cfg.defense = DefenseKind::Eat;
    cfg.epochs = 1;
    for (std::size_t n : {2u, 3u, 4u}) {
        cfg.n_models = n;
        const auto ens = train(ds, small_spec(), cfg, Rng(19)).ensemble;
        REQUIRE(ens.parts.size() == n);
        REQUIRE(ens.size() == n);
        std::set<std::size_t> all;
        std::size_t lo = ds.size(), hi = 0;
        for (const auto& p : ens.parts) {
            all.insert(p.begin(), p.end());
            lo = std::min(lo, p.size());
            hi = std::max(hi, p.size());
        }
        CHECK(all.size() == ds.size());
        CHECK(hi - lo <= 1);
        for (std::size_t i = 0; i < n; ++i) {
            const std::set<std::size_t> mine(ens.assignments[i].begin(), ens.assignments[i].end());
            CHECK(mine.size() == ds.size() - ens.parts[i].size());
            for (std::size_t j : ens.parts[i]) CHECK(mine.count(j) == 0);
        }
    }
    cfg.eat_split = false;
    const auto ens = train(ds, small_spec(), cfg, Rng(19)).ensemble;
    CHECK(ens.parts.empty());
    for (const auto& a : ens.assignments) CHECK(a.size() == ds.size());

    cfg.eat_split = true;
    cfg.n_models = 1;
    CHECK_THROWS_AS(train(ds, small_spec(), cfg, Rng(19)), Error);
}

TEST_CASE("training reduces the loss") {
    const Dataset ds = small_dataset(20, 6, 12, 8);
    for (auto kind : {DefenseKind::None, DefenseKind::At, DefenseKind::Trades}) {
        CAPTURE(to_string(kind));
        TrainConfig cfg;
        cfg.defense = kind;
        cfg.epochs = 50;
        cfg.lr = 1e-3;
        const auto res = train(ds, small_spec(), cfg, Rng(21));
        REQUIRE(res.log.size() == 50);
        for (const auto& e : res.log) CHECK(std::isfinite(e.mean_loss));
        CHECK(res.log.back().mean_loss < res.log.front().mean_loss);
    }
}

TEST_CASE("checkpoints round trip and are deterministic") {
    const Dataset ds = small_dataset(22, 4, 8);
    TrainConfig cfg = small_config();
    cfg.defense = DefenseKind::Eat;
    cfg.epochs = 2;
    const auto root = fs::temp_directory_path() / "rdml_test_ckpt";
    fs::remove_all(root);
    const nlohmann::json echo = {{"note", "test"}};

    const auto a = train(ds, small_spec(), cfg, Rng(23)).ensemble;
    const auto b = train(ds, small_spec(), cfg, Rng(23)).ensemble;
    save_checkpoint((root / "a").string(), a, echo);
    save_checkpoint((root / "b").string(), b, echo);
    std::size_t files = 0;
    for (const auto& f : fs::directory_iterator(root / "a")) {
        CHECK(slurp(f.path()) == slurp(root / "b" / f.path().filename()));
        ++files;
    }
    CHECK(files == 1 + 2 * 3);

    nlohmann::json manifest;
    const auto back = load_checkpoint((root / "a").string(), &manifest);
    CHECK(manifest["config"] == echo);
    REQUIRE(back.size() == a.size());
    CHECK(back.parts == a.parts);
    CHECK(back.assignments == a.assignments);
    CHECK(back.train_classes == a.train_classes);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(testing::flatten(back.models[i]) == testing::flatten(a.models[i]));
        CHECK(back.proxies[i].proxies == a.proxies[i].proxies);
        CHECK(back.proxies[i].classes() == a.proxies[i].classes());
        CHECK(embed(back.models[i], ds.x) == embed(a.models[i], ds.x));
    }

    CHECK_THROWS_AS(load_checkpoint((root / "missing").string()), Error);
    std::ofstream(root / "a" / "manifest.json") << "{\"format\": \"other\"}";
    CHECK_THROWS_AS(load_checkpoint((root / "a").string()), Error);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.beta = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.samples_per_class = 1;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    CHECK(parse_defense("eat") == DefenseKind::Eat);
    CHECK_THROWS_AS(parse_defense("adversarial"), Error);
    cfg = {};
    cfg.defense = DefenseKind::NaiveEnsemble;
    cfg.n_models = 4;
    CHECK(cfg.ensemble_size() == 4);
    cfg.defense = DefenseKind::Trades;
    CHECK(cfg.ensemble_size() == 1);
}
