#include "rdml/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <tuple>

#include "rdml/error.hpp"

namespace rdml {

namespace fs = std::filesystem;
using nlohmann::json;

double parse_budget(const std::string& text) {
    auto number = [&](const std::string& s) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        require(used == s.size() && !s.empty(), ErrorKind::Config, "cannot parse budget '" + text + "'");
        return v;
    };
    const auto slash = text.find('/');
    double v = slash == std::string::npos ? number(text)
                                          : number(text.substr(0, slash)) / number(text.substr(slash + 1));
    require(std::isfinite(v) && v >= 0.0, ErrorKind::Config, "budget '" + text + "' must be finite and >= 0");
    return v;
}

namespace {

/// Key-by-key reader over one JSON object; remembers what it consumed so the
/// leftovers can be rejected.
bool is_count(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j.is_object(), ErrorKind::Config, where() + ": expected an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void real(const std::string& key, double& out) {
        if (auto* v = find(key)) {
            require(v->is_number(), ErrorKind::Config, field(key) + ": expected a number");
            out = v->get<double>();
            require(std::isfinite(out), ErrorKind::Config, field(key) + ": must be finite");
        }
    }

    void budget(const std::string& key, double& out) {
        if (auto* v = find(key)) {
            if (v->is_string()) {
                try {
                    out = parse_budget(v->get<std::string>());
                } catch (const Error& e) {
                    fail(ErrorKind::Config, field(key) + ": " + e.what());
                }
            } else {
                real(key, out);
            }
        }
    }

    template <class T>
    void count(const std::string& key, T& out) {
        if (auto* v = find(key)) {
            require(is_count(*v), ErrorKind::Config, field(key) + ": expected a non-negative integer");
            out = v->get<T>();
        }
    }

    void flag(const std::string& key, bool& out) {
        if (auto* v = find(key)) {
            require(v->is_boolean(), ErrorKind::Config, field(key) + ": expected true or false");
            out = v->get<bool>();
        }
    }

    void text(const std::string& key, std::string& out) {
        if (auto* v = find(key)) {
            require(v->is_string(), ErrorKind::Config, field(key) + ": expected a string");
            out = v->get<std::string>();
        }
    }

    void counts(const std::string& key, std::vector<std::size_t>& out) {
        if (auto* v = find(key)) {
            require(v->is_array(), ErrorKind::Config, field(key) + ": expected an array");
            out.clear();
            for (const auto& e : *v) {
                require(is_count(e), ErrorKind::Config, field(key) + ": expected non-negative integers");
                out.push_back(e.get<std::size_t>());
            }
        }
    }

    /// A number applies to every feature; an array gives one per feature.
    void bounds(const std::string& key, std::vector<double>& out) {
        if (auto* v = find(key)) {
            if (v->is_number()) {
                out = {v->get<double>()};
                return;
            }
            require(v->is_array() && !v->empty(), ErrorKind::Config,
                    field(key) + ": expected a number or a non-empty array");
            out.clear();
            for (const auto& e : *v) {
                require(e.is_number(), ErrorKind::Config, field(key) + ": expected numbers");
                out.push_back(e.get<double>());
            }
        }
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            require(seen_.count(key) != 0, ErrorKind::Config, field(key) + ": unknown key");
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class Enum, std::size_t N>
Enum pick(const std::string& field, const std::string& value, const std::pair<const char*, Enum> (&options)[N]) {
    std::string expected;
    for (const auto& [name, e] : options) {
        if (value == name) return e;
        expected += expected.empty() ? name : std::string(", ") + name;
    }
    fail(ErrorKind::Config, field + ": unknown value '" + value + "' (expected " + expected + ")");
}

AttackConfig parse_attack(const json& j, const std::string& path, AttackConfig cfg) {
    Fields f(j, path);
    const bool explicit_step = j.contains("step_size");
    f.budget("epsilon", cfg.epsilon);
    f.count("steps", cfg.steps);
    f.budget("step_size", cfg.step_size);
    if (!explicit_step) cfg.step_size = cfg.steps == 0 ? 0.0 : 2.5 * cfg.epsilon / static_cast<double>(cfg.steps);
    f.bounds("domain_lo", cfg.domain_lo);
    f.bounds("domain_hi", cfg.domain_hi);
    f.flag("random_start", cfg.random_start);
    f.count("seed", cfg.seed);
    std::string divergence = cfg.divergence == DivergenceKind::Cosine ? "cosine" : "squared_l2";
    f.text("divergence", divergence);
    cfg.divergence = pick<DivergenceKind>(
        f.field("divergence"), divergence,
        {std::pair{"cosine", DivergenceKind::Cosine}, std::pair{"squared_l2", DivergenceKind::SquaredL2}});
    f.finish();
    return cfg;
}

json attack_json(const AttackConfig& a) { return to_json(a); }

AttackConfig with_budget(AttackConfig a, double epsilon, std::size_t steps) {
    a.epsilon = epsilon;
    a.steps = steps;
    a.step_size = steps == 0 ? 0.0 : 2.5 * epsilon / static_cast<double>(steps);
    return a;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << text;
    require(out.good(), ErrorKind::Io, "write to '" + path.string() + "' failed");
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorKind::Io, "cannot create directory '" + dir.string() + "': " + ec.message());
}

std::vector<std::size_t> as_counts(const std::vector<double>& values, const char* axis) {
    std::vector<std::size_t> out;
    for (double v : values) {
        require(v >= 0.0 && v == std::floor(v), ErrorKind::Config,
                std::string("sweep ") + axis + ": values must be non-negative integers");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

}  // namespace

void ExperimentConfig::validate() const {
    require(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0, ErrorKind::Config,
            "dataset.train_fraction must lie in (0, 1)");
    if (dataset.kind == DatasetKind::Csv)
        require(!dataset.path.empty(), ErrorKind::Config, "dataset.path is required for csv datasets");
    require(model.embedding_dim >= 1, ErrorKind::Config, "model.embedding_dim must be >= 1");
    for (std::size_t h : model.hidden) require(h >= 1, ErrorKind::Config, "model.hidden sizes must be >= 1");
    require(!ks.empty(), ErrorKind::Config, "ks must not be empty");
    for (std::size_t k : ks) require(k >= 1, ErrorKind::Config, "ks entries must be >= 1");
    require(std::is_sorted(ks.begin(), ks.end()) && std::adjacent_find(ks.begin(), ks.end()) == ks.end(),
            ErrorKind::Config, "ks must be strictly increasing");
    train.validate();
    try {
        if (dataset.kind == DatasetKind::Synthetic) {
            train.attack.validate(dataset.synthetic.dim);
            attack.validate(dataset.synthetic.dim);
        }
    } catch (const Error& e) {
        fail(ErrorKind::Config, e.what());
    }
}

ExperimentConfig ci_preset() {
    ExperimentConfig cfg;
    cfg.train.epochs = 60;
    return cfg;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    Fields top(j, "");
    top.count("seed", cfg.seed);
    top.text("out_dir", cfg.out_dir);
    top.counts("ks", cfg.ks);

    if (auto* d = top.find("dataset")) {
        Fields f(*d, "dataset");
        std::string kind = "synthetic";
        f.text("kind", kind);
        cfg.dataset.kind = pick<DatasetKind>(f.field("kind"), kind,
                                             {std::pair{"synthetic", DatasetKind::Synthetic},
                                              std::pair{"csv", DatasetKind::Csv}});
        f.real("train_fraction", cfg.dataset.train_fraction);
        if (cfg.dataset.kind == DatasetKind::Synthetic) {
            auto& s = cfg.dataset.synthetic;
            f.count("classes", s.n_classes);
            f.count("per_class", s.per_class);
            f.count("dim", s.dim);
            f.real("sigma", s.sigma);
            f.real("centre_lo", s.centre_lo);
            f.real("centre_hi", s.centre_hi);
        } else {
            f.text("path", cfg.dataset.path);
        }
        f.finish();
    }

    if (auto* m = top.find("model")) {
        Fields f(*m, "model");
        f.counts("hidden", cfg.model.hidden);
        f.count("embedding_dim", cfg.model.embedding_dim);
        f.flag("normalize", cfg.model.normalize);
        f.finish();
    }

    if (auto* t = top.find("train")) {
        Fields f(*t, "train");
        auto& c = cfg.train;
        std::string defense = to_string(c.defense);
        f.text("defense", defense);
        try {
            c.defense = parse_defense(defense);
        } catch (const Error& e) {
            fail(ErrorKind::Config, f.field("defense") + ": " + e.what());
        }
        f.count("epochs", c.epochs);
        f.count("batch_classes", c.batch_classes);
        f.count("samples_per_class", c.samples_per_class);
        f.real("lr", c.lr);
        f.real("lr_decay", c.lr_decay);
        f.count("lr_decay_every", c.lr_decay_every);
        f.real("weight_decay", c.weight_decay);
        f.real("proxy_lr_scale", c.proxy_lr_scale);
        f.real("beta", c.beta);
        f.real("mixup_alpha", c.mixup_alpha);
        std::string target = c.mixup_target == MixupTarget::Consistency ? "consistency" : "relabel";
        f.text("mixup_target", target);
        c.mixup_target = pick<MixupTarget>(f.field("mixup_target"), target,
                                           {std::pair{"consistency", MixupTarget::Consistency},
                                            std::pair{"relabel", MixupTarget::Relabel}});
        f.real("trades_lambda", c.trades_lambda);
        f.count("n_models", c.n_models);
        f.flag("eat_split", c.eat_split);
        std::string loss = to_string(c.loss);
        f.text("loss", loss);
        c.loss = pick<LossKind>(f.field("loss"), loss,
                                {std::pair{"pal", LossKind::Pal}, std::pair{"triplet", LossKind::Triplet}});
        f.real("pal_scale", c.pal_scale);
        f.real("pal_margin", c.pal_margin);
        f.real("triplet_margin", c.triplet.margin);
        if (auto* a = f.find("attack")) c.attack = parse_attack(*a, "train.attack", c.attack);
        f.finish();
    }

    if (auto* a = top.find("attack")) cfg.attack = parse_attack(*a, "attack", cfg.attack);
    top.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Io, "cannot open config '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Config, path + ": " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const Error& e) {
        fail(e.kind(), path + ": " + e.what());
    }
}

json to_json(const ExperimentConfig& cfg) {
    json dataset;
    if (cfg.dataset.kind == DatasetKind::Synthetic) {
        const auto& s = cfg.dataset.synthetic;
        dataset = {{"kind", "synthetic"},   {"classes", s.n_classes}, {"per_class", s.per_class},
                   {"dim", s.dim},          {"sigma", s.sigma},       {"centre_lo", s.centre_lo},
                   {"centre_hi", s.centre_hi}};
    } else {
        dataset = {{"kind", "csv"}, {"path", cfg.dataset.path}};
    }
    dataset["train_fraction"] = cfg.dataset.train_fraction;

    json train = to_json(cfg.train);
    train["attack"] = attack_json(cfg.train.attack);
    return {{"seed", cfg.seed},   {"out_dir", cfg.out_dir}, {"ks", cfg.ks},
            {"dataset", dataset}, {"model", to_json(cfg.model)}, {"train", train},
            {"attack", attack_json(cfg.attack)}};
}

std::string config_digest(const json& resolved) {
    json keyed = resolved;
    if (keyed.is_object()) keyed.erase("out_dir");
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : keyed.dump()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Benchmark make_benchmark(const ExperimentConfig& cfg) {
    const Rng root(cfg.seed);
    Dataset all;
    if (cfg.dataset.kind == DatasetKind::Synthetic) {
        Rng data_rng = root.derive("data");
        all = gen_synthetic(cfg.dataset.synthetic, data_rng);
    } else {
        all = load_csv(cfg.dataset.path);
    }
    Rng split_rng = root.derive("data.split");
    auto [train, test] = class_disjoint_split(all, cfg.dataset.train_fraction, split_rng);
    return {std::move(train), std::move(test)};
}

TrainResult run_training(const ExperimentConfig& cfg, const Benchmark& bench) {
    return train(bench.train, cfg.model, cfg.train, Rng(cfg.seed).derive("train"));
}

std::vector<MetricsReport> run_evaluation(const ExperimentConfig& cfg, const Ensemble& ensemble,
                                          const Dataset& test, bool attacked) {
    std::vector<MetricsReport> out;
    out.push_back(evaluate(ensemble, test, std::nullopt, cfg.ks, cfg.seed));
    if (attacked) out.push_back(evaluate(ensemble, test, cfg.attack, cfg.ks, cfg.seed));
    return out;
}

SweepAxis parse_axis(const std::string& name) {
    return pick<SweepAxis>("axis", name,
                           {std::pair{"eps", SweepAxis::Eps}, std::pair{"iters", SweepAxis::Iters},
                            std::pair{"beta", SweepAxis::Beta}, std::pair{"n_models", SweepAxis::NModels}});
}

const char* to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::Eps: return "eps";
        case SweepAxis::Iters: return "iters";
        case SweepAxis::Beta: return "beta";
        case SweepAxis::NModels: return "n_models";
    }
    return "?";
}

std::vector<double> default_axis_values(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::Eps: return {8.0 / 255.0, 16.0 / 255.0, 24.0 / 255.0, 32.0 / 255.0};
        case SweepAxis::Iters: return {1, 5, 10, 20};
        case SweepAxis::Beta: return {0.0, 0.25, 0.5, 0.75, 1.0};
        case SweepAxis::NModels: return {2, 3, 4, 5};
    }
    return {};
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values,
                                const std::vector<std::uint64_t>& seeds) {
    require(!values.empty(), ErrorKind::Config, "sweep: no axis values");
    require(!seeds.empty(), ErrorKind::Config, "sweep: no seeds");
    std::vector<SweepRow> rows;
    auto push = [&](double value, std::uint64_t seed, const std::vector<MetricsReport>& reports) {
        for (const auto& r : reports) rows.push_back({value, seed, r});
    };

    for (std::uint64_t seed : seeds) {
        ExperimentConfig base = cfg;
        base.seed = seed;
        const Benchmark bench = make_benchmark(base);
        if (axis == SweepAxis::Eps || axis == SweepAxis::Iters) {
            const auto counts = axis == SweepAxis::Iters ? as_counts(values, "iters") : std::vector<std::size_t>{};
            const Ensemble ens = run_training(base, bench).ensemble;
            for (std::size_t v = 0; v < values.size(); ++v) {
                ExperimentConfig point = base;
                point.attack = axis == SweepAxis::Eps ? with_budget(base.attack, values[v], base.attack.steps)
                                                      : with_budget(base.attack, base.attack.epsilon, counts[v]);
                point.validate();
                push(values[v], seed, run_evaluation(point, ens, bench.test, true));
            }
        } else {
            const auto counts = axis == SweepAxis::NModels ? as_counts(values, "n_models") : std::vector<std::size_t>{};
            for (std::size_t v = 0; v < values.size(); ++v) {
                ExperimentConfig point = base;
                if (axis == SweepAxis::Beta)
                    point.train.beta = values[v];
                else
                    point.train.n_models = counts[v];
                point.validate();
                const Ensemble ens = run_training(point, bench).ensemble;
                push(values[v], seed, run_evaluation(point, ens, bench.test, true));
            }
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        return std::tuple(a.value, a.seed, static_cast<int>(a.report.mode)) <
               std::tuple(b.value, b.seed, static_cast<int>(b.report.mode));
    });
    return rows;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds) {
    require(!seeds.empty(), ErrorKind::Config, "ablate: no seeds");
    const std::pair<const char*, std::pair<DefenseKind, bool>> variants[] = {
        {"naive_ensemble", {DefenseKind::NaiveEnsemble, false}},
        {"eat_no_split", {DefenseKind::Eat, false}},
        {"eat_split", {DefenseKind::Eat, true}},
    };
    std::vector<AblationRow> rows;
    for (std::uint64_t seed : seeds) {
        ExperimentConfig base = cfg;
        base.seed = seed;
        const Benchmark bench = make_benchmark(base);
        for (const auto& [name, flags] : variants) {
            ExperimentConfig point = base;
            point.train.defense = flags.first;
            point.train.eat_split = flags.second;
            point.validate();
            const Ensemble ens = run_training(point, bench).ensemble;
            auto reports = run_evaluation(point, ens, bench.test, true);
            rows.push_back({name, point.train, seed, reports[0], reports[1]});
        }
    }
    return rows;
}

void cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    const fs::path out(cfg.out_dir);
    make_dir(out);
    const json resolved = to_json(cfg);
    const std::string digest = config_digest(resolved);
    const Benchmark bench = make_benchmark(cfg);
    std::cerr << "training " << to_string(cfg.train.defense) << " x" << cfg.train.ensemble_size() << " for "
              << cfg.train.epochs << " epochs on " << bench.train.size() << " rows\n";
    const TrainResult result = run_training(cfg, bench);

    save_checkpoint((out / "checkpoint").string(), result.ensemble, resolved);
    std::string log = "seed,config_digest,epoch,model,lr,mean_loss,batches\n";
    for (const auto& e : result.log)
        log += std::to_string(cfg.seed) + "," + digest + "," + std::to_string(e.epoch) + "," +
               std::to_string(e.model) + "," + fmt(e.lr) + "," + fmt(e.mean_loss) + "," +
               std::to_string(e.batches) + "\n";
    write_text(out / "train_log.csv", log);
    write_text(out / "config.json", resolved.dump(1) + "\n");
    json data = {{"config", resolved}, {"train", metadata_json(bench.train)}, {"test", metadata_json(bench.test)}};
    write_text(out / "dataset.json", data.dump(1) + "\n");
    std::cerr << "wrote " << (out / "checkpoint").string() << "\n";
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_dir, bool attacked) {
    cfg.validate();
    const fs::path out(cfg.out_dir);
    const Ensemble ens = load_checkpoint(checkpoint_dir);
    const Benchmark bench = make_benchmark(cfg);
    const auto reports = run_evaluation(cfg, ens, bench.test, attacked);
    make_dir(out);

    const json resolved = to_json(cfg);
    const std::string digest = config_digest(resolved);
    json doc = {{"config", resolved}, {"config_digest", digest}, {"seed", cfg.seed},
                {"checkpoint", checkpoint_dir}, {"reports", json::array()}};
    std::string csv = "seed,config_digest," + csv_header(cfg.ks) + "\n";
    for (const auto& r : reports) {
        doc["reports"].push_back(to_json(r));
        csv += std::to_string(cfg.seed) + "," + digest + "," + csv_row(r) + "\n";
    }
    write_text(out / "metrics.json", doc.dump(1) + "\n");
    write_text(out / "metrics.csv", csv);
    std::cout << csv;
}

void cmd_sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values,
               const std::vector<std::uint64_t>& seeds) {
    cfg.validate();
    const fs::path out(cfg.out_dir);
    make_dir(out);
    const auto rows = run_sweep(cfg, axis, values, seeds);
    const json resolved = to_json(cfg);
    const std::string digest = config_digest(resolved);
    std::string csv = "axis,value,seed,config_digest," + csv_header(cfg.ks) + "\n";
    for (const auto& r : rows)
        csv += std::string(to_string(axis)) + "," + fmt(r.value) + "," + std::to_string(r.seed) + "," + digest +
               "," + csv_row(r.report) + "\n";
    const std::string stem = std::string("sweep_") + to_string(axis);
    write_text(out / (stem + ".csv"), csv);
    json side = {{"config", resolved}, {"config_digest", digest}, {"axis", to_string(axis)},
                 {"values", values},   {"seeds", seeds}};
    write_text(out / (stem + ".json"), side.dump(1) + "\n");
    std::cout << csv;
}

void cmd_ablate(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds) {
    cfg.validate();
    const fs::path out(cfg.out_dir);
    make_dir(out);
    const auto rows = run_ablation(cfg, seeds);
    const json resolved = to_json(cfg);
    const std::string digest = config_digest(resolved);

    std::string csv = "variant,defense,eat_split,n_models,seed,config_digest,epsilon,steps";
    for (const char* side : {"clean", "attacked"}) {
        csv += std::string(",") + side + "_nmi," + side + "_f1," + side + "_vote_accuracy";
        for (std::size_t k : cfg.ks) csv += std::string(",") + side + "_recall_at_" + std::to_string(k);
    }
    csv += "\n";
    json variants = json::object();
    for (const auto& r : rows) {
        csv += r.variant + "," + to_string(r.train.defense) + "," + (r.train.eat_split ? "true" : "false") + "," +
               std::to_string(r.train.n_models) + "," + std::to_string(r.seed) + "," + digest + "," +
               fmt(cfg.attack.epsilon) + "," + std::to_string(cfg.attack.steps);
        for (const MetricsReport* m : {&r.clean, &r.attacked}) {
            csv += "," + fmt(m->nmi) + "," + fmt(m->f1) + "," + fmt(m->vote_accuracy);
            for (const auto& [k, v] : m->recall_at) csv += "," + fmt(v);
        }
        csv += "\n";
        json t = to_json(r.train);
        t["attack"] = attack_json(r.train.attack);
        variants[r.variant] = t;
    }
    write_text(out / "ablation.csv", csv);
    json side = {{"config", resolved}, {"config_digest", digest}, {"seeds", seeds}, {"variants", variants}};
    write_text(out / "ablation.json", side.dump(1) + "\n");
    std::cout << csv;
}

int exit_code(ErrorKind kind) { return kind == ErrorKind::NumericFailure ? 3 : 2; }

}  // namespace rdml
