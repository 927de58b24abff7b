#include "rdml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include "rdml/error.hpp"

namespace rdml {

double distance(std::span<const double> a, std::span<const double> b, Distance metric) {
    if (metric == Distance::Euclidean) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    }
    const double na = norm2(a);
    const double nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - dot(a, b) / (na * nb);
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

std::pair<std::size_t, double> nearest_centroid(std::span<const double> p, const Matrix& centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
        const double d = sq_dist(p, centroids.row(c));
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return {best, best_d};
}

}  // namespace

ClusterAssignment kmeans(const Matrix& points, std::size_t k, Rng& rng) {
    const std::size_t n = points.rows();
    require(k >= 1, ErrorKind::InvalidArgument, "kmeans: k must be at least 1");
    require(k <= n, ErrorKind::InvalidArgument,
            "kmeans: k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
    require(points.all_finite(), ErrorKind::NumericFailure, "kmeans: non-finite input");

    // k-means++ seeding
    Matrix centroids(k, points.cols());
    std::vector<bool> chosen(n, false);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t first = rng.below(n);
    chosen[first] = true;
    std::copy(points.row(first).begin(), points.row(first).end(), centroids.row(0).begin());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(points.row(i), centroids.row(c - 1)));
            if (!chosen[i]) total += d2[i];
        }
        std::size_t pick = n;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i] || d2[i] <= 0.0) continue;
                pick = i;
                target -= d2[i];
                if (target < 0.0) break;
            }
        }
        if (pick == n) {
            // every remaining point coincides with a centroid
            std::vector<std::size_t> free;
            for (std::size_t i = 0; i < n; ++i)
                if (!chosen[i]) free.push_back(i);
            pick = free[rng.below(free.size())];
        }
        chosen[pick] = true;
        std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
    }

    ClusterAssignment out;
    out.k = k;
    out.cluster.assign(n, 0);
    std::vector<double> own_d(n, 0.0);
    for (int iter = 0; iter < 100; ++iter) {
        for (std::size_t i = 0; i < n; ++i) std::tie(out.cluster[i], own_d[i]) = nearest_centroid(points.row(i), centroids);

        Matrix next(k, points.cols());
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[out.cluster[i]];
            auto dst = next.row(out.cluster[i]);
            auto src = points.row(i);
            for (std::size_t f = 0; f < dst.size(); ++f) dst[f] += src[f];
        }
        std::vector<bool> taken(n, false);
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (auto& v : next.row(c)) v /= static_cast<double>(counts[c]);
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i)
                if (!taken[i] && own_d[i] > far_d) {
                    far_d = own_d[i];
                    far = i;
                }
            taken[far] = true;
            std::copy(points.row(far).begin(), points.row(far).end(), next.row(c).begin());
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(sq_dist(next.row(c), centroids.row(c))));
        centroids = std::move(next);
        if (shift < 1e-6) break;
    }
    out.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto [c, d] = nearest_centroid(points.row(i), centroids);
        out.cluster[i] = c;
        out.inertia += d;
    }
    return out;
}

namespace {

void check_partition_lengths(std::span<const std::size_t> clusters, std::span<const Label> labels,
                             const char* who) {
    require(clusters.size() == labels.size(), ErrorKind::ShapeMismatch,
            std::string(who) + ": " + std::to_string(clusters.size()) + " cluster ids but " +
                std::to_string(labels.size()) + " labels");
    require(!labels.empty(), ErrorKind::InvalidArgument, std::string(who) + ": no samples");
}

/// Terms are summed in sorted order so the result does not depend on how
/// the partitions happen to be labelled.
double sorted_sum(std::vector<double> terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

double entropy(const std::map<long long, std::size_t>& counts, double n) {
    std::vector<double> terms;
    for (const auto& [id, c] : counts) {
        const double p = static_cast<double>(c) / n;
        terms.push_back(-p * std::log(p));
    }
    return sorted_sum(std::move(terms));
}

double choose2(std::size_t c) { return 0.5 * static_cast<double>(c) * static_cast<double>(c > 0 ? c - 1 : 0); }

}  // namespace

double nmi(std::span<const std::size_t> clusters, std::span<const Label> labels) {
    check_partition_lengths(clusters, labels, "nmi");
    const double n = static_cast<double>(labels.size());
    std::map<long long, std::size_t> a, b;
    std::map<std::pair<long long, long long>, std::size_t> joint;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto c = static_cast<long long>(clusters[i]);
        const auto l = static_cast<long long>(labels[i]);
        ++a[c];
        ++b[l];
        ++joint[{c, l}];
    }
    const double ha = entropy(a, n);
    const double hb = entropy(b, n);
    // Identical partitions up to relabelling; the general formula would only
    // reach 1 up to round-off.
    if (joint.size() == a.size() && joint.size() == b.size()) return 1.0;
    std::vector<double> terms;
    for (const auto& [key, c] : joint) {
        const double pij = static_cast<double>(c) / n;
        const double pi = static_cast<double>(a[key.first]) / n;
        const double pj = static_cast<double>(b[key.second]) / n;
        terms.push_back(pij * std::log(pij / (pi * pj)));
    }
    const double mi = sorted_sum(std::move(terms));
    const double denom = ha + hb;
    if (denom <= 0.0) return 1.0;
    return std::clamp(2.0 * mi / denom, 0.0, 1.0);
}

double pairwise_f1(std::span<const std::size_t> clusters, std::span<const Label> labels) {
    check_partition_lengths(clusters, labels, "pairwise_f1");
    std::map<long long, std::size_t> a, b;
    std::map<std::pair<long long, long long>, std::size_t> joint;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++a[static_cast<long long>(clusters[i])];
        ++b[labels[i]];
        ++joint[{static_cast<long long>(clusters[i]), labels[i]}];
    }
    double tp = 0.0, same_cluster = 0.0, same_class = 0.0;
    for (const auto& [key, c] : joint) tp += choose2(c);
    for (const auto& [key, c] : a) same_cluster += choose2(c);
    for (const auto& [key, c] : b) same_class += choose2(c);
    const double fp = same_cluster - tp;
    const double fn = same_class - tp;
    const double denom = 2.0 * tp + fn + fp;
    if (denom == 0.0) return 1.0;
    return 2.0 * tp / denom;
}

std::vector<std::size_t> neighbor_order(const Matrix& e, std::size_t query, Distance metric) {
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(e.rows());
    for (std::size_t j = 0; j < e.rows(); ++j)
        if (j != query) d.emplace_back(distance(e.row(query), e.row(j), metric), j);
    std::sort(d.begin(), d.end());
    std::vector<std::size_t> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i].second;
    return out;
}

double recall_at_k(const Matrix& e, std::span<const Label> labels, std::size_t k, Distance metric) {
    require(e.rows() == labels.size(), ErrorKind::ShapeMismatch, "recall_at_k: label count mismatch");
    require(e.rows() >= 2, ErrorKind::InvalidArgument, "recall_at_k: need at least 2 samples");
    require(k >= 1 && k < e.rows(), ErrorKind::InvalidArgument,
            "recall_at_k: k = " + std::to_string(k) + " must lie in [1, " + std::to_string(e.rows() - 1) + "]");
    std::size_t hits = 0;
    for (std::size_t q = 0; q < e.rows(); ++q) {
        const auto order = neighbor_order(e, q, metric);
        for (std::size_t r = 0; r < k; ++r)
            if (labels[order[r]] == labels[q]) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(e.rows());
}

double VoteResult::accuracy(std::span<const Label> labels) const {
    if (predicted.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) ok += predicted[i] == labels[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(predicted.size());
}

double VoteResult::recall(std::size_t k) const {
    const auto it = hits.find(k);
    require(it != hits.end(), ErrorKind::InvalidArgument, "vote result has no hits for k = " + std::to_string(k));
    if (it->second.empty()) return 0.0;
    const auto n = std::count(it->second.begin(), it->second.end(), true);
    return static_cast<double>(n) / static_cast<double>(it->second.size());
}

VoteResult vote_predict(std::span<const Matrix> per_model, std::span<const Label> labels,
                        std::span<const std::size_t> ks, Distance metric) {
    require(!per_model.empty(), ErrorKind::InvalidArgument, "vote_predict: no models");
    const std::size_t n = labels.size();
    for (const auto& e : per_model)
        require(e.rows() == n, ErrorKind::ShapeMismatch,
                "vote_predict: embedding matrix has " + std::to_string(e.rows()) + " rows for " +
                    std::to_string(n) + " labels");
    require(n >= 2, ErrorKind::InvalidArgument, "vote_predict: need at least 2 samples");
    for (std::size_t k : ks)
        require(k >= 1 && k < n, ErrorKind::InvalidArgument,
                "vote_predict: k = " + std::to_string(k) + " out of range");

    const std::size_t models = per_model.size();
    VoteResult out;
    out.predicted.resize(n);
    for (std::size_t k : ks) out.hits[k].assign(n, false);

    std::vector<std::vector<std::size_t>> order(models);
    std::vector<std::vector<std::size_t>> rank(models, std::vector<std::size_t>(n, 0));
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t m = 0; m < models; ++m) {
            order[m] = neighbor_order(per_model[m], q, metric);
            for (std::size_t r = 0; r < order[m].size(); ++r) rank[m][order[m][r]] = r;
        }

        // label vote
        std::map<Label, std::size_t> votes;
        for (std::size_t m = 0; m < models; ++m) ++votes[labels[order[m][0]]];
        std::size_t top = 0;
        for (const auto& [label, v] : votes) top = std::max(top, v);
        Label best = 0;
        double best_rank = std::numeric_limits<double>::infinity();
        for (const auto& [label, v] : votes) {
            if (v != top) continue;
            double mean_rank = 0.0;
            for (std::size_t m = 0; m < models; ++m) {
                std::size_t r = 0;
                while (labels[order[m][r]] != label) ++r;
                mean_rank += static_cast<double>(r);
            }
            mean_rank /= static_cast<double>(models);
            // votes iterates in ascending label order, so strict < keeps the smaller id
            if (mean_rank < best_rank) {
                best_rank = mean_rank;
                best = label;
            }
        }
        out.predicted[q] = best;

        // fused retrieval lists
        for (std::size_t k : ks) {
            std::set<std::size_t> pool;
            for (std::size_t m = 0; m < models; ++m)
                for (std::size_t r = 0; r < k; ++r) pool.insert(order[m][r]);
            struct Candidate {
                std::size_t count;
                double mean_rank;
                std::size_t index;
            };
            std::vector<Candidate> cands;
            for (std::size_t j : pool) {
                Candidate c{0, 0.0, j};
                for (std::size_t m = 0; m < models; ++m) {
                    c.count += rank[m][j] < k ? 1 : 0;
                    c.mean_rank += static_cast<double>(rank[m][j]);
                }
                c.mean_rank /= static_cast<double>(models);
                cands.push_back(c);
            }
            std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
                if (a.count != b.count) return a.count > b.count;
                if (a.mean_rank != b.mean_rank) return a.mean_rank < b.mean_rank;
                return a.index < b.index;
            });
            bool hit = false;
            for (std::size_t r = 0; r < k && r < cands.size() && !hit; ++r)
                hit = labels[cands[r].index] == labels[q];
            out.hits[k][q] = hit;
        }
    }
    return out;
}

MetricsReport evaluate(const Ensemble& ensemble, const Dataset& test,
                       const std::optional<AttackConfig>& attack, std::span<const std::size_t> ks,
                       std::uint64_t seed) {
    require(ensemble.size() > 0, ErrorKind::InvalidArgument, "evaluate: empty model set");
    const auto test_classes = test.roster();
    for (Label c : test_classes)
        require(std::find(ensemble.train_classes.begin(), ensemble.train_classes.end(), c) ==
                    ensemble.train_classes.end(),
                ErrorKind::InvalidArgument,
                "evaluate: test class " + std::to_string(c) + " was seen during training");
    for (const auto& m : ensemble.models)
        require(m.input_dim() == test.dim(), ErrorKind::ShapeMismatch,
                "evaluate: model expects " + std::to_string(m.input_dim()) + " features, dataset has " +
                    std::to_string(test.dim()));

    Matrix x = test.x;
    if (attack) x = gen(test.x, ensemble.models, *attack).adversarial;

    std::vector<Matrix> per_model, unit;
    for (const auto& m : ensemble.models) {
        per_model.push_back(embed(m, x));
        Matrix e = per_model.back();
        for (std::size_t r = 0; r < e.rows(); ++r) {
            const double nr = norm2(e.row(r));
            if (nr > 0.0)
                for (auto& v : e.row(r)) v /= nr;
        }
        unit.push_back(std::move(e));
    }

    MetricsReport rep;
    rep.mode = attack ? EvalMode::Attacked : EvalMode::Clean;
    rep.attack = attack;
    rep.seed = seed;
    rep.n_models = ensemble.size();
    rep.n_samples = test.size();

    Rng rng = Rng(seed).derive("eval.kmeans");
    const Matrix joined = hconcat(unit);
    const auto clusters = kmeans(joined, test_classes.size(), rng);
    rep.nmi = nmi(clusters.cluster, test.labels);
    rep.f1 = pairwise_f1(clusters.cluster, test.labels);

    const Distance metric = ensemble.normalized() ? Distance::Cosine : Distance::Euclidean;
    const auto votes = vote_predict(per_model, test.labels, ks, metric);
    rep.vote_accuracy = votes.accuracy(test.labels);
    for (std::size_t k : ks) rep.recall_at[k] = votes.recall(k);
    return rep;
}

const char* to_string(EvalMode mode) { return mode == EvalMode::Clean ? "clean" : "attacked"; }

nlohmann::json to_json(const AttackConfig& cfg) {
    return {{"epsilon", cfg.epsilon},
            {"steps", cfg.steps},
            {"step_size", cfg.step_size},
            {"domain_lo", cfg.domain_lo},
            {"domain_hi", cfg.domain_hi},
            {"random_start", cfg.random_start},
            {"seed", cfg.seed},
            {"divergence", cfg.divergence == DivergenceKind::Cosine ? "cosine" : "squared_l2"}};
}

AttackConfig attack_from_json(const nlohmann::json& j) {
    AttackConfig cfg;
    cfg.epsilon = j.at("epsilon").get<double>();
    cfg.steps = j.at("steps").get<std::size_t>();
    cfg.step_size = j.at("step_size").get<double>();
    cfg.domain_lo = j.at("domain_lo").get<std::vector<double>>();
    cfg.domain_hi = j.at("domain_hi").get<std::vector<double>>();
    cfg.random_start = j.at("random_start").get<bool>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.divergence = j.at("divergence").get<std::string>() == "squared_l2" ? DivergenceKind::SquaredL2
                                                                          : DivergenceKind::Cosine;
    return cfg;
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json recall = nlohmann::json::object();
    for (const auto& [k, v] : r.recall_at) recall[std::to_string(k)] = v;
    return {{"mode", to_string(r.mode)},
            {"nmi", r.nmi},
            {"f1", r.f1},
            {"vote_accuracy", r.vote_accuracy},
            {"recall_at", recall},
            {"n_models", r.n_models},
            {"n_samples", r.n_samples},
            {"attack", r.attack ? to_json(*r.attack) : nlohmann::json(nullptr)},
            {"seed", r.seed}};
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string csv_header(std::span<const std::size_t> ks) {
    std::string h = "mode,n_models,n_samples,epsilon,steps,step_size,nmi,f1,vote_accuracy";
    for (std::size_t k : ks) h += ",recall_at_" + std::to_string(k);
    return h;
}

std::string csv_row(const MetricsReport& r) {
    std::string row = to_string(r.mode);
    row += "," + std::to_string(r.n_models) + "," + std::to_string(r.n_samples);
    if (r.attack)
        row += "," + fmt(r.attack->epsilon) + "," + std::to_string(r.attack->steps) + "," + fmt(r.attack->step_size);
    else
        row += ",0,0,0";
    row += "," + fmt(r.nmi) + "," + fmt(r.f1) + "," + fmt(r.vote_accuracy);
    for (const auto& [k, v] : r.recall_at) row += "," + fmt(v);
    return row;
}

}  // namespace rdml
