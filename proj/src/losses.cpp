#include "rdml/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rdml/error.hpp"

namespace rdml {

double softplus(double x) noexcept {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

namespace {

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_labels(const Matrix& e, std::span<const Label> labels, const char* who) {
    require(e.rows() == labels.size(), ErrorKind::ShapeMismatch,
            std::string(who) + ": " + std::to_string(e.rows()) + " embeddings but " +
                std::to_string(labels.size()) + " labels");
    require(e.rows() > 0, ErrorKind::InvalidArgument, std::string(who) + ": empty batch");
}

}  // namespace

LossGrad triplet_loss(const Matrix& e, std::span<const Label> labels, const TripletConfig& cfg) {
    check_labels(e, labels, "triplet_loss");
    require(std::isfinite(cfg.margin) && cfg.margin >= 0.0, ErrorKind::InvalidArgument,
            "triplet_loss: margin must be finite and non-negative");
    const std::size_t n = e.rows();
    const std::size_t d = e.cols();

    Matrix dist(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double t = e(i, c) - e(j, c);
                s += t * t;
            }
            dist(i, j) = dist(j, i) = std::sqrt(s);
        }

    // Each anchor a pairs every positive with every negative, so a positive
    // term appears n_neg(a) times and a negative term n_pos(a) times.
    std::size_t triples = 0;
    std::vector<std::size_t> n_pos(n), n_neg(n);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j == a) continue;
            (labels[j] == labels[a] ? n_pos[a] : n_neg[a])++;
        }
        triples += n_pos[a] * n_neg[a];
    }
    require(triples > 0, ErrorKind::Resample,
            "triplet_loss: batch holds no valid (anchor, positive, negative) triple; resample");

    LossGrad out{0.0, Matrix(n, d)};
    const double inv = 1.0 / static_cast<double>(triples);
    auto push = [&](std::size_t a, std::size_t b, double w) {
        // adds w * d(dist(a,b))/d e_a and d e_b
        const double r = dist(a, b);
        if (r <= 0.0) return;
        for (std::size_t c = 0; c < d; ++c) {
            const double g = w * (e(a, c) - e(b, c)) / r;
            out.grad(a, c) += g;
            out.grad(b, c) -= g;
        }
    };
    for (std::size_t a = 0; a < n; ++a) {
        if (n_pos[a] == 0 || n_neg[a] == 0) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == a) continue;
            if (labels[j] == labels[a]) {
                const double w = static_cast<double>(n_neg[a]) * inv;
                out.loss += w * dist(a, j);
                push(a, j, w);
            } else {
                const double hinge = cfg.margin - dist(a, j);
                if (hinge > 0.0) {
                    const double w = static_cast<double>(n_pos[a]) * inv;
                    out.loss += w * hinge;
                    push(a, j, -w);
                }
            }
        }
    }
    return out;
}

std::vector<Label> ProxySet::classes() const {
    std::vector<Label> out;
    for (const auto& [label, row] : index) out.push_back(label);
    return out;
}

ProxySet init_proxies(std::span<const Label> classes, std::size_t dim, Rng& rng, double scale,
                      double margin) {
    require(!classes.empty() && dim > 0, ErrorKind::InvalidArgument,
            "init_proxies: need at least one class and a positive dimension");
    ProxySet ps;
    ps.scale = scale;
    ps.margin = margin;
    ps.proxies = Matrix(classes.size(), dim);
    for (std::size_t i = 0; i < classes.size(); ++i) {
        require(ps.index.emplace(classes[i], i).second, ErrorKind::InvalidArgument,
                "init_proxies: duplicate class " + std::to_string(classes[i]));
        for (auto& v : ps.proxies.row(i)) v = rng.normal();
    }
    return ps;
}

namespace {

// Row-normalises m, returning the norms; zero rows are an error.
Matrix unit_rows(const Matrix& m, std::vector<double>& norms, const char* what) {
    Matrix u = m;
    norms.resize(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = norm2(m.row(r));
        require(n > 0.0 && std::isfinite(n), ErrorKind::NumericFailure,
                std::string("pal_loss: ") + what + " row " + std::to_string(r) + " has zero norm");
        norms[r] = n;
        for (auto& v : u.row(r)) v /= n;
    }
    return u;
}

// Gradient of a unit-vector function back to the raw vector.
void unnormalize_grad(Matrix& g, const Matrix& unit, const std::vector<double>& norms) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
        const double proj = dot(unit.row(r), g.row(r));
        auto gr = g.row(r);
        auto ur = unit.row(r);
        for (std::size_t c = 0; c < gr.size(); ++c) gr[c] = (gr[c] - ur[c] * proj) / norms[r];
    }
}

// softplus(LSE(z)) over the selected rows; writes d/dz into dz.
double softplus_lse(const std::vector<double>& z, std::vector<double>& dz) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double lse = zmax + std::log(sum);
    const double outer = sigmoid(lse);
    dz.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) dz[i] = outer * std::exp(z[i] - lse);
    return softplus(lse);
}

}  // namespace

PalResult pal_loss(const Matrix& e, std::span<const Label> labels, const ProxySet& ps) {
    check_labels(e, labels, "pal_loss");
    require(ps.size() > 0 && ps.proxies.cols() == e.cols(), ErrorKind::ShapeMismatch,
            "pal_loss: proxies are " + ps.proxies.shape_str() + " for embeddings " + e.shape_str());
    std::vector<std::size_t> label_row(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto it = ps.index.find(labels[i]);
        require(it != ps.index.end(), ErrorKind::InvalidArgument,
                "pal_loss: no proxy for class " + std::to_string(labels[i]));
        label_row[i] = it->second;
    }

    std::vector<double> e_norms, p_norms;
    const Matrix eu = unit_rows(e, e_norms, "embedding");
    const Matrix pu = unit_rows(ps.proxies, p_norms, "proxy");
    const Matrix sim = matmul_nt(eu, pu);  // n x C

    const std::size_t n = e.rows();
    const std::size_t classes = ps.size();
    std::vector<std::vector<std::size_t>> pos(classes), neg(classes);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < classes; ++c) (label_row[i] == c ? pos[c] : neg[c]).push_back(i);

    std::size_t n_pos_proxies = 0;
    for (const auto& p : pos) n_pos_proxies += p.empty() ? 0 : 1;

    const double alpha = ps.scale;
    const double m = ps.margin;
    Matrix dsim(n, classes);
    double pos_sum = 0.0;
    double neg_sum = 0.0;
    std::vector<double> z, dz;
    for (std::size_t c = 0; c < classes; ++c) {
        if (!pos[c].empty()) {
            z.clear();
            for (std::size_t i : pos[c]) z.push_back(-alpha * (sim(i, c) - m));
            pos_sum += softplus_lse(z, dz);
            for (std::size_t k = 0; k < pos[c].size(); ++k)
                dsim(pos[c][k], c) += -alpha * dz[k] / static_cast<double>(n_pos_proxies);
        }
        if (!neg[c].empty()) {
            z.clear();
            for (std::size_t i : neg[c]) z.push_back(alpha * (sim(i, c) + m));
            neg_sum += softplus_lse(z, dz);
            for (std::size_t k = 0; k < neg[c].size(); ++k)
                dsim(neg[c][k], c) += alpha * dz[k] / static_cast<double>(classes);
        }
    }

    PalResult out;
    out.loss = pos_sum / static_cast<double>(n_pos_proxies) + neg_sum / static_cast<double>(classes);
    out.grad = matmul(dsim, pu);
    out.proxy_grad = matmul_tn(dsim, eu);
    unnormalize_grad(out.grad, eu, e_norms);
    unnormalize_grad(out.proxy_grad, pu, p_norms);
    return out;
}

LossGrad embed_divergence(const Matrix& e, const Matrix& ref, DivergenceKind kind) {
    require(e.same_shape(ref), ErrorKind::ShapeMismatch,
            "embed_divergence: " + e.shape_str() + " vs reference " + ref.shape_str());
    require(e.rows() > 0, ErrorKind::InvalidArgument, "embed_divergence: empty batch");
    const double inv = 1.0 / static_cast<double>(e.rows());
    LossGrad out{0.0, Matrix(e.rows(), e.cols())};
    for (std::size_t r = 0; r < e.rows(); ++r) {
        auto er = e.row(r);
        auto rr = ref.row(r);
        auto gr = out.grad.row(r);
        if (kind == DivergenceKind::SquaredL2) {
            for (std::size_t c = 0; c < er.size(); ++c) {
                const double t = er[c] - rr[c];
                out.loss += inv * t * t;
                gr[c] = 2.0 * inv * t;
            }
            continue;
        }
        const double ne = norm2(er);
        const double nr = norm2(rr);
        require(ne > 0.0 && nr > 0.0, ErrorKind::NumericFailure,
                "embed_divergence: zero row " + std::to_string(r));
        const double cos = dot(er, rr) / (ne * nr);
        out.loss += inv * (1.0 - cos);
        // d(1 - cos)/de = -(r/|r| - cos * e/|e|) / |e|
        for (std::size_t c = 0; c < er.size(); ++c)
            gr[c] = -inv * (rr[c] / nr - cos * er[c] / ne) / ne;
    }
    return out;
}

std::vector<double> row_divergence(const Matrix& e, const Matrix& ref, DivergenceKind kind) {
    require(e.same_shape(ref), ErrorKind::ShapeMismatch,
            "row_divergence: " + e.shape_str() + " vs reference " + ref.shape_str());
    std::vector<double> out(e.rows());
    for (std::size_t r = 0; r < e.rows(); ++r) {
        auto er = e.row(r);
        auto rr = ref.row(r);
        if (kind == DivergenceKind::SquaredL2) {
            double s = 0.0;
            for (std::size_t c = 0; c < er.size(); ++c) s += (er[c] - rr[c]) * (er[c] - rr[c]);
            out[r] = s;
        } else {
            const double ne = norm2(er);
            const double nr = norm2(rr);
            require(ne > 0.0 && nr > 0.0, ErrorKind::NumericFailure,
                    "row_divergence: zero row " + std::to_string(r));
            out[r] = 1.0 - dot(er, rr) / (ne * nr);
        }
    }
    return out;
}

}  // namespace rdml
