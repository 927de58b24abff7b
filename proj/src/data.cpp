#include "rdml/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "rdml/error.hpp"

namespace rdml {

const char* to_string(Role role) {
    switch (role) {
        case Role::Train: return "train";
        case Role::Test: return "test";
        case Role::Unsplit: return "unsplit";
    }
    return "unsplit";
}

std::vector<Label> Dataset::roster() const {
    std::set<Label> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
}

void Dataset::validate() const {
    require(x.rows() == labels.size(), ErrorKind::ShapeMismatch,
            "dataset: " + std::to_string(x.rows()) + " rows but " + std::to_string(labels.size()) +
                " labels");
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        require(v >= 0.0 && v <= 1.0, ErrorKind::InvalidArgument,
                "dataset: feature value " + std::to_string(v) + " at row " +
                    std::to_string(i / std::max<std::size_t>(x.cols(), 1)) + " is outside [0,1]");
    }
    std::map<Label, std::size_t> counts;
    for (Label l : labels) ++counts[l];
    for (const auto& [label, count] : counts)
        require(count >= 2, ErrorKind::InvalidArgument,
                "dataset: class " + std::to_string(label) + " has only one sample");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.x = x.gather_rows(indices);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels[i]);
    out.role = role;
    out.scaling = scaling;
    out.provenance = provenance;
    return out;
}

Dataset gen_synthetic(const SyntheticSpec& spec, Rng& rng) {
    require(spec.n_classes >= 2, ErrorKind::InvalidArgument, "gen_synthetic: need at least 2 classes");
    require(spec.per_class >= 2, ErrorKind::InvalidArgument,
            "gen_synthetic: need at least 2 samples per class");
    require(spec.dim >= 1, ErrorKind::InvalidArgument, "gen_synthetic: dimension must be positive");
    require(spec.sigma > 0.0 && std::isfinite(spec.sigma), ErrorKind::InvalidArgument,
            "gen_synthetic: sigma must be positive");
    require(spec.centre_lo >= 0.0 && spec.centre_hi <= 1.0 && spec.centre_lo < spec.centre_hi,
            ErrorKind::InvalidArgument, "gen_synthetic: centre box must be a proper sub-interval of [0, 1]");

    constexpr int kMaxRetries = 10000;
    const double min_sep = 4.0 * spec.sigma;
    Rng centre_rng = rng.derive("data.centres");
    Rng noise_rng = rng.derive("data.noise");

    Matrix centres(spec.n_classes, spec.dim);
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
            for (auto& v : centres.row(c)) v = centre_rng.uniform(spec.centre_lo, spec.centre_hi);
            placed = true;
            for (std::size_t o = 0; o < c && placed; ++o) {
                double s = 0.0;
                for (std::size_t f = 0; f < spec.dim; ++f)
                    s += (centres(c, f) - centres(o, f)) * (centres(c, f) - centres(o, f));
                placed = std::sqrt(s) >= min_sep;
            }
        }
        require(placed, ErrorKind::InvalidArgument,
                "gen_synthetic: could not place class centres " + std::to_string(min_sep) +
                    " apart after 10000 retries; use a larger dimension or smaller sigma");
    }

    Dataset ds;
    ds.x = Matrix(spec.n_classes * spec.per_class, spec.dim);
    ds.labels.reserve(ds.x.rows());
    for (std::size_t c = 0; c < spec.n_classes; ++c)
        for (std::size_t s = 0; s < spec.per_class; ++s) {
            const std::size_t r = c * spec.per_class + s;
            for (std::size_t f = 0; f < spec.dim; ++f)
                ds.x(r, f) = std::clamp(centres(c, f) + spec.sigma * noise_rng.normal(), 0.0, 1.0);
            ds.labels.push_back(static_cast<Label>(c));
        }
    ds.provenance = {{"generator", "synthetic"},
                     {"n_classes", spec.n_classes},
                     {"per_class", spec.per_class},
                     {"dim", spec.dim},
                     {"sigma", spec.sigma},
                     {"centre_lo", spec.centre_lo},
                     {"centre_hi", spec.centre_hi},
                     {"min_centre_separation", min_sep},
                     {"rng_key", rng.key()}};
    ds.validate();
    return ds;
}

std::pair<Dataset, Dataset> class_disjoint_split(const Dataset& ds, double train_fraction, Rng& rng) {
    require(train_fraction > 0.0 && train_fraction < 1.0, ErrorKind::InvalidArgument,
            "class_disjoint_split: train fraction must lie strictly between 0 and 1");
    auto classes = ds.roster();
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(classes.size())));
    require(n_train >= 2 && classes.size() - n_train >= 2, ErrorKind::InvalidArgument,
            "class_disjoint_split: " + std::to_string(classes.size()) +
                " classes cannot give >= 2 classes on each side at fraction " +
                std::to_string(train_fraction));
    Rng split_rng = rng.derive("data.class_split");
    split_rng.shuffle(classes);
    const std::set<Label> train_set(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_train));

    std::vector<std::size_t> train_idx, test_idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        (train_set.count(ds.labels[i]) ? train_idx : test_idx).push_back(i);
    Dataset train = ds.subset(train_idx);
    Dataset test = ds.subset(test_idx);
    train.role = Role::Train;
    test.role = Role::Test;
    return {std::move(train), std::move(test)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Io, "load_csv: cannot open '" + path + "'");
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Config,
            path + ":1: missing header row");
    const auto header = split_csv_line(line);
    require(header.size() >= 2, ErrorKind::Config, path + ":1: header needs features and a label");
    for (std::size_t i = 0; i + 1 < header.size(); ++i)
        require(trim(header[i]) == "f" + std::to_string(i), ErrorKind::Config,
                path + ":1: expected header column 'f" + std::to_string(i) + "', got '" +
                    trim(header[i]) + "'");
    require(trim(header.back()) == "label", ErrorKind::Config,
            path + ":1: last header column must be 'label'");
    const std::size_t m = header.size() - 1;

    std::vector<double> values;
    std::vector<Label> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        require(cells.size() == m + 1, ErrorKind::Config,
                path + ":" + std::to_string(line_no) + ": expected " + std::to_string(m + 1) +
                    " cells, got " + std::to_string(cells.size()));
        for (std::size_t i = 0; i < m; ++i) {
            const std::string cell = trim(cells[i]);
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            require(res.ec == std::errc() && res.ptr == cell.data() + cell.size() && std::isfinite(v),
                    ErrorKind::Config,
                    path + ":" + std::to_string(line_no) + ": non-numeric feature '" + cell + "'");
            values.push_back(v);
        }
        const std::string cell = trim(cells[m]);
        long long label = 0;
        const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), label);
        require(res.ec == std::errc() && res.ptr == cell.data() + cell.size(), ErrorKind::Config,
                path + ":" + std::to_string(line_no) + ": label '" + cell + "' is not an integer");
        labels.push_back(static_cast<Label>(label));
    }
    require(!labels.empty(), ErrorKind::Config, path + ": no data rows");

    Dataset ds;
    ds.x = Matrix(labels.size(), m, std::move(values));
    ds.labels = std::move(labels);
    const auto [lo_it, hi_it] = std::minmax_element(ds.x.data().begin(), ds.x.data().end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (lo < 0.0 || hi > 1.0) {
        ScaleTransform t;
        t.offset = lo;
        t.scale = hi > lo ? 1.0 / (hi - lo) : 1.0;
        for (auto& v : ds.x.data()) v = std::clamp((v - t.offset) * t.scale, 0.0, 1.0);
        ds.scaling = t;
    }
    ds.provenance = {{"source", path}};
    ds.validate();
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), ErrorKind::Io, "save_csv: cannot write '" + path + "'");
    for (std::size_t f = 0; f < ds.dim(); ++f) out << 'f' << f << ',';
    out << "label\n";
    char buf[40];
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (double v : ds.x.row(r)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << buf << ',';
        }
        out << ds.labels[r] << '\n';
    }
    require(out.good(), ErrorKind::Io, "save_csv: write to '" + path + "' failed");
}

nlohmann::json metadata_json(const Dataset& ds) {
    nlohmann::json j = {{"role", to_string(ds.role)},
                        {"samples", ds.size()},
                        {"dim", ds.dim()},
                        {"classes", ds.roster()},
                        {"provenance", ds.provenance}};
    if (ds.scaling) j["scaling"] = {{"offset", ds.scaling->offset}, {"scale", ds.scaling->scale}};
    else j["scaling"] = nullptr;
    return j;
}

}  // namespace rdml
