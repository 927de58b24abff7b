#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "rdml/data.hpp"
#include "rdml/error.hpp"
#include "rdml/eval.hpp"

using namespace rdml;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "rdml_test_data";
    fs::create_directories(dir);
    return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("synthetic dataset invariants") {
    SyntheticSpec spec;
    spec.n_classes = 16;
    spec.per_class = 30;
    spec.dim = 20;
    Rng rng(1);
    const Dataset ds = gen_synthetic(spec, rng);
    CHECK(ds.size() == 480);
    CHECK(ds.dim() == 20);
    CHECK(ds.roster().size() == 16);
    CHECK_NOTHROW(ds.validate());
    for (double v : ds.x.data()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }

    // Recover the class means and confirm they sit in the centre box and are
    // far apart relative to the noise.
    std::map<Label, std::vector<double>> mean;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto& m = mean[ds.labels[i]];
        m.resize(ds.dim(), 0.0);
        for (std::size_t c = 0; c < ds.dim(); ++c) m[c] += ds.x(i, c) / 30.0;
    }
    for (const auto& [a, ma] : mean)
        for (const auto& [b, mb] : mean)
            if (a < b) {
                double d = 0.0;
                for (std::size_t c = 0; c < ds.dim(); ++c) d += (ma[c] - mb[c]) * (ma[c] - mb[c]);
                CHECK(std::sqrt(d) >= 4.0 * spec.sigma - 0.05);
            }
    CHECK(ds.provenance.contains("sigma"));

    Rng again(1);
    const Dataset twin = gen_synthetic(spec, again);
    CHECK(twin.x == ds.x);
    CHECK(twin.labels == ds.labels);
}

TEST_CASE("near-zero spread gives perfect raw retrieval") {
    SyntheticSpec spec;
    spec.sigma = 1e-6;
    Rng rng(2);
    const Dataset ds = gen_synthetic(spec, rng);
    CHECK(recall_at_k(ds.x, ds.labels, 1, Distance::Euclidean) == 1.0);
}

TEST_CASE("synthetic generator errors") {
    Rng rng(3);
    SyntheticSpec spec;
    spec.n_classes = 1;
    CHECK_THROWS_AS(gen_synthetic(spec, rng), Error);
    spec = {};
    spec.per_class = 1;
    CHECK_THROWS_AS(gen_synthetic(spec, rng), Error);
    spec = {};
    spec.sigma = 0.0;
    CHECK_THROWS_AS(gen_synthetic(spec, rng), Error);
    spec = {};
    spec.dim = 1;
    spec.sigma = 0.1;  // 16 centres 0.4 apart cannot fit in [0.2, 0.8]
    const auto msg = error_of([&] { gen_synthetic(spec, rng); });
    CHECK(msg.find("sigma") != std::string::npos);
}

TEST_CASE("class disjoint split") {
    Rng rng(4);
    const Dataset ds = gen_synthetic({}, rng);
    Rng s1(5), s2(5);
    auto [tr, te] = class_disjoint_split(ds, 0.5, s1);
    CHECK(tr.roster().size() == 8);
    CHECK(te.roster().size() == 8);
    CHECK(tr.role == Role::Train);
    CHECK(te.role == Role::Test);
    const auto train_roster = tr.roster();
    const std::set<Label> seen(train_roster.begin(), train_roster.end());
    for (Label c : te.roster()) CHECK(seen.count(c) == 0);
    CHECK(tr.size() + te.size() == ds.size());

    auto [tr2, te2] = class_disjoint_split(ds, 0.5, s2);
    CHECK(tr2.roster() == tr.roster());
    CHECK(te2.x == te.x);

    Rng s3(6);
    CHECK_THROWS_AS(class_disjoint_split(ds, 1.0, s3), Error);
    CHECK_THROWS_AS(class_disjoint_split(ds, 0.0, s3), Error);
    CHECK_THROWS_AS(class_disjoint_split(ds, 0.05, s3), Error);
}

TEST_CASE("csv round trip") {
    Rng rng(7);
    SyntheticSpec spec;
    spec.n_classes = 4;
    spec.per_class = 5;
    spec.dim = 3;
    const Dataset ds = gen_synthetic(spec, rng);
    const auto path = scratch("round_trip.csv");
    save_csv(ds, path.string());
    const Dataset back = load_csv(path.string());
    CHECK(back.x == ds.x);
    CHECK(back.labels == ds.labels);
    CHECK_FALSE(back.scaling.has_value());
}

TEST_CASE("csv scaling") {
    const auto path = scratch("pixels.csv");
    write_file(path, "f0,f1,label\n0,255,1\n127.5,0,1\n255,51,2\n0,0,2\n");
    const Dataset ds = load_csv(path.string());
    REQUIRE(ds.scaling.has_value());
    CHECK(ds.scaling->offset == 0.0);
    CHECK(ds.scaling->scale == doctest::Approx(1.0 / 255.0));
    CHECK(ds.x(0, 1) == 1.0);
    CHECK(ds.x(1, 0) == doctest::Approx(0.5));
    CHECK(ds.x(2, 1) == doctest::Approx(0.2));
    const auto meta = metadata_json(ds);
    CHECK(meta["scaling"]["scale"].get<double>() == doctest::Approx(1.0 / 255.0));
}

TEST_CASE("csv errors name the line") {
    const auto ragged = scratch("ragged.csv");
    write_file(ragged, "f0,f1,label\n0.1,0.2,0\n0.3,1\n0.1,0.1,1\n");
    auto msg = error_of([&] { load_csv(ragged.string()); });
    CHECK(msg.find(":3") != std::string::npos);

    const auto text = scratch("text.csv");
    write_file(text, "f0,f1,label\n0.1,0.2,0\n0.3,abc,0\n0.1,0.1,1\n0.2,0.2,1\n");
    msg = error_of([&] { load_csv(text.string()); });
    CHECK(msg.find(":3") != std::string::npos);

    const auto header = scratch("header.csv");
    write_file(header, "0.1,0.2,0\n0.3,0.1,0\n");
    msg = error_of([&] { load_csv(header.string()); });
    CHECK(msg.find(":1") != std::string::npos);

    const auto label = scratch("label.csv");
    write_file(label, "f0,label\n0.1,0\n0.2,x\n");
    CHECK_THROWS_AS(load_csv(label.string()), Error);

    try {
        load_csv(scratch("absent.csv").string());
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
        CHECK(std::string(e.what()).find("absent.csv") != std::string::npos);
    }
}

TEST_CASE("dataset validation") {
    Dataset ds;
    ds.x = Matrix{{0.1, 0.2}, {0.3, 0.4}, {0.5, 0.6}};
    ds.labels = {0, 0, 1};
    CHECK_THROWS_AS(ds.validate(), Error);  // class 1 has one sample
    ds.labels = {0, 0};
    CHECK_THROWS_AS(ds.validate(), Error);
    ds.labels = {0, 0, 0};
    ds.x(0, 0) = 1.5;
    CHECK_THROWS_AS(ds.validate(), Error);
}
