#include <cmath>
#include <algorithm>
#include <fstream>
#include <random>

#include "doctest.h"
#include "eigmeta/data.hpp"
#include "eigmeta/errors.hpp"
#include "helpers.hpp"

using eigmeta::ErrorKind;
using eigmeta::Matrix;
namespace data = eigmeta::data;

namespace {

std::filesystem::path write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream(path) << text;
    return path;
}

ErrorKind load_error(const std::filesystem::path& path) {
    try {
        data::load_csv(path, "label", false);
    } catch (const eigmeta::Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Config;
}

data::LabeledDataset grid_task(std::size_t normals, std::size_t anomalies) {
    data::LabeledDataset ds;
    ds.name = "grid";
    ds.columns = {"a", "b"};
    ds.attributes = Matrix(normals + anomalies, 2);
    for (std::size_t i = 0; i < normals + anomalies; ++i) {
        ds.attributes(i, 0) = static_cast<double>(i);
        ds.attributes(i, 1) = -static_cast<double>(i);
        ds.labels.push_back(i < normals ? 0 : 1);
    }
    return ds;
}

}  // namespace

TEST_CASE("load_csv round-trips a handcrafted file") {
    const auto dir = testing::scratch_dir("data_roundtrip");
    const auto path = write_file(dir / "toy.csv",
                                 "# comment line\n"
                                 "x,label,y\n"
                                 "1.5,0,-2\n"
                                 "0.25,1,3e2\n"
                                 "7,0,0.125\n");
    const data::LabeledDataset ds = data::load_csv(path, "label", false);
    CHECK(ds.columns == std::vector<std::string>{"x", "y"});
    CHECK(ds.attributes == Matrix{{1.5, -2}, {0.25, 300}, {7, 0.125}});
    CHECK(ds.labels == std::vector<int>{0, 1, 0});

    data::write_csv(dir / "copy.csv", ds, {"seed: 1"});
    const data::LabeledDataset back = data::load_csv(dir / "copy.csv", "label", false);
    CHECK(back.attributes == ds.attributes);
    CHECK(back.labels == ds.labels);
}

TEST_CASE("load_csv error kinds") {
    const auto dir = testing::scratch_dir("data_errors");
    CHECK(load_error(write_file(dir / "a.csv", "x,label\n1,2\n")) == ErrorKind::NonBinaryLabel);
    CHECK(load_error(write_file(dir / "b.csv", "x,label\n1,0,3\n")) == ErrorKind::Parse);
    CHECK(load_error(write_file(dir / "c.csv", "x,label\nabc,0\n")) == ErrorKind::Parse);
    CHECK(load_error(write_file(dir / "d.csv", "x,y\n1,0\n")) == ErrorKind::Parse);
    CHECK(load_error(dir / "missing.csv") == ErrorKind::Io);
}

TEST_CASE("load_csv normalization yields zero mean and unit variance") {
    const auto dir = testing::scratch_dir("data_norm");
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(5.0, 3.0);
    std::string text = "a,b,const,label\n";
    for (int i = 0; i < 200; ++i) {
        text += std::to_string(normal(rng)) + "," + std::to_string(normal(rng) * 10) + ",4," +
                std::to_string(i % 7 == 0 ? 1 : 0) + "\n";
    }
    std::vector<std::string> warnings;
    const auto ds = data::load_csv(write_file(dir / "n.csv", text), "label", true, &warnings);
    CHECK(ds.columns == std::vector<std::string>{"a", "b"});
    CHECK(warnings.size() == 1);
    for (std::size_t c = 0; c < ds.dim(); ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) mean += ds.attributes(i, c);
        mean /= static_cast<double>(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) var += std::pow(ds.attributes(i, c) - mean, 2);
        var /= static_cast<double>(ds.size());
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
    }
}

TEST_CASE("transform_task with the identity reproduces the base") {
    const auto base = grid_task(6, 3);
    const auto task = data::transform_task(base, Matrix::identity(2), "copy");
    CHECK(task.attributes == base.attributes);
    CHECK(task.labels == base.labels);
}

TEST_CASE("synthesize_tasks is deterministic and splits in order") {
    const auto base = grid_task(40, 8);
    const auto a = data::synthesize_tasks(base, 2, 1, 1, 9);
    const auto b = data::synthesize_tasks(base, 2, 1, 1, 9);
    REQUIRE(a.tasks.size() == 4);
    for (std::size_t t = 0; t < 4; ++t) CHECK(a.tasks[t].attributes == b.tasks[t].attributes);
    CHECK(a.splits == std::vector<data::Split>{data::Split::Train, data::Split::Train,
                                               data::Split::Validation, data::Split::Target});
    CHECK(a.indices(data::Split::Train) == std::vector<std::size_t>{0, 1});
    CHECK(!(a.tasks[0].attributes == a.tasks[1].attributes));
}

TEST_CASE("sample_episode on a minimal task uses every instance once") {
    const auto task = grid_task(30, 6);
    std::mt19937_64 rng(1);
    const data::Episode ep = data::sample_episode(task, {}, rng);
    std::vector<int> seen(36, 0);
    for (const Matrix* m : {&ep.support.normals, &ep.support.anomalies, &ep.query_normals, &ep.query_anomalies})
        for (std::size_t r = 0; r < m->rows(); ++r) ++seen[static_cast<std::size_t>((*m)(r, 0))];
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
    for (std::size_t r = 0; r < ep.query_anomalies.rows(); ++r) CHECK(ep.query_anomalies(r, 0) >= 30);
    CHECK(ep.support.anomalies(0, 0) >= 30);
}

TEST_CASE("sample_episode without enough anomalies fails") {
    const auto task = grid_task(40, 0);
    std::mt19937_64 rng(1);
    try {
        data::sample_episode(task, {}, rng);
        FAIL("expected InsufficientInstances");
    } catch (const eigmeta::Error& e) {
        CHECK(e.kind() == ErrorKind::InsufficientInstances);
    }
}

TEST_CASE("support anomalies are drawn uniformly") {
    const std::size_t n_anomalies = 10, draws = 10000;
    const auto task = grid_task(30, n_anomalies);
    std::mt19937_64 rng(77);
    std::vector<std::size_t> counts(n_anomalies, 0);
    for (std::size_t i = 0; i < draws; ++i) {
        const auto ep = data::sample_episode(task, {}, rng);
        ++counts[static_cast<std::size_t>(ep.support.anomalies(0, 0)) - 30];
    }
    const double p = 1.0 / n_anomalies;
    const double sigma = std::sqrt(draws * p * (1.0 - p));
    for (std::size_t c : counts) CHECK(std::abs(static_cast<double>(c) - draws * p) < 3.0 * sigma + 1.0);
}

TEST_CASE("manifest round trip") {
    const auto dir = testing::scratch_dir("data_manifest");
    const auto bundle = data::ring_family(2, 1, 1, 5);
    data::write_manifest(dir, bundle, "manifest.json", R"({"seed": 5})");
    const auto back = data::load_manifest(dir / "manifest.json");
    REQUIRE(back.tasks.size() == 4);
    CHECK(back.splits == bundle.splits);
    CHECK(back.seed == 5);
    for (std::size_t t = 0; t < 4; ++t) {
        CHECK(back.tasks[t].attributes == bundle.tasks[t].attributes);
        CHECK(back.tasks[t].labels == bundle.tasks[t].labels);
    }
}

TEST_CASE("stream seeds differ across streams") {
    CHECK(data::stream_seed(1, 0, 0) != data::stream_seed(1, 1, 0));
    CHECK(data::stream_seed(1, 0, 0) != data::stream_seed(1, 0, 1));
    CHECK(data::stream_seed(1, 0, 0) != data::stream_seed(2, 0, 0));
    CHECK(data::stream_seed(1, 2, 3) == data::stream_seed(1, 2, 3));
}

TEST_CASE("task matrix entries follow U(-1, 1)") {
    std::mt19937_64 rng(12);
    std::vector<double> v;
    for (int i = 0; i < 100; ++i) {
        const Matrix r = data::random_task_matrix(10, rng);
        v.insert(v.end(), r.values().begin(), r.values().end());
    }
    std::sort(v.begin(), v.end());
    double d = 0.0;
    const double n = static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double cdf = (v[i] + 1.0) / 2.0;
        d = std::max({d, std::abs(cdf - i / n), std::abs((i + 1) / n - cdf)});
    }
    // Kolmogorov-Smirnov critical value at the 1% level.
    CHECK(d < 1.63 / std::sqrt(n));
}
