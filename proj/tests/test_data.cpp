#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include "cmi/data.hpp"
#include "cmi/simplex.hpp"
#include "cmi/table1.hpp"

using namespace cmi;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("cmi_data_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
};

std::string bytes(std::initializer_list<int> v) {
    std::string s;
    for (int b : v) s.push_back(static_cast<char>(b));
    return s;
}

}  // namespace

TEST(Blobs, SizesLabelsAndDeterminism) {
    const auto d = data::gen_blobs(2, 5, 4, 0.3, 1);
    EXPECT_EQ(d.size(), 10u);
    for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(d.labels[j], j < 5 ? 0u : 1u);
    EXPECT_EQ(d.features, data::gen_blobs(2, 5, 4, 0.3, 1).features);
    EXPECT_NE(d.features, data::gen_blobs(2, 5, 4, 0.3, 2).features);
}

TEST(Blobs, ZeroSpreadCollapsesClasses) {
    const auto d = data::gen_blobs(4, 3, 2, 0.0, 7);  // more classes than dims: random directions
    for (std::size_t j = 0; j < d.size(); ++j)
        for (std::size_t k = 0; k < d.dim(); ++k) EXPECT_EQ(d.features(j, k), d.features(j - j % 3, k));
    EXPECT_THROW(data::gen_blobs(1, 3, 2, 0.1, 0), InvalidInput);
}

TEST(Normalization, MinmaxMapsReferenceOntoUnitBox) {
    auto d = data::gen_blobs(3, 20, 3, 0.5, 3);
    const auto stats = data::fit_minmax(d.features);
    data::apply_stats(d, stats);
    for (std::size_t k = 0; k < 3; ++k) {
        double lo = 1, hi = 0;
        for (std::size_t j = 0; j < d.size(); ++j) {
            lo = std::min(lo, d.features(j, k));
            hi = std::max(hi, d.features(j, k));
        }
        EXPECT_NEAR(lo, 0.0, 1e-15);
        EXPECT_NEAR(hi, 1.0, 1e-15);
    }
}

TEST(Batching, PlanPartitionsIndices) {
    std::mt19937_64 rng(1);
    const data::BatchPlan plan(103, 10, rng);
    EXPECT_EQ(plan.batch_count(), 11u);
    std::multiset<std::size_t> seen;
    for (std::size_t b = 0; b < plan.batch_count(); ++b)
        for (std::size_t i : plan.batch(b)) seen.insert(i);
    EXPECT_EQ(seen.size(), 103u);
    for (std::size_t i = 0; i < 103; ++i) EXPECT_EQ(seen.count(i), 1u);
    EXPECT_EQ(plan.batch(10).size(), 3u);
}

TEST(Batching, StratifiedBatchesArePure) {
    std::vector<std::size_t> y{0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2};
    const data::Dataset d{nn::Tensor(y.size(), 1), LabelVector(y, 3), std::nullopt};
    const auto one = data::stratified_batches(d, 1, 4);
    for (std::size_t c = 0; c < 3; ++c) {
        ASSERT_EQ(one[c].size(), 1u);
        EXPECT_EQ(y[one[c][0]], c);
    }
    const auto eight = data::stratified_batches(d, 8, 4);
    for (std::size_t c = 0; c < 3; ++c) {
        ASSERT_EQ(eight[c].size(), 8u);
        for (std::size_t i : eight[c]) EXPECT_EQ(y[i], c);
    }
    // class 1 and 2 are large enough to sample without replacement
    EXPECT_EQ(std::set<std::size_t>(eight[2].begin(), eight[2].end()).size(), 8u);
    EXPECT_EQ(eight, data::stratified_batches(d, 8, 4));

    const data::Dataset missing{nn::Tensor(2, 1), LabelVector({0, 0}, 2), std::nullopt};
    EXPECT_THROW(data::stratified_batches(missing, 2, 0), EmptyClass);
}

TEST_F(TempDir, IdxSinglePixelFixture) {
    io::write_file(path("img"), bytes({0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 255}));
    io::write_file(path("lab"), bytes({0, 0, 8, 1, 0, 0, 0, 1, 7}));
    const auto d = data::load_idx(path("img"), path("lab"));
    EXPECT_EQ(d.size(), 1u);
    EXPECT_EQ(d.features(0, 0), 1.0);
    EXPECT_EQ(d.labels[0], 7u);
    EXPECT_EQ(d.classes(), 8u);
}

TEST_F(TempDir, IdxErrors) {
    io::write_file(path("img"), bytes({0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 255, 0}));
    io::write_file(path("lab"), bytes({0, 0, 8, 1, 0, 0, 0, 1, 7}));
    EXPECT_THROW(data::load_idx(path("img"), path("lab")), FormatError);  // count mismatch

    io::write_file(path("bad"), bytes({0, 0, 8, 2, 0, 0, 0, 1}));
    try {
        data::load_idx(path("bad"), path("lab"));
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("byte offset 0"), std::string::npos) << e.what();
    }
    io::write_file(path("short"), bytes({0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 1, 0, 0, 0, 1, 9}));
    io::write_file(path("lab4"), bytes({0, 0, 8, 1, 0, 0, 0, 4, 1, 2, 3, 4}));
    EXPECT_THROW(data::load_idx(path("short"), path("lab4")), FormatError);
    EXPECT_THROW(data::load_idx(path("nope"), path("lab")), FormatError);
}

TEST_F(TempDir, IdxRoundTrip) {
    std::vector<double> px;
    for (int i = 0; i < 12; ++i) px.push_back(i * 17 / 255.0);
    const data::Dataset d{nn::Tensor(3, 4, px), LabelVector({2, 0, 1}, 3), std::nullopt};
    data::write_idx(d, 2, 2, path("i"), path("l"));
    const auto back = data::load_idx(path("i"), path("l"), 3);
    EXPECT_EQ(back.labels, d.labels);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(back.features[i], d.features[i]);
}

TEST_F(TempDir, ProbCsvLoading) {
    io::write_file(path("ok.csv"), "label,p0,p1\n0,0.25,0.75\n1,1,0\n");
    const auto ok = data::load_probmatrix_csv(path("ok.csv"));
    EXPECT_EQ(ok.probs(0, 1), 0.75);
    EXPECT_EQ(ok.labels[1], 1u);
    EXPECT_EQ(ok.renormalized_rows, 0u);

    io::write_file(path("loose.csv"), "label,p0,p1\n0,0.5000004,0.5\n");
    const auto loose = data::load_probmatrix_csv(path("loose.csv"));
    EXPECT_NEAR(loose.probs(0, 0) + loose.probs(0, 1), 1.0, 1e-15);

    io::write_file(path("bad.csv"), "label,p0,p1\n0,0.5,0.5\n1,0.4,0.5\n");
    try {
        data::load_probmatrix_csv(path("bad.csv"));
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    io::write_file(path("hdr.csv"), "y,p0,p1\n0,0.5,0.5\n");
    EXPECT_THROW(data::load_probmatrix_csv(path("hdr.csv")), FormatError);
    io::write_file(path("lab.csv"), "label,p0,p1\n2,0.5,0.5\n");
    EXPECT_THROW(data::load_probmatrix_csv(path("lab.csv")), FormatError);
}

TEST_F(TempDir, DatasetCsvRoundTrip) {
    const auto d = data::gen_blobs(3, 4, 2, 0.7, 9);
    io::write_file(path("d.csv"), data::dataset_csv(d));
    const auto back = data::load_dataset_csv(path("d.csv"));
    EXPECT_EQ(back.features, d.features);
    EXPECT_EQ(back.labels, d.labels);
    io::write_file(path("nan.csv"), "label,f0\n0,nan\n");
    EXPECT_THROW(data::load_dataset_csv(path("nan.csv")), FormatError);
}

TEST(Simplex, VerticesAndBarycenter) {
    const simplex::Triple t{0, 1, 2};
    const auto v0 = *simplex::project_probs(std::vector<double>{1, 0, 0}, t);
    EXPECT_EQ(v0.u, 0.0);
    EXPECT_EQ(v0.v, 0.0);
    const auto v1 = *simplex::project_probs(std::vector<double>{0, 1, 0}, t);
    EXPECT_EQ(v1.u, 1.0);
    EXPECT_EQ(v1.v, 0.0);
    const auto c = *simplex::project_probs(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}, t);
    EXPECT_NEAR(c.u, 0.5, 1e-15);
    EXPECT_NEAR(c.v, std::sqrt(3.0) / 6.0, 1e-15);
    EXPECT_FALSE(simplex::project_probs(std::vector<double>{0, 0, 0, 1}, t).has_value());
    const auto z = simplex::project_logits(std::vector<double>{5, 5, 5, -2}, t);
    EXPECT_NEAR(z.u, 0.5, 1e-15);
    EXPECT_THROW(simplex::project_probs(std::vector<double>{0.5, 0.5, 0}, {0, 0, 1}), InvalidInput);
}

TEST(Table1, BundledRowsAndCorrelation) {
    const auto r = table1::report();
    EXPECT_EQ(r.recomputed_ncmi.size(), 18u);
    EXPECT_NEAR(r.recomputed_ncmi[0], 0.101, table1::kRoundingTolerance);   // ResNet18
    EXPECT_NEAR(r.recomputed_ncmi[13], 0.067, table1::kRoundingTolerance);  // EfficientNet-B3
    EXPECT_NEAR(r.pearson_published, table1::kPublishedPearson, 0.01);
    EXPECT_NEAR(r.pearson_recomputed, table1::kPublishedPearson, 0.01);
    EXPECT_EQ(r.rows_within_tolerance, 12u);
    EXPECT_LT(r.max_discrepancy, 0.001);
}
