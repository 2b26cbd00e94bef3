#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "imspeech/rng.hpp"
#include "imspeech/shallow.hpp"

using namespace imspeech;

namespace {

struct Blobs {
    FeatureMatrix x;
    std::vector<int> y;
};

// Class k is centred on the k-th unit vector.
Blobs blobs(std::size_t per_class, std::size_t classes, std::size_t dim, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    Blobs b;
    b.x.resize(static_cast<Eigen::Index>(per_class * classes), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < per_class * classes; ++i) {
        const std::size_t k = i % classes;
        for (std::size_t j = 0; j < dim; ++j)
            b.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (j == k ? 1.0 : 0.0) + sigma * rng.normal();
        b.y.push_back(static_cast<int>(k));
    }
    return b;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// SVM

TEST(Svm, SeparableBlobsFitPerfectly) {
    FeatureMatrix x(8, 2);
    x << -3, -2, -2, -3, -3, -3, -2, -2, 2, 3, 3, 2, 3, 3, 2, 2;
    const std::vector<int> y{0, 0, 0, 0, 1, 1, 1, 1};
    const auto m = svm_fit(x, y);
    EXPECT_EQ(svm_predict(m, x), y);
}

TEST(Svm, SymmetricDataHasZeroBias) {
    Rng rng(2);
    FeatureMatrix x(40, 3);
    std::vector<int> y;
    for (Eigen::Index i = 0; i < 20; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal() + (j == 0 ? 1.0 : 0.0);
        x.row(i + 20) = -x.row(i);
    }
    for (int i = 0; i < 40; ++i) y.push_back(i < 20 ? 1 : 0);
    const auto m = svm_fit(x, y);
    for (Eigen::Index k = 0; k < 2; ++k) EXPECT_LE(std::abs(m.bias(k)), 1e-3);
}

TEST(Svm, TenDimensionalBlobsHeldOut) {
    const auto train = blobs(50, 4, 10, 0.2, 3), test = blobs(50, 4, 10, 0.2, 4);
    const auto m = svm_fit(train.x, train.y, 1.0, 200, 7);
    EXPECT_GE(accuracy(svm_predict(m, test.x), test.y), 0.95);
}

TEST(Svm, TiesGoToLowestClass) {
    LinearSvmModel m;
    m.mean = Eigen::VectorXd::Zero(2);
    m.std = Eigen::VectorXd::Ones(2);
    m.weights.resize(3, 2);
    m.weights << -1, 0, 1, 0, 1, 0;
    m.bias = Eigen::VectorXd::Zero(3);
    FeatureMatrix x(1, 2);
    x << 1, 0.5;
    EXPECT_EQ(svm_predict(m, x), std::vector<int>{1});
}

TEST(Svm, DeterministicForFixedSeed) {
    const auto b = blobs(20, 3, 5, 0.5, 5);
    const auto m1 = svm_fit(b.x, b.y, 1.0, 50, 11), m2 = svm_fit(b.x, b.y, 1.0, 50, 11);
    EXPECT_EQ(m1.weights, m2.weights);
    EXPECT_EQ(m1.bias, m2.bias);
}

TEST(Svm, Errors) {
    FeatureMatrix x = FeatureMatrix::Ones(4, 2);
    try {
        svm_fit(x, std::vector<int>{1, 1, 1, 1});
        ADD_FAILURE() << "single class accepted";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidLabel);
    }
    EXPECT_THROW(svm_fit(x, std::vector<int>{0, 1, 0, 1}, 0.0), Error);
    const auto b = blobs(5, 2, 3, 0.1, 6);
    const auto m = svm_fit(b.x, b.y);
    try {
        svm_predict(m, FeatureMatrix::Zero(2, 4));
        ADD_FAILURE() << "dimension mismatch accepted";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Shape);
    }
}

TEST(Svm, ContainerRoundTripKeepsPredictions) {
    const auto train = blobs(20, 4, 6, 0.4, 8), test = blobs(20, 4, 6, 0.4, 9);
    const auto m = svm_fit(train.x, train.y);
    const auto back = svm_from(eegd::decode(eegd::encode(to_container(m))));
    EXPECT_EQ(back.C, m.C);
    EXPECT_LT((back.weights - m.weights).norm(), 1e-5 * m.weights.norm());
    EXPECT_EQ(svm_predict(back, test.x), svm_predict(m, test.x));
}

// ---------------------------------------------------------------------------
// LDA

TEST(Lda, OneDimensionalBoundaryAtMidpoint) {
    Rng rng(10);
    FeatureMatrix x(4000, 1);
    std::vector<int> y;
    for (Eigen::Index i = 0; i < 4000; ++i) {
        const int cls = static_cast<int>(i % 2);
        x(i, 0) = (cls == 0 ? -1.0 : 1.0) + rng.normal();
        y.push_back(cls);
    }
    const auto m = lda_fit(x, y);
    // delta_1 - delta_0 is affine in x; its root is the boundary.
    FeatureMatrix probe(2, 1);
    probe << 0.0, 1.0;
    const auto d = m.discriminants(probe);
    const double at0 = d(0, 1) - d(0, 0), slope = (d(1, 1) - d(1, 0)) - at0;
    EXPECT_NEAR(-at0 / slope, 0.0, 0.05);
}

TEST(Lda, DuplicatingSamplesLeavesModelUnchanged) {
    const auto b = blobs(10, 3, 4, 0.5, 12);
    FeatureMatrix x2(2 * b.x.rows(), b.x.cols());
    x2 << b.x, b.x;
    std::vector<int> y2 = b.y;
    y2.insert(y2.end(), b.y.begin(), b.y.end());
    const auto m1 = lda_fit(b.x, b.y), m2 = lda_fit(x2, y2);
    EXPECT_LT((m1.means - m2.means).norm(), 1e-12);
    EXPECT_LT((m1.cov_inverse - m2.cov_inverse).norm(), 1e-9 * m1.cov_inverse.norm());
    EXPECT_LT((m1.priors - m2.priors).norm(), 1e-15);
}

TEST(Lda, ClassMeansAndBlobs) {
    const auto train = blobs(50, 4, 10, 0.2, 13), test = blobs(50, 4, 10, 0.2, 14);
    const auto m = lda_fit(train.x, train.y);
    EXPECT_EQ(lda_predict(m, m.means), (std::vector<int>{0, 1, 2, 3}));
    EXPECT_GE(accuracy(lda_predict(m, test.x), test.y), 0.95);
}

TEST(Lda, MidpointTieGoesToLowerClass) {
    FeatureMatrix x(4, 1);
    x << -1.5, -0.5, 0.5, 1.5;
    const auto m = lda_fit(x, std::vector<int>{0, 0, 1, 1});
    EXPECT_EQ(lda_predict(m, FeatureMatrix::Zero(1, 1)), std::vector<int>{0});
}

TEST(Lda, DecisionRegionsAreConvexAlongSegments) {
    const auto b = blobs(30, 4, 3, 0.6, 15);
    const auto m = lda_fit(b.x, b.y);
    Rng rng(16);
    for (int s = 0; s < 50; ++s) {
        Eigen::RowVectorXd p(3), q(3);
        for (int j = 0; j < 3; ++j) {
            p(j) = rng.uniform(-2, 3);
            q(j) = rng.uniform(-2, 3);
        }
        FeatureMatrix line(400, 3);
        for (Eigen::Index i = 0; i < 400; ++i) line.row(i) = p + (q - p) * (static_cast<double>(i) / 399.0);
        const auto pred = lda_predict(m, line);
        // Each class occupies at most one contiguous run.
        std::vector<int> seen;
        for (std::size_t i = 0; i < pred.size(); ++i)
            if (i == 0 || pred[i] != pred[i - 1]) seen.push_back(pred[i]);
        std::vector<int> sorted = seen;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
    }
}

TEST(Lda, ErrorsAndRoundTrip) {
    FeatureMatrix x(3, 2);
    x << 0, 1, 1, 0, 2, 2;
    try {
        lda_fit(x, std::vector<int>{0, 0, 1});
        ADD_FAILURE() << "singleton class accepted";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
    }
    const auto b = blobs(10, 2, 3, 0.3, 17);
    const auto m = lda_fit(b.x, b.y);
    EXPECT_THROW(lda_predict(m, FeatureMatrix::Zero(1, 2)), Error);
    const auto back = lda_from(eegd::decode(eegd::encode(to_container(m))));
    EXPECT_EQ(lda_predict(back, b.x), lda_predict(m, b.x));
}

}  // namespace
