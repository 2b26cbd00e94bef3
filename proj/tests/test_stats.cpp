#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "imspeech/fixtures.hpp"
#include "imspeech/rng.hpp"
#include "imspeech/stats.hpp"

using namespace imspeech;
using namespace imspeech::stats;

namespace {

// Reference values below were computed independently with scipy.stats
// (ttest_rel, shapiro, levene(center="mean")) from the same inputs.

TEST(MeanStd, PublishedColumnsAgainstOracle) {
    struct Case {
        std::vector<double> col;
        double mean, std;
    };
    const auto& t1 = fixtures::table1().table;
    const auto& t2 = fixtures::table2().table;
    const std::vector<Case> cases{{t1.column(0), 0.40197, 0.049149523565001796},
                                  {t1.column(1), 0.42018, 0.05345282031848274},
                                  {t1.column(2), 0.56481, 0.01966511010789302},
                                  {t2.column(0), 0.51054, 0.02325253630132517},
                                  {t2.column(1), 0.51724, 0.020147577742470408}};
    for (const auto& c : cases) {
        const auto r = mean_std(c.col);
        EXPECT_NEAR(r.mean, c.mean, 1e-12);
        EXPECT_NEAR(r.std, c.std, 1e-12);
    }
}

TEST(MeanStd, ProposedColumnMatchesPrintedRow) {
    const auto r = mean_std(fixtures::proposed_column());
    EXPECT_NEAR(r.mean, 0.5648, 5e-5);
    EXPECT_NEAR(r.std, 0.0197, 5e-5);
}

TEST(MeanStd, TrivialCases) {
    const auto c = mean_std(std::vector<double>{3.5, 3.5, 3.5});
    EXPECT_DOUBLE_EQ(c.mean, 3.5);
    EXPECT_DOUBLE_EQ(c.std, 0.0);
    const auto r = mean_std(std::vector<double>{0.0, 1.0});
    EXPECT_DOUBLE_EQ(r.mean, 0.5);
    EXPECT_NEAR(r.std, 0.70711, 1e-5);
}

TEST(MeanStd, NeedsTwoValues) {
    try {
        mean_std(std::vector<double>{1.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
    }
}

TEST(IncompleteBeta, KnownValues) {
    // I_x(1, 1) = x; I_x(a, 1) = x^a; I_0.5(a, a) = 0.5.
    EXPECT_NEAR(incomplete_beta(1, 1, 0.3), 0.3, 1e-14);
    EXPECT_NEAR(incomplete_beta(3, 1, 0.7), std::pow(0.7, 3), 1e-14);
    EXPECT_NEAR(incomplete_beta(4.5, 4.5, 0.5), 0.5, 1e-14);
    EXPECT_NEAR(incomplete_beta(2, 3, 0.4) + incomplete_beta(3, 2, 0.6), 1.0, 1e-14);
}

TEST(TDistribution, CauchyTailIsAnalytic) {
    // df = 1 is the Cauchy distribution: P(|T| >= t) = 1 - 2 atan(t) / pi.
    for (double t : {0.1, 1.0, 3.0, 20.0})
        EXPECT_NEAR(t_two_sided_p(t, 1), 1 - 2 * std::atan(t) / std::numbers::pi, 1e-12);
    // df = 2: P(|T| >= t) = 1 - t / sqrt(2 + t^2).
    for (double t : {0.5, 2.0, 7.0}) EXPECT_NEAR(t_two_sided_p(t, 2), 1 - t / std::sqrt(2 + t * t), 1e-12);
}

TEST(FDistribution, ExponentialCase) {
    // F(2, d2) upper tail: (1 + 2 f / d2)^(-d2 / 2).
    for (double f : {0.3, 1.0, 4.0}) EXPECT_NEAR(f_upper_p(f, 2, 10), std::pow(1 + 2 * f / 10, -5.0), 1e-12);
}

TEST(NormalQuantile, InvertsCdf) {
    for (double p : {1e-10, 0.001, 0.1, 0.5, 0.77, 0.999}) EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-9 * p);
    EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
}

TEST(PairedT, PublishedComparisonsAgainstOracle) {
    struct Case {
        std::vector<double> a, b;
        double t, p;
    };
    const auto& t1 = fixtures::table1().table;
    const auto& t2 = fixtures::table2().table;
    const std::vector<Case> cases{{t1.column(2), t1.column(0), 10.265357851984524, 2.876161271979701e-06},
                                  {t1.column(2), t1.column(1), 8.26679405155173, 1.7015395106006732e-05},
                                  {t2.column(2), t2.column(0), 12.21252514321365, 6.629468844622792e-07},
                                  {t2.column(2), t2.column(1), 5.383833852864505, 0.0004422674288803903}};
    for (const auto& c : cases) {
        const auto r = paired_t_test(c.a, c.b);
        EXPECT_NEAR(r.t, c.t, 1e-9);
        EXPECT_NEAR(r.p, c.p, 1e-9 * c.p);
        EXPECT_DOUBLE_EQ(r.df, 9);
        EXPECT_LT(r.p, 0.01);
    }
}

TEST(PairedT, AntisymmetricInArguments) {
    const auto& t = fixtures::table1().table;
    const auto ab = paired_t_test(t.column(0), t.column(1));
    const auto ba = paired_t_test(t.column(1), t.column(0));
    EXPECT_DOUBLE_EQ(ab.t, -ba.t);
    EXPECT_DOUBLE_EQ(ab.p, ba.p);
}

TEST(PairedT, IdenticalSamplesAreDegenerate) {
    const std::vector<double> a{0.1, 0.2, 0.3};
    try {
        paired_t_test(a, a);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
    }
}

TEST(Bonferroni, ScalesAndCaps) {
    EXPECT_NEAR(bonferroni(std::vector<double>{0.003}, 2)[0], 0.006, 1e-15);
    EXPECT_DOUBLE_EQ(bonferroni(std::vector<double>{0.8}, 3)[0], 1.0);
}

TEST(Bonferroni, Monotone) {
    const std::vector<double> p{0.2, 0.001, 0.04, 0.5, 0.3};
    const auto adj = bonferroni(p, 5);
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_GE(adj[i], p[i]);
        for (std::size_t j = 0; j < p.size(); ++j)
            if (p[i] <= p[j]) {
                EXPECT_LE(adj[i], adj[j]);
            }
    }
}

TEST(Bonferroni, PublishedFamiliesStaySignificant) {
    for (double p : {2.876161271979701e-06, 1.7015395106006732e-05, 6.629468844622792e-07, 0.0004422674288803903})
        EXPECT_LT(bonferroni(std::vector<double>{p}, 2)[0], 0.01);
}

TEST(Bonferroni, RejectsBadInput) {
    EXPECT_THROW(bonferroni(std::vector<double>{1.2}, 1), Error);
    EXPECT_THROW(bonferroni(std::vector<double>{0.1, 0.2}, 1), Error);
    EXPECT_THROW(bonferroni(std::vector<double>{}, 1), Error);
}

TEST(ShapiroWilk, PublishedColumnsAgainstOracle) {
    struct Case {
        std::vector<double> x;
        double w, p;
    };
    const auto& t1 = fixtures::table1().table;
    const auto& t2 = fixtures::table2().table;
    const std::vector<Case> cases{{t1.column(0), 0.879258320899657, 0.12795780194174683},
                                  {t1.column(1), 0.8781988606988279, 0.1244154648034968},
                                  {t1.column(2), 0.8590550798690164, 0.07437481422132812},
                                  {t2.column(0), 0.8714732802952326, 0.10399390968500394},
                                  {t2.column(1), 0.9242602701568106, 0.39386036094038496}};
    for (const auto& c : cases) {
        const auto r = shapiro_wilk(c.x);
        EXPECT_NEAR(r.w, c.w, 1e-6);
        EXPECT_NEAR(r.p, c.p, 1e-5);
        EXPECT_GT(r.p, 0.05);
    }
}

TEST(ShapiroWilk, FixedSampleAgainstOracle) {
    const std::vector<double> x{2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 6.1, 4.0, 3.7};
    const auto r = shapiro_wilk(x);
    EXPECT_NEAR(r.w, 0.9532460582492466, 1e-3);
    EXPECT_NEAR(r.p, 0.7069643442711636, 1e-4);
    const auto three = shapiro_wilk(std::vector<double>{1, 2, 4});
    EXPECT_NEAR(three.w, 0.9642857142857142, 1e-9);
    EXPECT_NEAR(three.p, 0.6368868450289689, 1e-9);
}

TEST(ShapiroWilk, AffineInvariant) {
    const std::vector<double> x{2.1, 3.4, 1.9, 5.6, 4.4, 3.3, 2.8, 6.1, 4.0, 3.7, 9.2, 0.4};
    std::vector<double> y;
    for (double v : x) y.push_back(37.5 * v - 1200.0);
    EXPECT_NEAR(shapiro_wilk(x).w, shapiro_wilk(y).w, 1e-9);
}

TEST(ShapiroWilk, RejectsNonNormalLargeSample) {
    Rng rng(3);
    std::vector<double> x;
    for (int i = 0; i < 400; ++i) x.push_back(std::exp(2 * rng.normal()));
    EXPECT_LT(shapiro_wilk(x).p, 1e-6);
    std::vector<double> z;
    for (int i = 0; i < 400; ++i) z.push_back(rng.normal());
    EXPECT_GT(shapiro_wilk(z).p, 0.01);
}

TEST(ShapiroWilk, Errors) {
    try {
        shapiro_wilk(std::vector<double>{2, 2, 2, 2});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
    }
    try {
        shapiro_wilk(std::vector<double>{1, 2});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnsupportedSize);
    }
    EXPECT_THROW(shapiro_wilk(std::vector<double>(5001, 1.0)), Error);
}

TEST(Levene, PublishedTablesAgainstOracle) {
    std::vector<std::vector<double>> g1, g2;
    for (std::size_t j = 0; j < 3; ++j) {
        g1.push_back(fixtures::table1().table.column(j));
        g2.push_back(fixtures::table2().table.column(j));
    }
    const auto r1 = levene(g1);
    EXPECT_NEAR(r1.f, 6.197535407073305, 1e-9);
    EXPECT_NEAR(r1.p, 0.006094602173444687, 1e-9);
    EXPECT_DOUBLE_EQ(r1.df1, 2);
    EXPECT_DOUBLE_EQ(r1.df2, 27);
    const auto r2 = levene(g2);
    EXPECT_NEAR(r2.f, 0.08809455133329042, 1e-9);
    EXPECT_NEAR(r2.p, 0.9159363861154739, 1e-9);
}

TEST(Levene, IdenticalGroups) {
    const std::vector<double> a{1, 4, 2, 8, 5};
    const auto r = levene({a, a});
    EXPECT_NEAR(r.f, 0.0, 1e-12);
    EXPECT_NEAR(r.p, 1.0, 1e-12);
}

TEST(Levene, DetectsUnequalVariance) {
    Rng rng(11);
    std::vector<double> a, b;
    for (int i = 0; i < 200; ++i) {
        a.push_back(rng.normal());
        b.push_back(5 * rng.normal());
    }
    EXPECT_LT(levene({a, b}).p, 0.01);
}

TEST(Levene, DegenerateWhenAllDeviationsEqual) {
    try {
        levene({{1, 1, 1}, {2, 2, 2}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
    }
    EXPECT_THROW(levene({{1, 2, 3}}), Error);
}

}  // namespace
