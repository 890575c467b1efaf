/*
 * Copyright 2026 The svtp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "svtp/distributions.hpp"
#include "test_support.hpp"

using namespace svtp;
using fixtures::random_spd;

namespace {

// Location-scale Student-t with variance `var`: standard t of nu dof scaled by
// sqrt(var (nu - 2) / nu).
double oracle_log_pdf(double y, double nu, double loc, double var) {
    const double s = std::sqrt(var * (nu - 2.0) / nu);
    boost::math::students_t_distribution<double> t(nu);
    return std::log(boost::math::pdf(t, (y - loc) / s)) - std::log(s);
}

MvtParams random_mvt(Rng& rng, Index n, double nu) {
    MvtParams p;
    p.nu = nu;
    p.phi = fixtures::uniform_matrix(rng, n, 1, -1.0, 1.0);
    p.scale = random_spd(rng, n);
    return p;
}

} // namespace

TEST(SpecialFunctions, KnownValues) {
    constexpr double euler = 0.57721566490153286061;
    EXPECT_NEAR(digamma(1.0), -euler, 1e-14);
    EXPECT_NEAR(digamma(0.5), -euler - 2.0 * std::numbers::ln2, 1e-14);
    EXPECT_NEAR(trigamma(1.0), std::numbers::pi * std::numbers::pi / 6.0, 1e-13);
    EXPECT_NEAR(log_gamma(5.0), std::log(24.0), 1e-14);
    EXPECT_NEAR(log_gamma(0.5), 0.5 * std::log(std::numbers::pi), 1e-14);
}

TEST(SpecialFunctions, RejectNonPositiveArguments) {
    EXPECT_THROW(digamma(0.0), DomainError);
    EXPECT_THROW(log_gamma(-1.0), DomainError);
    EXPECT_THROW(trigamma(std::numeric_limits<double>::quiet_NaN()), DomainError);
}

TEST(SpecialFunctions, QuantileShapeDerivativeMatchesFiniteDifference) {
    for (double a : {1.5, 2.5, 8.0, 60.0, 400.0}) {
        for (double level : {1e-4, 0.1, 0.5, 0.9, 0.9999}) {
            const double x = boost::math::gamma_p_inv(a, level);
            const double h = 1e-5 * a;
            const double fd = (boost::math::gamma_p_inv(a + h, level) - boost::math::gamma_p_inv(a - h, level)) / (2 * h);
            EXPECT_NEAR(gamma_quantile_shape_derivative(a, x), fd, 1e-6 * std::max(1.0, std::abs(fd)))
                << "a=" << a << " level=" << level;
        }
    }
}

TEST(SpecialFunctions, SameLevelPreservesCdf) {
    for (double a0 : {2.5, 30.0})
        for (double x0 : {0.5, 2.0, 40.0}) {
            const double x = gamma_same_level(a0, x0, a0 + 1.7);
            const double p0 = boost::math::gamma_p(a0, x0);
            EXPECT_NEAR(boost::math::gamma_p(a0 + 1.7, x), p0, 1e-12 * std::max(1.0, p0));
        }
    EXPECT_EQ(gamma_same_level(3.0, 1.25, 3.0), 1.25);
}

TEST(MvtLogPdf, NormalizesToOneInOneDimension) {
    boost::math::quadrature::sinh_sinh<double> integrator;
    for (double nu : {2.2, 3.0, 5.0, 30.0}) {
        for (double var : {0.3, 2.0}) {
            const MvtParams p{nu, Vector::Constant(1, 0.4), Matrix::Constant(1, 1, var)};
            const double mass = integrator.integrate([&](double y) {
                return std::exp(mvt_log_pdf(Vector::Constant(1, y), p));
            });
            EXPECT_NEAR(mass, 1.0, 1e-6) << "nu=" << nu << " var=" << var;
        }
    }
}

TEST(MvtLogPdf, MatchesLocationScaleStudentT) {
    for (double nu : {2.5, 4.0, 11.0}) {
        for (double y : {-3.0, 0.1, 2.7}) {
            const MvtParams p{nu, Vector::Constant(1, 0.2), Matrix::Constant(1, 1, 1.7)};
            EXPECT_NEAR(mvt_log_pdf(Vector::Constant(1, y), p), oracle_log_pdf(y, nu, 0.2, 1.7), 1e-12);
            EXPECT_NEAR(student_t_log_pdf(y, nu, 0.2, 1.7), oracle_log_pdf(y, nu, 0.2, 1.7), 1e-12);
        }
    }
}

TEST(MvtLogPdf, DiagonalScaleIsNotAProductOfMarginals) {
    // Uncorrelated Student-t coordinates remain dependent.
    const MvtParams p{4.0, Vector::Zero(2), Matrix::Identity(2, 2)};
    const Vector y = (Vector(2) << 1.5, -0.5).finished();
    const double product = student_t_log_pdf(1.5, 4.0, 0.0, 1.0) + student_t_log_pdf(-0.5, 4.0, 0.0, 1.0);
    EXPECT_GT(std::abs(mvt_log_pdf(y, p) - product), 1e-3);
}

TEST(MvtLogPdf, ApproachesGaussianForLargeDof) {
    Rng rng(7);
    const MvtParams p = random_mvt(rng, 3, 1e6);
    const auto chol = linalg::robust_cholesky(p.scale);
    for (int k = 0; k < 10; ++k) {
        const Vector y = p.phi + fixtures::uniform_matrix(rng, 3, 1, -2.0, 2.0);
        const Vector w = chol.solve_lower(y - p.phi);
        const double gauss = -1.5 * std::log(2.0 * std::numbers::pi) - 0.5 * chol.log_det() - 0.5 * w.squaredNorm();
        EXPECT_NEAR(mvt_log_pdf(y, p), gauss, 1e-3);
    }
}

TEST(MvtLogPdf, RejectsBadInputs) {
    const MvtParams p{5.0, Vector::Zero(2), Matrix::Identity(2, 2)};
    EXPECT_THROW(mvt_log_pdf(Vector::Zero(3), p), ShapeError);
    EXPECT_THROW(mvt_log_pdf(Vector::Zero(2), MvtParams{2.0, Vector::Zero(2), Matrix::Identity(2, 2)}), DomainError);
    EXPECT_THROW(mvt_log_pdf(Vector::Zero(2), MvtParams{1.5, Vector::Zero(2), Matrix::Identity(2, 2)}), DomainError);
    Matrix indefinite = Matrix::Identity(2, 2);
    indefinite(1, 1) = -4.0;
    EXPECT_THROW(mvt_log_pdf(Vector::Zero(2), MvtParams{5.0, Vector::Zero(2), indefinite}), DecompositionError);
}

TEST(MvtCondition, ChainRuleHoldsForRandomPartitions) {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 2 + static_cast<Index>(trial % 5);
        const MvtParams p = random_mvt(rng, n, fixtures::uniform(rng, 2.5, 15.0));
        std::vector<Index> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), Index{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        const Index n1 = 1 + trial % (n - 1);
        Partition part;
        part.idx1.assign(perm.begin(), perm.begin() + n1);
        part.idx2.assign(perm.begin() + n1, perm.end());
        const Vector y = p.phi + fixtures::uniform_matrix(rng, n, 1, -1.5, 1.5);

        const Vector y1 = detail::gather(y, part.idx1);
        const Vector y2 = detail::gather(y, part.idx2);
        const double joint = mvt_log_pdf(y, p);
        const double factored =
            mvt_log_pdf(y1, mvt_marginal(p, part.idx1)) + mvt_log_pdf(y2, mvt_condition(p, part, y1));
        EXPECT_NEAR(joint, factored, 1e-8) << "trial " << trial;
    }
}

TEST(MvtCondition, DegreesOfFreedomAndScaleFactor) {
    Rng rng(3);
    const MvtParams p = random_mvt(rng, 4, 6.0);
    const auto part = Partition::leading(2, 4);
    const Vector y1 = p.phi.head(2);  // beta1 = 0
    const MvtParams c = mvt_condition(p, part, y1);
    EXPECT_DOUBLE_EQ(c.nu, 8.0);
    const Matrix K11 = p.scale.topLeftCorner(2, 2);
    const Matrix schur = p.scale.bottomRightCorner(2, 2) - p.scale.bottomLeftCorner(2, 2) * K11.inverse() * p.scale.topRightCorner(2, 2);
    EXPECT_LT((c.scale - (4.0 / 6.0) * schur).norm(), 1e-10);
    EXPECT_LT((c.phi - p.phi.tail(2)).norm(), 1e-12);
}

TEST(MvtCondition, EmptyConditioningSetIsTheMarginal) {
    Rng rng(5);
    const MvtParams p = random_mvt(rng, 3, 4.0);
    Partition part;
    part.idx2 = {0, 1, 2};
    const MvtParams c = mvt_condition(p, part, Vector(0));
    EXPECT_EQ(c.nu, p.nu);
    EXPECT_LT((c.scale - p.scale).norm(), 1e-15);
}

TEST(MvtCondition, RejectsOverlappingPartition) {
    const MvtParams p{5.0, Vector::Zero(3), Matrix::Identity(3, 3)};
    Partition part{{0, 1}, {1}};
    EXPECT_THROW(mvt_condition(p, part, Vector::Zero(2)), ShapeError);
}

TEST(MvtSample, MomentsWithinThreeStandardErrors) {
    Rng rng(2024);
    const MvtParams p = random_mvt(rng, 3, 7.0);
    constexpr std::size_t count = 100000;
    const Matrix draws = mvt_sample(p, count, rng);
    const double N = static_cast<double>(count);
    const Vector mean = draws.colwise().mean().transpose();
    const Matrix centered = draws.rowwise() - mean.transpose();
    for (Index j = 0; j < 3; ++j) {
        const double var = centered.col(j).squaredNorm() / (N - 1.0);
        EXPECT_LT(std::abs(mean(j) - p.phi(j)), 3.0 * std::sqrt(var / N)) << "mean " << j;
        for (Index k = 0; k <= j; ++k) {
            const Vector prod = centered.col(j).cwiseProduct(centered.col(k));
            const double cov = prod.sum() / (N - 1.0);
            const double se = std::sqrt((prod.array() - prod.mean()).square().sum() / (N - 1.0) / N);
            EXPECT_LT(std::abs(cov - p.scale(j, k)), 3.0 * se) << "cov " << j << "," << k;
        }
    }
}

TEST(MvtSample, MarginalPassesKolmogorovSmirnov) {
    Rng rng(99);
    const double nu = 3.5;
    const MvtParams p{nu, Vector::Constant(1, 0.5), Matrix::Constant(1, 1, 2.0)};
    const Matrix draws = mvt_sample(p, 20000, rng);
    std::vector<double> v(draws.data(), draws.data() + draws.size());
    std::sort(v.begin(), v.end());
    boost::math::students_t_distribution<double> t(nu);
    const double s = std::sqrt(2.0 * (nu - 2.0) / nu);
    double d = 0.0;
    const double n = static_cast<double>(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double F = boost::math::cdf(t, (v[i] - 0.5) / s);
        d = std::max({d, std::abs(F - i / n), std::abs(F - (i + 1) / n)});
    }
    EXPECT_LT(d * std::sqrt(n), 1.95);  // 0.1% critical value
}

TEST(MvtSample, ZeroCountAndLargeDofLimit) {
    Rng rng(1);
    const MvtParams p{5.0, Vector::Zero(2), Matrix::Identity(2, 2)};
    EXPECT_EQ(mvt_sample(p, 0, rng).rows(), 0);
    // Excess kurtosis near zero for a nearly Gaussian law.
    const Matrix d = mvt_sample(MvtParams{1e6, Vector::Zero(1), Matrix::Identity(1, 1)}, 200000, rng);
    const double m2 = d.array().square().mean();
    const double m4 = d.array().pow(4).mean();
    EXPECT_NEAR(m4 / (m2 * m2) - 3.0, 0.0, 0.05);
}

TEST(InverseChiSquare, DrawsMatchChiSquareLaw) {
    Rng rng(8);
    const double nu = 6.0;
    std::vector<double> g;
    for (int i = 0; i < 20000; ++i) g.push_back(1.0 / draw_inverse_chi2(nu, rng));
    std::sort(g.begin(), g.end());
    boost::math::chi_squared_distribution<double> chi(nu);
    double d = 0.0;
    const double n = static_cast<double>(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double F = boost::math::cdf(chi, g[i]);
        d = std::max({d, std::abs(F - i / n), std::abs(F - (i + 1) / n)});
    }
    EXPECT_LT(d * std::sqrt(n), 1.95);
}

TEST(InverseChiSquare, ReevaluationAtOtherDofKeepsLevelAndSlope) {
    for (double r : {0.02, 0.2, 1.5}) {
        const double nu0 = 7.0;
        const auto same = inverse_chi2_at(r, nu0, nu0, true);
        EXPECT_EQ(same.value, r);
        const double h = 1e-5;
        const double fd = (inverse_chi2_at(r, nu0, nu0 + h, false).value - inverse_chi2_at(r, nu0, nu0 - h, false).value) / (2 * h);
        EXPECT_NEAR(same.d_nu, fd, 1e-6 * std::max(1.0, std::abs(fd)));
        boost::math::chi_squared_distribution<double> a(nu0), b(nu0 + 3.0);
        EXPECT_NEAR(boost::math::cdf(b, 1.0 / inverse_chi2_at(r, nu0, nu0 + 3.0, false).value),
                    boost::math::cdf(a, 1.0 / r), 1e-12);
    }
}

TEST(StudentAffine, IsTheReparameterizedMap) {
    Rng rng(4);
    const Matrix L = fixtures::random_factor(rng, 3);
    const Vector phi = Vector::Constant(3, 0.3);
    StudentNoise noise{Vector::Constant(3, 1.0), 0.25, 5.0};
    const Vector u = student_affine(phi, L, 5.0, noise);
    const Vector expected = phi + std::sqrt(0.25 * 3.0) * (L * Vector::Ones(3));
    EXPECT_LT((u - expected).norm(), 1e-14);
}
