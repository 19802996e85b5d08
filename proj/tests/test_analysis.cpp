#include "dgadr/analysis.hpp"
#include "dgadr/data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace dgadr;

namespace {

Matrix column(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

GaussianFit gaussian_1d(double mean, double var) {
  GaussianFit g;
  g.mean = Vector::Constant(1, mean);
  g.covariance = Eigen::MatrixXd::Constant(1, 1, var);
  g.sample_count = 100;
  return g;
}

double mean_kl_at_shift(double shift, std::uint64_t seed) {
  SynthConfig c;
  c.domain_shift_scale = shift;
  c.samples_per_domain = 500;
  c.seed = seed;
  const Dataset ds = generate_synthetic(c);
  return domain_kl_matrix(group_by_domain(ds.feature_matrix(), ds.domains())).mean_off_diagonal();
}

}  // namespace

TEST(GaussianFit, HandExampleWithoutShrinkage) {
  Matrix x(3, 2);
  x << 0, 0, 1, 0, 2, 0;
  const auto g = fit_gaussian(x, 0.0);
  EXPECT_DOUBLE_EQ(g.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(g.mean[1], 0.0);
  EXPECT_DOUBLE_EQ(g.covariance(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(g.covariance(1, 1), 0.0);
  EXPECT_EQ(g.sample_count, 3u);
}

TEST(GaussianFit, DefaultShrinkageAddsScaledTrace) {
  Matrix x(3, 2);
  x << -1, 0, 1, 0, 3, 0;  // variance 4 in the first coordinate
  const auto g = fit_gaussian(x);
  EXPECT_NEAR(g.covariance(0, 0), 4.0 + 1e-3 * 2.0, 1e-15);
  EXPECT_NEAR(g.covariance(1, 1), 1e-3 * 2.0, 1e-15);
}

TEST(GaussianFit, ConstantInputGetsVarianceFloor) {
  const auto g = fit_gaussian(Matrix::Constant(5, 3, 2.5));
  EXPECT_TRUE(g.covariance.isApprox(1e-9 * Eigen::MatrixXd::Identity(3, 3)));
  EXPECT_THROW(fit_gaussian(Matrix::Ones(1, 2)), Error);
}

TEST(GaussianFit, PropertyTranslationEquivariance) {
  Rng rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x(40, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    RowVector shift(3);
    shift << g(rng) * 10, g(rng) * 10, g(rng) * 10;
    const auto a = fit_gaussian(x);
    const auto b = fit_gaussian(Matrix(x.rowwise() + shift));
    EXPECT_LT((b.mean - a.mean - shift.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((b.covariance - a.covariance).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(KL, OneDimensionalClosedForms) {
  EXPECT_EQ(kl_gaussian(gaussian_1d(0, 1), gaussian_1d(0, 1)), 0.0);
  EXPECT_NEAR(kl_gaussian(gaussian_1d(0, 1), gaussian_1d(1, 1)), 0.5, 1e-9);
  EXPECT_NEAR(kl_gaussian(gaussian_1d(0, 1), gaussian_1d(0, 4)), 0.5 * (0.25 - 1.0 + std::log(4.0)), 1e-9);
  EXPECT_NEAR(kl_gaussian(gaussian_1d(0, 1), gaussian_1d(0, 4)), 0.3181471806, 1e-9);
  // Asymmetric: KL(N(0,4) || N(0,1)) = 0.5 (4 - 1 - ln 4).
  EXPECT_NEAR(kl_gaussian(gaussian_1d(0, 4), gaussian_1d(0, 1)), 0.5 * (3.0 - std::log(4.0)), 1e-9);
}

TEST(KL, PropertyNonNegativeAndAffineInvariant) {
  Rng rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a(60, 3), b(60, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = g(rng);
      b.data()[i] = 1.5 * g(rng) + 0.3;
    }
    Eigen::MatrixXd t(3, 3);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = g(rng);
    t += 3.0 * Eigen::MatrixXd::Identity(3, 3);
    RowVector c(3);
    c << g(rng), g(rng), g(rng);
    const double kl = kl_gaussian(fit_gaussian(a, 0.0), fit_gaussian(b, 0.0));
    const Matrix ta = (a * t.transpose()).rowwise() + c;
    const Matrix tb = (b * t.transpose()).rowwise() + c;
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(kl_gaussian(fit_gaussian(ta, 0.0), fit_gaussian(tb, 0.0)), kl, 1e-6);
  }
}

TEST(KLMatrix, DiagonalIsExactlyZeroAndCsvLayout) {
  SynthConfig c;
  c.num_domains = 3;
  c.samples_per_domain = 100;
  const Dataset ds = generate_synthetic(c);
  const auto kl = domain_kl_matrix(group_by_domain(ds.feature_matrix(), ds.domains()));
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_EQ(kl.values(i, i), 0.0);
  std::ostringstream out;
  kl.write_csv(out, 3);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "domain,0,1,2");
}

TEST(KLMatrix, ZeroShiftDomainsAreClose) {
  // The estimator's noise floor grows roughly with d^2 / n; at d = 8 it already sits near 0.04.
  SynthConfig c;
  c.num_domains = 2;
  c.feature_dim = 4;
  c.domain_shift_scale = 0.0;
  c.samples_per_domain = 1000;
  const Dataset ds = generate_synthetic(c);
  const auto kl = domain_kl_matrix(group_by_domain(ds.feature_matrix(), ds.domains()));
  for (Eigen::Index a = 0; a < kl.values.rows(); ++a)
    for (Eigen::Index b = 0; b < kl.values.cols(); ++b) EXPECT_LT(kl.values(a, b), 0.05);
}

TEST(KLMatrix, MeanOffDiagonalGrowsWithShift) {
  const double shifts[] = {0.0, 0.5, 1.0, 2.0};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double previous = -1.0;
    for (double s : shifts) {
      const double kl = mean_kl_at_shift(s, seed);
      EXPECT_GT(kl, previous) << "seed " << seed << " shift " << s;
      previous = kl;
    }
  }
}

TEST(KLMatrix, RejectsTinyDomains) {
  std::map<int, Matrix> groups{{0, Matrix::Ones(1, 2)}, {1, Matrix::Ones(3, 2)}};
  EXPECT_THROW(domain_kl_matrix(groups), Error);
}

TEST(Dispersion, IdenticalCentroidsGiveZero) {
  Matrix z(4, 2);
  z << 1, 0, 2, 0, 0, 1, 0, 5;
  EXPECT_NEAR(cross_domain_dispersion(z, {0, 0, 1, 1}, {0, 1, 0, 1}), 0.0, 1e-15);
}

TEST(Dispersion, OrthogonalAndOppositeCentroids) {
  Matrix z(4, 2);
  z << 1, 0, 0, 1, 1, 0, -1, 0;
  // Class 0 centroids orthogonal (1), class 1 opposite (2): mean 1.5.
  EXPECT_NEAR(cross_domain_dispersion(z, {0, 0, 1, 1}, {0, 1, 0, 1}), 1.5, 1e-15);
}

TEST(Dispersion, ThreeDomainsAveragePairs) {
  Matrix z(3, 2);
  z << 1, 0, 0, 1, -1, 0;
  // Pairs: 1, 2, 1 -> mean 4/3.
  EXPECT_NEAR(cross_domain_dispersion(z, {0, 0, 0}, {0, 1, 2}), 4.0 / 3.0, 1e-15);
}

TEST(Dispersion, CentroidsUseUnitDirections) {
  Matrix z(3, 2);
  z << 100, 0, 0, 1, 1, 0;
  // Domain 0 centroid: normalize((1,0) + (0,1)) = 45 degrees; domain 1 at 0 degrees.
  EXPECT_NEAR(cross_domain_dispersion(z, {0, 0, 0}, {0, 0, 1}), 1.0 - std::sqrt(0.5), 1e-15);
}

TEST(Dispersion, ClassesInOneDomainDoNotCount) {
  Matrix z(3, 2);
  z << 1, 0, 0, 1, 1, 1;
  EXPECT_NEAR(cross_domain_dispersion(z, {0, 0, 1}, {0, 1, 0}), 1.0, 1e-15);
  EXPECT_THROW(cross_domain_dispersion(z, {0, 1, 2}, {0, 1, 0}), Error);
}

TEST(Dispersion, PropertyScaleInvariantPerRow) {
  Rng rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix z(20, 4);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng);
    std::vector<int> labels, domains;
    for (int i = 0; i < 20; ++i) {
      labels.push_back(i % 3);
      domains.push_back(i % 2);
    }
    Matrix scaled = z;
    for (Eigen::Index i = 0; i < 20; ++i) scaled.row(i) *= u(rng);
    const double d = cross_domain_dispersion(z, labels, domains);
    EXPECT_NEAR(cross_domain_dispersion(scaled, labels, domains), d, 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
  }
}

TEST(Pca, RecoversDominantAxisWithSignConvention) {
  Rng rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix z(500, 3);
  for (Eigen::Index i = 0; i < 500; ++i) z.row(i) << 10 * g(rng), 3 * g(rng), 0.1 * g(rng);
  // Rotate by 30 degrees in the (x, y) plane.
  const double c = std::cos(M_PI / 6), s = std::sin(M_PI / 6);
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(3, 3);
  r(0, 0) = c;
  r(0, 1) = -s;
  r(1, 0) = s;
  r(1, 1) = c;
  const Matrix rotated = z * r.transpose();
  const auto p = pca_project(rotated, 2);
  Vector expected(3);
  expected << c, s, 0;
  EXPECT_GT(std::abs(p.components.col(0).dot(expected)), 0.999);
  Eigen::Index arg = 0;
  p.components.col(0).cwiseAbs().maxCoeff(&arg);
  EXPECT_GT(p.components(arg, 0), 0.0);
  EXPECT_NEAR(p.components.col(0).dot(p.components.col(1)), 0.0, 1e-12);
}

TEST(Pca, PropertyBeatsRandomProjectionsOnReconstruction) {
  Rng rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix z(200, 5);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng) * (1 + i % 5);
  const auto p = pca_project(z, 2);
  const Matrix centered = z.rowwise() - p.mean.transpose();
  auto residual = [&](const Eigen::MatrixXd &basis) {
    return (centered - centered * basis * basis.transpose()).squaredNorm();
  };
  const double best = residual(p.components);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd q(5, 2);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = g(rng);
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
    const Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(5, 2);
    EXPECT_LE(best, residual(basis) + 1e-9);
  }
}

TEST(Pca, DuplicatedRowsAndRankDeficiency) {
  Matrix z(6, 3);
  z << 1, 2, 0, 1, 2, 0, 3, 6, 0, 3, 6, 0, -1, -2, 0, -1, -2, 0;
  const auto p = pca_project(z, 2);
  EXPECT_TRUE(p.coords.allFinite());
  EXPECT_TRUE(p.components.col(1).isZero(0.0));
  EXPECT_NEAR(p.coords(0, 0), p.coords(1, 0), 1e-15);
  std::ostringstream out;
  write_projection_csv(out, p.coords, {0, 0, 1, 1, 2, 2}, {0, 1, 0, 1, 0, 1});
  EXPECT_EQ(out.str().substr(0, 17), "x,y,label,domain\n");
  EXPECT_THROW(pca_project(z, 0), Error);
}
