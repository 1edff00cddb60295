#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "ridgelab/spectrum.hpp"

using namespace ridgelab;

namespace {

Matrix random_orthonormal(Index n, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Matrix a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = nd(gen);
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(n, n);
}

CovarianceModel random_explicit(Index n, std::mt19937_64& gen, bool with_basis) {
  std::uniform_real_distribution<double> ud(0.2, 5.0);
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (auto& v : ev) v = ud(gen);
  if (!with_basis) return CovarianceModel::explicit_spectrum(ev);
  return CovarianceModel::explicit_spectrum(ev, random_orthonormal(n, gen));
}

// Dense oracle: tr((Σ+τI)^{-p} Σ^q)/n from a materialized Σ.
double dense_trace(const Matrix& sigma, double tau, int p, int q) {
  const Index n = sigma.rows();
  Matrix shifted_inv = (sigma + tau * Matrix::Identity(n, n)).inverse();
  Matrix acc = Matrix::Identity(n, n);
  for (int i = 0; i < p; ++i) acc = acc * shifted_inv;
  for (int i = 0; i < q; ++i) acc = acc * sigma;
  return acc.trace() / static_cast<double>(n);
}

}  // namespace

TEST(Eigenvalues, StructuredKindsExpandAnalytically) {
  EXPECT_EQ(eigenvalues(CovarianceModel::isotropic(3, 1.0)), (std::vector<double>{1, 1, 1}));

  const auto spiked = eigenvalues(CovarianceModel::spiked_uniform(200, 1.99, 0.01));
  ASSERT_EQ(spiked.size(), 200u);
  EXPECT_NEAR(spiked.front(), 3.99, 1e-12);
  for (std::size_t j = 1; j < spiked.size(); ++j) EXPECT_DOUBLE_EQ(spiked[j], 1.99);

  const auto two = eigenvalues(CovarianceModel::spiked_uniform(2, 1.0, 0.5));
  EXPECT_DOUBLE_EQ(two[0], 2.0);
  EXPECT_DOUBLE_EQ(two[1], 1.0);
}

TEST(Eigenvalues, ExplicitIsSortedDescending) {
  const auto m = CovarianceModel::explicit_spectrum({1.0, 4.0, 2.0});
  EXPECT_EQ(eigenvalues(m), (std::vector<double>{4.0, 2.0, 1.0}));
}

TEST(CovarianceModel, SpikedWithZeroSpikeIsIsotropic) {
  const auto m = CovarianceModel::spiked_uniform(5, 2.0, 0.0);
  EXPECT_EQ(m.kind(), CovarianceModel::Kind::Isotropic);
  EXPECT_DOUBLE_EQ(m.scale(), 2.0);
}

TEST(CovarianceModel, RejectsInvalidInputs) {
  EXPECT_THROW(CovarianceModel::isotropic(0, 1.0), InvalidArgument);
  EXPECT_THROW(CovarianceModel::isotropic(3, -1.0), InvalidArgument);
  EXPECT_THROW(CovarianceModel::explicit_spectrum({1.0, 0.0}), InvalidArgument);
  Matrix b = Matrix::Identity(2, 2);
  b(0, 1) = 0.1;
  EXPECT_THROW(CovarianceModel::explicit_spectrum({1.0, 2.0}, b), InvalidArgument);
}

TEST(TraceFunctional, Examples) {
  EXPECT_NEAR(trace_functional(CovarianceModel::isotropic(1), 1.0, 2, 1), 0.25, 1e-15);
  EXPECT_NEAR(trace_functional(CovarianceModel::spiked_uniform(2, 1.0, 0.5), 1.0, 1, 1), 7.0 / 12.0,
              1e-15);
  std::mt19937_64 gen(3);
  EXPECT_NEAR(trace_functional(random_explicit(17, gen, false), 0.0, 1, 1), 1.0, 1e-15);
  EXPECT_THROW(trace_functional(CovarianceModel::isotropic(2), 1.0, 0, 0), InvalidArgument);
  EXPECT_THROW(trace_functional(CovarianceModel::isotropic(2), -1.0, 1, 1), InvalidArgument);
}

TEST(TraceFunctional, AgreesWithDenseOracle) {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> nd(2, 50);
  std::uniform_real_distribution<double> td(0.0, 3.0);
  for (int trial = 0; trial < 40; ++trial) {
    const auto model = random_explicit(nd(gen), gen, trial % 2 == 0);
    const Matrix sigma = materialize(model).sigma;
    const double tau = td(gen);
    for (int p = 1; p <= 3; ++p)
      for (int q = 0; q <= 2; ++q)
        EXPECT_NEAR(trace_functional(model, tau, p, q), dense_trace(sigma, tau, p, q), 1e-10);
  }
}

TEST(TraceFunctional, StrictlyDecreasingInTau) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto model = random_explicit(30, gen, false);
    for (int p = 1; p <= 3; ++p)
      for (int q = 0; q <= 2; ++q) {
        double prev = trace_functional(model, 0.01, p, q);
        for (double tau = 0.05; tau < 5.0; tau += 0.05) {
          const double cur = trace_functional(model, tau, p, q);
          EXPECT_LT(cur, prev);
          prev = cur;
        }
      }
  }
}

TEST(TraceFunctional, ResolventIdentity) {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = random_explicit(25, gen, false);
    for (double tau : {0.0, 0.3, 1.0, 7.5}) {
      const double sum = trace_functional(model, tau, 1, 1) + tau * trace_functional(model, tau, 1, 0);
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(HarmonicMean, Examples) {
  EXPECT_DOUBLE_EQ(harmonic_mean(CovarianceModel::isotropic(4)), 1.0);
  EXPECT_NEAR(harmonic_mean(CovarianceModel::spiked_uniform(2, 1.0, 0.5)), 0.75, 1e-15);
  EXPECT_NEAR(harmonic_mean(CovarianceModel::explicit_spectrum({4.0, 2.0})), 0.375, 1e-15);
  const auto m = CovarianceModel::spiked_uniform(9, 1.3, 0.2);
  EXPECT_DOUBLE_EQ(harmonic_mean(m), trace_functional(m, 0.0, 1, 0));
}

TEST(QuadForm, Examples) {
  const auto iso = CovarianceModel::isotropic(3);
  Vector v = Vector::Zero(3);
  v(1) = 1.0;
  EXPECT_NEAR(quad_form(iso, SignalVector(v), 1.0, 1, 1), 0.25, 1e-15);
  EXPECT_EQ(quad_form(iso, SignalVector::zeros(3), 2.0, 2, 2), 0.0);

  const auto spiked = CovarianceModel::spiked_uniform(2, 1.0, 0.5);
  const SignalVector top(Vector::Constant(2, 1.0 / std::sqrt(2.0)));
  EXPECT_NEAR(quad_form(spiked, top, 1.0, 1, 1), 2.0 / 9.0, 1e-15);

  EXPECT_THROW(quad_form(iso, SignalVector::zeros(4), 1.0, 1, 1), InvalidArgument);
}

TEST(QuadForm, AgreesWithDenseOracleAndIsRotationInvariant) {
  std::mt19937_64 gen(19);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 12 + trial;
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (auto& x : ev) x = 0.2 + 4.8 * std::uniform_real_distribution<double>()(gen);
    std::sort(ev.begin(), ev.end(), std::greater<>());
    const Matrix basis = random_orthonormal(n, gen);
    const auto rotated = CovarianceModel::explicit_spectrum(ev, basis);
    const auto diagonal = CovarianceModel::explicit_spectrum(ev);
    Vector coords(n);
    for (Index j = 0; j < n; ++j) coords(j) = nd(gen);
    // Same signal expressed in the two frames: μ0 = B·c versus c.
    const SignalVector in_basis(basis * coords);
    const SignalVector in_eigen(coords);
    const DenseCovariance dense = materialize(rotated);
    for (double tau : {0.1, 1.0, 3.0}) {
      const double a = quad_form(rotated, in_basis, tau, 1, 1);
      const double b = quad_form(diagonal, in_eigen, tau, 1, 1);
      EXPECT_NEAR(a, b, 1e-10);
      const Matrix resolvent = (dense.sigma + tau * Matrix::Identity(n, n)).inverse();
      const double oracle = (resolvent * dense.sqrt * in_basis.coords()).squaredNorm();
      EXPECT_NEAR(a, oracle, 1e-10);
    }
  }
}

TEST(SignalVector, CacheFollowsModelAndMutation) {
  const auto spiked = CovarianceModel::spiked_uniform(4, 1.0, 0.5);
  SignalVector s(Vector::Constant(4, 0.5));
  auto e1 = s.spectral_energies(spiked);
  EXPECT_NEAR(e1[0], 1.0, 1e-15);
  EXPECT_NEAR(e1[1], 0.0, 1e-15);
  Vector other = Vector::Zero(4);
  other(0) = 1.0;
  s.set_coords(other);
  auto e2 = s.spectral_energies(spiked);
  EXPECT_NEAR(e2[0], 0.25, 1e-15);
  EXPECT_NEAR(e2[1], 0.75, 1e-15);
  EXPECT_DOUBLE_EQ(s.norm_sq(), 1.0);
  const SignalVector copy = s;
  EXPECT_EQ(copy.spectral_energies(spiked), e2);
}

TEST(Materialize, Examples) {
  const DenseCovariance iso = materialize(CovarianceModel::isotropic(2, 4.0));
  EXPECT_TRUE(iso.sigma.isApprox(4.0 * Matrix::Identity(2, 2)));
  EXPECT_TRUE(iso.sqrt.isApprox(2.0 * Matrix::Identity(2, 2)));
  EXPECT_TRUE(iso.inv_sqrt.isApprox(0.5 * Matrix::Identity(2, 2)));

  const DenseCovariance sp = materialize(CovarianceModel::spiked_uniform(200, 1.99, 0.01));
  Eigen::SelfAdjointEigenSolver<Matrix> es(sp.sigma);
  EXPECT_NEAR(es.eigenvalues().maxCoeff(), 3.99, 1e-10);
  EXPECT_LE((sp.sqrt * sp.sqrt - sp.sigma).norm() / sp.sigma.norm(), 1e-8);
  EXPECT_LE((sp.inv_sqrt * sp.sqrt - Matrix::Identity(200, 200)).norm(), 1e-8);

  const DenseCovariance ex =
      materialize(CovarianceModel::explicit_spectrum({2.0, 1.0}, Matrix::Identity(2, 2)));
  EXPECT_TRUE(ex.sigma.isApprox(Vector(Eigen::Vector2d(2.0, 1.0)).asDiagonal().toDenseMatrix()));
  EXPECT_NEAR(ex.sqrt(0, 0), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(ex.sqrt(1, 1), 1.0, 1e-15);

  EXPECT_THROW(materialize(CovarianceModel::isotropic(20001)), InvalidArgument);
}

TEST(CovarianceModel, MatrixActionsMatchDense) {
  std::mt19937_64 gen(23);
  std::normal_distribution<double> nd;
  const std::vector<CovarianceModel> models = {
      CovarianceModel::isotropic(7, 1.7), CovarianceModel::spiked_uniform(7, 1.2, 0.3),
      random_explicit(7, gen, false), random_explicit(7, gen, true)};
  auto f = [](double l) { return std::sqrt(l) / (l + 0.5); };
  for (const auto& model : models) {
    const Matrix dense = model.dense(f);
    Vector v(7);
    Matrix z(4, 7);
    for (Index j = 0; j < 7; ++j) v(j) = nd(gen);
    for (Index i = 0; i < 4; ++i)
      for (Index j = 0; j < 7; ++j) z(i, j) = nd(gen);
    EXPECT_LE((model.apply(v, f) - dense * v).norm(), 1e-12);
    EXPECT_LE((model.apply_right(z, f) - z * dense).norm(), 1e-12);
    EXPECT_LE((model.diagonal(f) - dense.diagonal()).norm(), 1e-12);
    const auto energies = model.spectral_energies(v);
    double quad = 0.0;
    for (std::size_t g = 0; g < energies.size(); ++g) quad += f(model.groups()[g].value) * energies[g];
    EXPECT_NEAR(quad, v.dot(dense * v), 1e-12);
  }
}

TEST(ModelJson, RoundTripAndStrictKeys) {
  std::mt19937_64 gen(29);
  const std::vector<CovarianceModel> models = {CovarianceModel::isotropic(5, 2.5),
                                               CovarianceModel::spiked_uniform(6, 1.99, 0.01),
                                               random_explicit(4, gen, true)};
  for (const auto& m : models) {
    const auto back = model_from_json(model_to_json(m));
    EXPECT_EQ(back.kind(), m.kind());
    EXPECT_EQ(eigenvalues(back), eigenvalues(m));
    EXPECT_NEAR(trace_functional(back, 0.7, 2, 1), trace_functional(m, 0.7, 2, 1), 0.0);
  }
  EXPECT_THROW(model_from_json(nlohmann::json::parse(R"({"kind":"isotropic","n":3,"bogus":1})")),
               InvalidArgument);
  EXPECT_THROW(model_from_json(nlohmann::json::parse(R"({"kind":"weird","n":3})")), InvalidArgument);
  const auto templ = model_from_json(nlohmann::json::parse(R"({"kind":"spiked_uniform","a":1,"b":0.5})"), 2);
  EXPECT_EQ(templ.dim(), 2);
}
