#include "test_util.hpp"

#include <tenv/error.hpp>
#include <tenv/estimators.hpp>
#include <tenv/simgen.hpp>

#include <doctest.h>

#include <chrono>
#include <cmath>

using namespace tenv;

namespace {

Dataset random_dataset(const Dims& r, std::size_t p, std::size_t n, Rng& rng, double noise = 1.0) {
  Dims bd = r;
  bd.push_back(p);
  const Tensor b = testutil::random_tensor(bd, rng);
  const Matrix x = testutil::random_matrix(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(n), rng);
  Tensor y = mode_product(b, x.transpose(), r.size());
  Dims yd = r;
  yd.push_back(n);
  y += noise * testutil::random_tensor(yd, rng);
  return Dataset(x, y);
}

// Small Tucker-structured instance with a known envelope.
std::pair<Dataset, GroundTruth> envelope_instance(const Dims& r, const Dims& u, std::size_t p, std::size_t n,
                                                  std::uint64_t seed, double snr = 0.5) {
  ScenarioConfig c;
  c.design = Design::tucker;
  c.dims = r;
  c.u = u;
  c.p = p;
  c.n = n;
  c.snr = snr;
  Rng rng(seed);
  return gen_dataset_3way(c, rng);
}

double max_abs(const Tensor& t) { return t.flat().cwiseAbs().maxCoeff(); }

Tensor project_out(const Tensor& b, const EnvelopeBasis& basis, std::size_t k) {
  return mode_product(b, basis.completions[k] * basis.completions[k].transpose(), k);
}

}  // namespace

TEST_CASE("center and uncenter") {
  Rng rng(1);
  const Dataset d = random_dataset({2, 3}, 2, 6, rng);
  const Dataset c = center(d);
  CHECK(c.centered);
  CHECK(c.x.rowwise().mean().cwiseAbs().maxCoeff() <= 1e-12);
  Eigen::Map<const Matrix> ys(c.y.data().data(), 6, 6);
  CHECK(ys.rowwise().mean().cwiseAbs().maxCoeff() <= 1e-12);
  const Dataset back = uncenter(c);
  CHECK((back.x - d.x).norm() <= 1e-12);
  CHECK((back.y.flat() - d.y.flat()).norm() <= 1e-12);
  const Dataset cc = center(c);
  CHECK((cc.y.flat() - c.y.flat()).norm() <= 1e-12);
  CHECK((cc.x - c.x).norm() <= 1e-12);

  Matrix x1(1, 1);
  x1 << 1.0;
  CHECK_THROWS_AS(center(Dataset(x1, Tensor({2, 1}))), DimensionError);
  CHECK_THROWS_AS(Dataset(Matrix::Ones(1, 3), Tensor({2, 2})), DimensionError);

  // a constant predictor is centered to zeros and then rejected by OLS
  const Dataset flat(Matrix::Ones(1, 4), testutil::random_tensor({2, 4}, rng));
  CHECK(center(flat).x.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(ols_fit(flat), NumericalError);
}

TEST_CASE("OLS recovers noiseless coefficients") {
  Rng rng(2);
  const Dataset d = random_dataset({3, 4}, 2, 12, rng, 0.0);
  RegressionStats st(d);
  const Tensor b = mode_product(d.y, (d.x * d.x.transpose()).inverse() * d.x, 2);
  CHECK((st.b_ols().flat() - b.flat()).norm() <= 1e-10 * b.frobenius_norm());
  // residuals vanish, so fitting the noiseless response with its truth works
  CHECK(st.residuals(st.b_ols()).frobenius_norm() <= 1e-10 * d.y.frobenius_norm());
}

TEST_CASE("OLS with a scalar predictor is a weighted average") {
  Matrix x(1, 3);
  x << 1.0, 2.0, -1.0;
  Tensor y({2, 2, 3}, {1, 2, 3, 4, 0, 1, 0, 1, 2, 2, 2, 2});
  RegressionStats st{Dataset(x, y)};
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b) {
      const double expect = (1.0 * y.at({a, b, 0}) + 2.0 * y.at({a, b, 1}) - 1.0 * y.at({a, b, 2})) / 6.0;
      CHECK(st.b_ols().at({a, b, 0}) == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("OLS agrees with a per-voxel normal-equations oracle") {
  Rng rng(3);
  const Dataset d = random_dataset({4, 4}, 3, 20, rng);
  const FitResult fr = ols_fit(d);
  // oracle: regress each voxel on the centered design with an intercept
  Matrix design(20, 4);
  design.col(0).setOnes();
  design.rightCols(3) = d.x.transpose();
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b) {
      Vector yv(20);
      for (std::size_t i = 0; i < 20; ++i) yv(static_cast<Eigen::Index>(i)) = d.y.at({a, b, i});
      const Vector coef = (design.transpose() * design).ldlt().solve(design.transpose() * yv);
      for (std::size_t l = 0; l < 3; ++l)
        CHECK(fr.b.at({a, b, l}) == doctest::Approx(coef(static_cast<Eigen::Index>(l + 1))).epsilon(1e-10));
    }
  CHECK(fr.objective_trace.size() == 1);
  CHECK(!fr.model);
}

TEST_CASE("ill-conditioned design is rejected") {
  Matrix x(2, 5);
  x << 1, 2, 3, 4, 5, 2, 4, 6, 8, 10.0000000000001;
  Rng rng(4);
  CHECK_THROWS_AS(RegressionStats(center(Dataset(x, testutil::random_tensor({2, 5}, rng)))), NumericalError);
}

TEST_CASE("residual gram agrees with direct residuals") {
  Rng rng(5);
  const Dataset d = center(random_dataset({2, 3, 4}, 2, 9, rng));
  RegressionStats st(d);
  const auto cov = testutil::random_cov({2, 3, 4}, rng);
  const auto il = inverse_cholesky_factors(cov.factors);
  const Tensor b = testutil::random_tensor({2, 3, 4, 2}, rng);
  const Tensor e = st.residuals(b);
  for (std::size_t k = 0; k < 3; ++k) {
    const Matrix direct = whitened_mode_gram(e, il, k);
    CHECK((st.residual_gram(b, il, k) - direct).norm() <= 1e-10 * direct.norm());
  }
}

TEST_CASE("compute_mn") {
  Rng rng(6);
  const Dataset d = center(random_dataset({2, 3}, 2, 10, rng));
  RegressionStats st(d);
  FlipFlopOptions tight;
  tight.tol = 1e-13;
  tight.max_sweeps = 1000;
  tight.objective_tol = 0.0;
  const auto ff = flip_flop_mle(st.residuals(st.b_ols()), std::nullopt, tight);
  const std::vector<Matrix> none(2);
  for (std::size_t k = 0; k < 2; ++k) {
    // with every P_j = I the residual moment is the flip-flop factor itself
    const ModeMoments mn = compute_mn(k, st, ff.cov, none);
    CHECK((mn.m / mn.m.norm() - ff.cov.factors[k]).norm() <= 1e-8);
  }

  // dense oracle with a nontrivial projection on the other mode
  const auto cov = testutil::random_cov({2, 3}, rng);
  const Matrix g = random_semi_orthogonal(3, 1, rng);
  std::vector<Matrix> proj{Matrix(), g * g.transpose()};
  const ModeMoments mn = compute_mn(0, st, cov, proj);
  const Tensor bt = mode_product(st.b_ols(), proj[1], 1);
  const Tensor delta = st.residuals(bt);
  const Matrix w = cov.factors[1].inverse();
  Matrix m_or = Matrix::Zero(2, 2), n_or = Matrix::Zero(2, 2);
  for (std::size_t i = 0; i < 10; ++i) {
    Matrix di(2, 3), yi(2, 3);
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 3; ++b) {
        di(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = delta.at({a, b, i});
        yi(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = d.y.at({a, b, i});
      }
    m_or += di * w * di.transpose();
    n_or += yi * w * yi.transpose();
  }
  m_or /= 30.0;
  n_or /= 30.0;
  CHECK((mn.m - m_or).norm() <= 1e-10 * m_or.norm());
  CHECK((mn.n - n_or).norm() <= 1e-10 * n_or.norm());

  RegressionStats zero{Dataset(d.x, Tensor(d.y.dims()))};
  CHECK(compute_mn(0, zero, cov, none).n.norm() == 0.0);
}

TEST_CASE("update_theta") {
  Rng rng(7);
  const Dataset d = center(random_dataset({3, 4}, 2, 15, rng));
  RegressionStats st(d);
  const EnvelopeBasis full({Matrix::Identity(3, 3), Matrix::Identity(4, 4)});
  CHECK((update_theta(st, full)->flat() - st.b_ols().flat()).norm() <= 1e-12 * st.b_ols().frobenius_norm());

  // noiseless data with B inside the envelope
  const EnvelopeBasis basis({random_semi_orthogonal(3, 2, rng), random_semi_orthogonal(4, 1, rng)});
  const Tensor theta0 = testutil::random_tensor({2, 1, 2}, rng);
  std::vector<Matrix> f = basis.gammas;
  f.push_back(Matrix::Identity(2, 2));
  const Tensor b = tucker(theta0, f);
  const Matrix x = testutil::random_matrix(2, 15, rng);
  RegressionStats exact{Dataset(x, mode_product(b, x.transpose(), 2))};
  const Tensor rebuilt = tucker(*update_theta(exact, basis), f);
  CHECK((rebuilt.flat() - b.flat()).norm() <= 1e-10 * b.frobenius_norm());

  // two groups coded +-0.5: Theta is the difference of mean projected cores
  Matrix xg(1, 8);
  xg << 0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, -0.5;
  const Tensor yg = testutil::random_tensor({3, 4, 8}, rng);
  RegressionStats sg{Dataset(xg, yg)};
  const Tensor th = *update_theta(sg, basis);
  Tensor z = mode_product(mode_product(yg, basis.gammas[0].transpose(), 0), basis.gammas[1].transpose(), 1);
  for (std::size_t a = 0; a < 2; ++a) {
    double m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < 4; ++i) m1 += z.at({a, 0, i}) / 4.0, m2 += z.at({a, 0, i + 4}) / 4.0;
    CHECK(th.at({a, 0, 0}) == doctest::Approx(m1 - m2).epsilon(1e-12));
  }
  const EnvelopeBasis empty({Matrix(3, 0), Matrix::Identity(4, 4)});
  CHECK(!update_theta(st, empty));
}

TEST_CASE("update_omegas degenerate cases") {
  Rng rng(8);
  const Dataset d = center(random_dataset({3, 4}, 2, 30, rng));
  RegressionStats st(d);
  FlipFlopOptions tight;
  tight.tol = 1e-12;
  tight.max_sweeps = 2000;
  tight.objective_tol = 0.0;
  const auto ff = flip_flop_mle(st.residuals(st.b_ols()), std::nullopt, tight);

  const EnvelopeBasis full({Matrix::Identity(3, 3), Matrix::Identity(4, 4)});
  const OmegaUpdate a = update_omegas(st, full, ff.cov, tight);
  CHECK(a.omega0s[0].size() == 0);
  CHECK(a.omega0s[1].size() == 0);
  const auto ra = reconstruct(full, st.b_ols(), a.omegas, a.omega0s);
  CHECK((ra.second.dense() - ff.cov.dense()).norm() <= 1e-8 * ff.cov.dense().norm());
  CHECK((ra.first.flat() - st.b_ols().flat()).norm() == 0.0);

  const EnvelopeBasis none({Matrix(3, 0), Matrix(4, 0)});
  const OmegaUpdate b = update_omegas(st, none, ff.cov, tight);
  CHECK(b.omegas[0].size() == 0);
  const auto yff = flip_flop_mle(d.y, std::nullopt, tight);
  const auto rb = reconstruct(none, st.b_ols(), b.omegas, b.omega0s);
  CHECK((rb.second.dense() - yff.cov.dense()).norm() <= 1e-8 * yff.cov.dense().norm());
  CHECK(rb.first.frobenius_norm() == 0.0);
}

TEST_CASE("update_omegas with one mode has closed forms") {
  Rng rng(9);
  const Dataset d = center(random_dataset({4}, 1, 25, rng));
  RegressionStats st(d);
  const EnvelopeBasis basis({random_semi_orthogonal(4, 2, rng)});
  const OmegaUpdate om = update_omegas(st, basis, SeparableCovariance::identity({4}));
  const Matrix y = d.y.to_matrix();
  const Matrix& g0 = basis.completions[0];
  const Matrix expect0 = g0.transpose() * (y * y.transpose() / 25.0) * g0;
  CHECK((om.omega0s[0] - expect0).cwiseAbs().maxCoeff() <= 1e-12 * expect0.cwiseAbs().maxCoeff());
  // material block: core residual second moment
  const Matrix& g = basis.gammas[0];
  const Matrix z = g.transpose() * y;
  const Matrix th = z * d.x.transpose() * (d.x * d.x.transpose()).inverse();
  const Matrix s = z - th * d.x;
  const Matrix expect = s * s.transpose() / 25.0;
  CHECK((om.omegas[0] - expect).cwiseAbs().maxCoeff() <= 1e-12 * expect.cwiseAbs().maxCoeff());
}

TEST_CASE("reconstruct satisfies the envelope structure") {
  Rng rng(10);
  const Dataset d = center(random_dataset({4, 5}, 2, 30, rng));
  RegressionStats st(d);
  const EnvelopeBasis basis({random_semi_orthogonal(4, 2, rng), random_semi_orthogonal(5, 3, rng)});
  const OmegaUpdate om = update_omegas(st, basis, SeparableCovariance::identity({4, 5}));
  const auto [b, cov] = reconstruct(basis, st.b_ols(), om.omegas, om.omega0s);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(max_abs(project_out(b, basis, k)) <= 1e-10 * max_abs(b));
    const Matrix p = basis.projection(k);
    CHECK((p * cov.factors[k] - cov.factors[k] * p).norm() <= 1e-10);
    CHECK(cov.factors[k].norm() == doctest::Approx(1.0).epsilon(1e-14));
  }
  const EnvelopeBasis full({Matrix::Identity(4, 4), Matrix::Identity(5, 5)});
  const OmegaUpdate of = update_omegas(st, full, SeparableCovariance::identity({4, 5}));
  CHECK(reconstruct(full, st.b_ols(), of.omegas, of.omega0s).first == st.b_ols());
}

TEST_CASE("objective_l") {
  Rng rng(11);
  // identity covariance, zero B, unit responses: mean squared norm
  Tensor y({2, 3, 4});
  for (auto& v : y.data()) v = 1.0;
  const Dataset ones(Matrix::Identity(1, 4) + testutil::random_matrix(1, 4, rng), y);
  const SeparableCovariance id({Matrix::Identity(2, 2), Matrix::Identity(3, 3)}, 1.0);
  CHECK(objective_l(Tensor({2, 3, 1}), id, ones) == doctest::Approx(6.0).epsilon(1e-13));

  const Dataset d = random_dataset({2, 3}, 2, 5, rng);
  const auto cov = testutil::random_cov({2, 3}, rng);
  const Tensor b = testutil::random_tensor({2, 3, 2}, rng);
  RegressionStats st(d);
  const Tensor e = st.residuals(b);
  const Matrix dense = cov.dense();
  const double oracle = std::log(dense.determinant()) + testutil::dense_quadratic(e, dense) / 5.0;
  CHECK(objective_l(b, cov, d) == doctest::Approx(oracle).epsilon(1e-10));

  // correlated errors: the flip-flop covariance beats the identity
  std::vector<Matrix> f{testutil::random_spd(3, rng), testutil::random_spd(4, rng)};
  const SeparableCovariance truth = SeparableCovariance(f, 1.0).normalized();
  Matrix x = testutil::random_matrix(1, 200, rng);
  const Dataset corr(x, sample_matrix_normal_stack(truth, 200, rng));
  const FitResult fr = ols_fit(corr);
  RegressionStats sc(center(corr));
  const double at_ff = objective_l(fr.b, fr.cov, sc);
  const double at_id = objective_l(fr.b, SeparableCovariance::identity({3, 4}), sc);
  CHECK(at_ff <= at_id);
  CHECK(fr.initial_objective == doctest::Approx(at_ff).epsilon(1e-12));
}

TEST_CASE("envelope fits degenerate to OLS when u = r") {
  Rng rng(12);
  const Dataset d = random_dataset({3, 4, 2}, 2, 20, rng);
  const FitResult ols = ols_fit(d);
  const Dims u{3, 4, 2};
  for (const FitResult& fr : {fit_iterative(d, u), fit_onestep(d, u)}) {
    CHECK((fr.b.flat() - ols.b.flat()).norm() <= 1e-10 * ols.b.frobenius_norm());
    CHECK(fr.model);
  }
}

TEST_CASE("u = 0 forces a zero coefficient") {
  Rng rng(13);
  const Dataset d = random_dataset({3, 4}, 1, 20, rng);
  const FitResult fr = fit_iterative(d, Dims{0, 2});
  CHECK(fr.b.frobenius_norm() == 0.0);
  CHECK(!fr.model->theta);
  CHECK_THROWS_AS(fit_iterative(d, Dims{4, 2}), DimensionError);
  CHECK_THROWS_AS(fit_onestep(d, Dims{1}), DimensionError);
}

TEST_CASE("iterative fit: monotone trace and envelope structure") {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    auto [d, truth] = envelope_instance({6, 7, 5}, {2, 2, 3}, 2, 60, seed);
    const FitResult fr = fit_iterative(d, Dims{2, 2, 3});
    for (std::size_t t = 1; t < fr.objective_trace.size(); ++t)
      CHECK(fr.objective_trace[t] <= fr.objective_trace[t - 1] + 1e-9 * std::abs(fr.objective_trace[t - 1]));
    CHECK(fr.objective_trace.size() == static_cast<std::size_t>(fr.iterations));
    CHECK(fr.objective_trace.front() >= fr.initial_objective - 1e-9 * std::abs(fr.initial_objective));
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(max_abs(project_out(fr.b, fr.model->basis, k)) <= 1e-10 * max_abs(fr.b));
      const Matrix& g = fr.model->basis.gammas[k];
      CHECK((g.transpose() * g - Matrix::Identity(g.cols(), g.cols())).norm() <= 1e-10);
      CHECK((g.transpose() * fr.model->basis.completions[k]).norm() <= 1e-10);
    }
    const FitResult os = fit_onestep(d, Dims{2, 2, 3});
    for (std::size_t k = 0; k < 3; ++k) CHECK(max_abs(project_out(os.b, os.model->basis, k)) <= 1e-10 * max_abs(os.b));
    CHECK(os.iterations == 1);
    CHECK(os.objective_trace.size() == 1);
  }
}

TEST_CASE("one mode: the fit regresses the reduced response") {
  Rng rng(14);
  const Dataset d = random_dataset({3}, 2, 40, rng);
  const FitResult fr = fit_iterative(d, Dims{1});
  const Matrix& g = fr.model->basis.gammas[0];
  const Dataset c = center(d);
  const Matrix reduced = g.transpose() * c.y.to_matrix();
  const Matrix theta = reduced * c.x.transpose() * (c.x * c.x.transpose()).inverse();
  CHECK((fr.model->theta->to_matrix() - theta).norm() <= 1e-10 * theta.norm());
  CHECK((fr.b.to_matrix() - g * theta).norm() <= 1e-10 * theta.norm());
}

TEST_CASE("envelope estimators beat OLS on structured data and improve with n") {
  const Dims r{8, 9, 10}, u{2, 2, 3};
  double ols100 = 0, it100 = 0, os100 = 0, ols400 = 0, it400 = 0;
  double t_it = 0, t_os = 0;
  for (std::uint64_t seed = 31; seed < 34; ++seed) {
    for (std::size_t n : {100u, 400u}) {
      auto [d, truth] = envelope_instance(r, u, 3, n, seed, 0.3);
      const double eo = (ols_fit(d).b.flat() - truth.b.flat()).squaredNorm();
      const FitResult it = fit_iterative(d, u);
      const double ei = (it.b.flat() - truth.b.flat()).squaredNorm();
      if (n == 100) {
        const FitResult os = fit_onestep(d, u);
        ols100 += eo;
        it100 += ei;
        os100 += (os.b.flat() - truth.b.flat()).squaredNorm();
        t_it += it.seconds;
        t_os += os.seconds;
      } else {
        ols400 += eo;
        it400 += ei;
      }
    }
  }
  CHECK(it100 * 5.0 < ols100);
  CHECK(os100 * 5.0 < ols100);
  CHECK(os100 <= 3.0 * it100);
  CHECK(ols400 < ols100);
  CHECK(it400 < it100);
  CHECK(t_os < t_it);
}

TEST_CASE("parameter counts") {
  const std::size_t r2[] = {64, 64}, u2[] = {14, 14};
  const auto pc = parameter_count(r2, u2, 1);
  CHECK(pc.saved == 64u * 64u - 14u * 14u);
  CHECK(pc.saved == 3900u);
  const auto same = parameter_count(r2, r2, 1);
  CHECK(same.saved == 0u);
  CHECK(same.envelope == same.full);
  CHECK(same.full == 64u * 64u + 2u * 64u * 65u / 2u);
  const std::size_t r3[] = {20, 30, 40}, u3[] = {2, 3, 4};
  const auto c3 = parameter_count(r3, u3, 5);
  CHECK(c3.full == 5u * 24000u + 210u + 465u + 820u);
  CHECK(c3.envelope == 5u * 24u + (2u * 18u + 3u + 171u) + (3u * 27u + 6u + 378u) + (4u * 36u + 10u + 666u));
  CHECK(c3.full >= c3.envelope + c3.saved);
  const std::size_t bad[] = {65, 14};
  CHECK_THROWS_AS(parameter_count(r2, bad, 1), DimensionError);
}
