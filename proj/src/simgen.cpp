#include "tenv/simgen.hpp"

#include "tenv/error.hpp"
#include "tenv/io.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

namespace tenv {

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::square: return "square";
    case ShapeKind::cross: return "cross";
    case ShapeKind::disk: return "disk";
    case ShapeKind::mask_file: return "mask-file";
  }
  return "?";
}

ShapeKind parse_shape_kind(const std::string& s) {
  if (s == "square") return ShapeKind::square;
  if (s == "cross") return ShapeKind::cross;
  if (s == "disk") return ShapeKind::disk;
  if (s == "mask-file" || s == "mask") return ShapeKind::mask_file;
  throw FormatError("unknown shape '" + s + "' (expected square, cross, disk or mask-file)");
}

std::string to_string(Design d) { return d == Design::shape ? "shape" : "tucker"; }

Design parse_design(const std::string& s) {
  if (s == "shape") return Design::shape;
  if (s == "tucker" || s == "3way") return Design::tucker;
  throw FormatError("unknown design '" + s + "' (expected shape or tucker)");
}

Matrix make_shape(const ShapeSpec& spec) {
  if (spec.kind == ShapeKind::mask_file) {
    const Matrix img = read_pgm(spec.path);
    return (img.array() != 0.0).cast<double>().matrix();
  }
  const auto s = static_cast<Eigen::Index>(spec.size);
  if (s < 8) throw DimensionError("shape size must be at least 8");
  Matrix b = Matrix::Zero(s, s);
  switch (spec.kind) {
    case ShapeKind::square: {
      const Eigen::Index side = s / 2, lo = (s - side) / 2;
      b.block(lo, lo, side, side).setOnes();
      break;
    }
    case ShapeKind::cross: {
      const Eigen::Index w = s / 8, lo = (s - w) / 2;
      b.middleRows(lo, w).setOnes();
      b.middleCols(lo, w).setOnes();
      break;
    }
    case ShapeKind::disk: {
      const double rho = spec.radius > 0.0 ? spec.radius : 0.3 * static_cast<double>(s);
      const double c = (static_cast<double>(s) - 1.0) / 2.0;
      for (Eigen::Index j = 0; j < s; ++j)
        for (Eigen::Index i = 0; i < s; ++i) {
          const double di = static_cast<double>(i) - c, dj = static_cast<double>(j) - c;
          if (di * di + dj * dj <= rho * rho) b(i, j) = 1.0;
        }
      break;
    }
    case ShapeKind::mask_file: break;
  }
  return b;
}

std::size_t numerical_rank(const Matrix& b, double tol_ratio) {
  if (b.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(b);
  const Vector& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  return static_cast<std::size_t>((s.array() > tol_ratio * s(0)).count());
}

double calibrate_disk_radius(std::size_t size, std::size_t target_rank) {
  ShapeSpec spec{ShapeKind::disk, size, 0.0, {}};
  double best = -1.0;
  for (int step = 100; step <= static_cast<int>(50 * size); ++step) {
    spec.radius = 0.01 * step;
    if (numerical_rank(make_shape(spec)) == target_rank) best = spec.radius;
  }
  if (best < 0.0)
    throw NumericalError("no disk radius gives rank " + std::to_string(target_rank));
  return best;
}

namespace {

Matrix uniform_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix a(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) a(i, j) = unif(rng);
  return a;
}

Matrix normal_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix a(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) a(i, j) = normal(rng);
  return a;
}

Matrix random_spd(Eigen::Index d, Rng& rng) {
  const Matrix a = uniform_matrix(d, d, rng);
  return symmetrize(a * a.transpose());
}

}  // namespace

std::pair<SeparableCovariance, EnvelopeBasis> gen_envelope_covariance_from(
    std::span<const Matrix> g, double sigma0_sq, Rng& rng) {
  if (sigma0_sq < 0.0) throw DimensionError("sigma0_sq must be non-negative");
  std::vector<Matrix> gammas, factors;
  for (const auto& gk : g) {
    const Eigen::Index u = gk.cols();
    Matrix gamma = gk;
    if (u > 0) gamma = gk * orthonormalize(uniform_matrix(u, u, rng));
    gammas.push_back(gamma);
  }
  EnvelopeBasis basis(gammas);
  for (std::size_t k = 0; k < g.size(); ++k) {
    const Matrix& gamma = basis.gammas[k];
    const Matrix& gamma0 = basis.completions[k];
    const Eigen::Index r = gamma.rows();
    if (gamma.cols() == 0 && sigma0_sq == 0.0)
      throw DimensionError("mode " + std::to_string(k + 1) + " has u = 0 and sigma0_sq = 0, leaving it no variance");
    Matrix s = Matrix::Zero(r, r);
    if (gamma.cols() > 0) s += gamma * random_spd(gamma.cols(), rng) * gamma.transpose();
    if (gamma0.cols() > 0) s += sigma0_sq * gamma0 * random_spd(gamma0.cols(), rng) * gamma0.transpose();
    s = symmetrize(s);
    // A rank-deficient factor (sigma0_sq = 0) gets the smallest ridge that
    // keeps it positive definite.
    if ((sigma0_sq == 0.0 && gamma0.cols() > 0) || Eigen::LLT<Matrix>(s).info() != Eigen::Success)
      s += 1e-8 * s.trace() / static_cast<double>(r) * Matrix::Identity(r, r);
    factors.push_back(s / s.norm());
  }
  return {SeparableCovariance(std::move(factors), 1.0), std::move(basis)};
}

std::pair<SeparableCovariance, EnvelopeBasis> gen_envelope_covariance(
    const Tensor& b, std::span<const std::size_t> u, double sigma0_sq, Rng& rng) {
  if (b.order() < 2) throw DimensionError("coefficient needs a trailing predictor mode");
  const std::size_t m = b.order() - 1;
  if (u.size() != m) throw DimensionError("one envelope dimension per response mode is required");
  std::vector<Matrix> g;
  for (std::size_t k = 0; k < m; ++k) {
    if (u[k] > b.dim(k)) throw DimensionError("envelope dimension exceeds the mode size");
    const Matrix bk = matricize(b, k);
    const std::size_t rank = numerical_rank(bk);
    if (u[k] < rank)
      throw DimensionError("envelope dimension " + std::to_string(u[k]) + " of mode " +
                           std::to_string(k + 1) + " is below the signal rank " +
                           std::to_string(rank));
    Eigen::JacobiSVD<Matrix> svd(bk, Eigen::ComputeFullU);
    g.push_back(svd.matrixU().leftCols(static_cast<Eigen::Index>(u[k])));
  }
  return gen_envelope_covariance_from(g, sigma0_sq, rng);
}

double sigma_from_snr(const Tensor& b, const SeparableCovariance& cov, double snr) {
  if (!(snr > 0.0)) throw DimensionError("SNR must be positive");
  double trace = cov.tau;
  for (const auto& f : cov.factors) trace *= f.trace();
  const double norm = b.frobenius_norm();
  if (norm == 0.0) throw DimensionError("SNR is undefined for a zero signal; set sigma instead");
  return norm / (snr * std::sqrt(trace));
}

void ScenarioConfig::validate() const {
  if (dims.empty()) throw FormatError("dims must not be empty");
  const Dims wu = working_u();
  if (u.size() != dims.size() || wu.size() != dims.size())
    throw FormatError("u must list one envelope dimension per response mode");
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (dims[k] == 0) throw FormatError("dims must be positive");
    if (u[k] > dims[k] || wu[k] > dims[k]) throw FormatError("u_k must not exceed r_k");
  }
  if (!(snr > 0.0) && !sigma) throw FormatError("snr must be positive");
  if (sigma && !(*sigma >= 0.0)) throw FormatError("sigma must be non-negative");
  if (sigma0_sq < 0.0) throw FormatError("sigma0_sq must be non-negative");
  if (reps < 1) throw FormatError("reps must be at least 1");
  if (n < 2) throw FormatError("n must be at least 2");
  if (p < 1) throw FormatError("p must be at least 1");
  if (design == Design::shape) {
    if (dims.size() != 2 || p != 1) throw FormatError("the shape design needs 2 response modes and p = 1");
    if (shape.kind != ShapeKind::mask_file && (dims[0] != shape.size || dims[1] != shape.size))
      throw FormatError("dims must equal the shape size");
  }
  if (estimators.empty()) throw FormatError("at least one estimator is required");
}

namespace {

std::pair<Dataset, GroundTruth> finish_dataset(const ScenarioConfig& config, Tensor b, Matrix x,
                                               SeparableCovariance cov, EnvelopeBasis basis,
                                               Rng& rng) {
  const double sigma = config.sigma ? *config.sigma : sigma_from_snr(b, cov, config.snr);
  const std::size_t m = b.order() - 1;
  Tensor noise = sample_matrix_normal_stack(cov, config.n, rng);
  Tensor y = mode_product(b, x.transpose(), m);
  noise *= sigma;
  y += noise;
  GroundTruth truth;
  truth.b = std::move(b);
  truth.cov = cov;
  if (sigma > 0.0) truth.cov.tau *= sigma * sigma;
  truth.basis = std::move(basis);
  truth.sigma = sigma;
  return {Dataset(std::move(x), std::move(y)), std::move(truth)};
}

}  // namespace

std::pair<Dataset, GroundTruth> gen_dataset(const ScenarioConfig& config, const Matrix& shape, Rng& rng) {
  Dims bdims{static_cast<std::size_t>(shape.rows()), static_cast<std::size_t>(shape.cols()), 1};
  Tensor b(bdims, std::vector<double>(shape.data(), shape.data() + shape.size()));
  b *= config.signal_scale;
  Dims u = config.u;
  if (u.size() != 2) throw DimensionError("shape design needs two envelope dimensions");
  auto [cov, basis] = gen_envelope_covariance(b, u, config.sigma0_sq, rng);
  Matrix x = Matrix::Zero(1, static_cast<Eigen::Index>(config.n));
  x.leftCols(static_cast<Eigen::Index>((config.n + 1) / 2)).setOnes();
  return finish_dataset(config, std::move(b), std::move(x), std::move(cov), std::move(basis), rng);
}

std::pair<Dataset, GroundTruth> gen_dataset_3way(const ScenarioConfig& config, Rng& rng) {
  const std::size_t m = config.dims.size();
  if (config.u.size() != m) throw DimensionError("one envelope dimension per response mode is required");
  std::vector<Matrix> g;
  Dims core_dims;
  for (std::size_t k = 0; k < m; ++k) {
    const auto r = static_cast<Eigen::Index>(config.dims[k]);
    const auto u = static_cast<Eigen::Index>(config.u[k]);
    if (u > r) throw DimensionError("envelope dimension exceeds the mode size");
    g.push_back(u > 0 ? orthonormalize(uniform_matrix(r, u, rng)) : Matrix(r, 0));
    core_dims.push_back(config.u[k]);
  }
  auto [cov, basis] = gen_envelope_covariance_from(g, config.sigma0_sq, rng);
  core_dims.push_back(config.p);
  Tensor b;
  if (dims_product(core_dims) == 0) {
    Dims bdims = config.dims;
    bdims.push_back(config.p);
    b = Tensor(bdims);
  } else {
    const Matrix theta = normal_matrix(static_cast<Eigen::Index>(dims_product(core_dims)), 1, rng);
    Tensor core(core_dims, std::vector<double>(theta.data(), theta.data() + theta.size()));
    std::vector<Matrix> factors = basis.gammas;
    factors.push_back(Matrix::Identity(static_cast<Eigen::Index>(config.p), static_cast<Eigen::Index>(config.p)));
    b = tucker(core, factors);
  }
  b *= config.signal_scale;
  Matrix x = normal_matrix(static_cast<Eigen::Index>(config.p), static_cast<Eigen::Index>(config.n), rng);
  return finish_dataset(config, std::move(b), std::move(x), std::move(cov), std::move(basis), rng);
}

std::pair<Dataset, GroundTruth> gen_scenario(const ScenarioConfig& config, Rng& rng) {
  if (config.design == Design::shape) return gen_dataset(config, make_shape(config.shape), rng);
  return gen_dataset_3way(config, rng);
}

CpDataset gen_cp_dataset(const Matrix& b, std::size_t n, Rng& rng) {
  if (n < 1) throw DimensionError("gen_cp_dataset: n must be positive");
  CpDataset out;
  out.b = b;
  Dims dims{static_cast<std::size_t>(b.rows()), static_cast<std::size_t>(b.cols()), n};
  out.x = Tensor(dims);
  std::normal_distribution<double> normal;
  for (auto& v : out.x.data()) v = normal(rng);
  out.y.resize(static_cast<Eigen::Index>(n));
  const auto block = static_cast<Eigen::Index>(b.size());
  const Eigen::Map<const Vector> bv(b.data(), block);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Map<const Vector> xi(out.x.data().data() + static_cast<Eigen::Index>(i) * block, block);
    out.y(static_cast<Eigen::Index>(i)) = bv.dot(xi) + normal(rng);
  }
  return out;
}

double error_metric(const Tensor& b_hat, const Tensor& b_true) {
  if (b_hat.dims() != b_true.dims()) throw DimensionError("error_metric: dims differ");
  return (b_hat.flat() - b_true.flat()).squaredNorm();
}

std::uint64_t replication_seed(std::uint64_t master, std::size_t rep) {
  return mix_seed(master, rep, "replication");
}

ReplicationSummary run_replications(const ScenarioConfig& config, std::size_t threads) {
  config.validate();
  const std::size_t reps = config.reps;
  const std::size_t ne = config.estimators.size();
  const Dims wu = config.working_u();
  std::vector<ReplicationRecord> records(reps * ne);

  auto run_one = [&](std::size_t rep) {
    Rng rng(replication_seed(config.seed, rep));
    std::optional<std::pair<Dataset, GroundTruth>> data;
    std::string gen_error;
    try {
      data = gen_scenario(config, rng);
    } catch (const std::exception& e) {
      gen_error = e.what();
    }
    for (std::size_t e = 0; e < ne; ++e) {
      ReplicationRecord& rec = records[rep * ne + e];
      rec.rep = rep;
      rec.estimator = config.estimators[e];
      if (!data) {
        rec.message = "generation failed: " + gen_error;
        continue;
      }
      try {
        FitOptions opts = config.fit;
        opts.seed = mix_seed(config.seed, rep, "fit");
        const FitResult fr = fit(data->first, rec.estimator, wu, opts);
        rec.error = error_metric(fr.b, data->second.b);
        rec.truth_norm_sq = data->second.b.squared_norm();
        rec.seconds = fr.seconds;
        rec.objective_trace = fr.objective_trace;
        rec.rejected_steps = fr.rejected_steps;
        rec.iterations = fr.iterations;
        rec.converged = fr.converged;
        rec.ok = true;
      } catch (const std::exception& ex) {
        rec.message = ex.what();
      }
    }
  };

  threads = std::max<std::size_t>(1, std::min(threads, reps));
  if (threads == 1) {
    for (std::size_t rep = 0; rep < reps; ++rep) run_one(rep);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t rep = next++; rep < reps; rep = next++) run_one(rep);
      });
    for (auto& th : pool) th.join();
  }

  ReplicationSummary out;
  out.records = records;
  for (std::size_t e = 0; e < ne; ++e) {
    EstimatorSummary s;
    s.estimator = config.estimators[e];
    std::vector<double> errs;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const auto& rec = records[rep * ne + e];
      if (!rec.ok) {
        ++s.failures;
        continue;
      }
      errs.push_back(rec.error);
      s.seconds += rec.seconds;
    }
    s.succeeded = errs.size();
    if (errs.empty()) {
      s.mean = std::nan("");
      s.std_error = std::nan("");
    } else {
      double sum = 0.0;
      for (double v : errs) sum += v;
      s.mean = sum / static_cast<double>(errs.size());
      if (errs.size() < 2) {
        s.std_error = std::nan("");
      } else {
        double ss = 0.0;
        for (double v : errs) ss += (v - s.mean) * (v - s.mean);
        s.std_error = std::sqrt(ss / static_cast<double>(errs.size() - 1)) /
                      std::sqrt(static_cast<double>(errs.size()));
      }
    }
    out.summaries.push_back(s);
  }
  return out;
}

}  // namespace tenv
