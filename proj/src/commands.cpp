#include "tenv/commands.hpp"

#include "tenv/error.hpp"
#include "tenv/inference.hpp"
#include "tenv/simgen.hpp"

#include <cmath>
#include <sstream>

namespace tenv {

namespace {

FitOptions apply(FitOptions f, const CommandOptions& o) {
  if (o.tol) f.tol = *o.tol;
  if (o.max_iter) f.max_iter = *o.max_iter;
  if (o.starts) f.random_starts = *o.starts;
  if (o.seed) f.seed = *o.seed;
  return f;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

Tensor matrix_tensor(const Matrix& m) { return Tensor::from_matrix(m); }

const std::vector<std::string> kDiagnosticKeys{
    "estimator", "dims",          "n",             "p",           "u",
    "order",     "iterations",    "converged",     "stop_reason", "rejected_steps",
    "initial_objective", "objective_trace", "tau", "params_full", "params_envelope",
    "params_saved", "seconds"};

}  // namespace

std::vector<Dims> parse_u_list(const std::string& s) {
  std::vector<Dims> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ';'))
    if (cur.find_first_not_of(" \t") != std::string::npos) out.push_back(parse_dims(cur));
  if (out.empty()) throw FormatError("empty envelope dimension list");
  return out;
}

void cmd_simulate(const fs::path& scenario, const fs::path& out_dir, const CommandOptions& opts,
                  std::ostream& log) {
  ScenarioConfig config = read_scenario(scenario);
  if (opts.seed) config.seed = *opts.seed;
  if (opts.u) config.fit_u = *opts.u;
  if (opts.estimator) config.estimators = {*opts.estimator};
  config.fit = apply(config.fit, opts);
  config.fit.seed = config.seed;
  config.validate();

  Rng rng(replication_seed(config.seed, 0));
  auto [data, truth] = gen_scenario(config, rng);
  const ReplicationSummary rs = run_replications(config, opts.threads);

  fs::create_directories(out_dir);
  save_dataset(out_dir / "dataset", data, truth.b);
  for (std::size_t k = 0; k < truth.cov.factors.size(); ++k)
    write_tensor(out_dir / "dataset" / ("sigma_" + std::to_string(k + 1) + ".tenv"),
                 matrix_tensor(truth.cov.factors[k]));

  std::string reps = "rep,estimator,error,seconds\n";
  for (const auto& r : rs.records) {
    reps += std::to_string(r.rep) + "," + to_string(r.estimator) + ",";
    reps += r.ok ? format_double(r.error) : "NA";
    reps += ",";
    reps += r.ok && opts.timings ? format_double(r.seconds) : "NA";
    reps += "\n";
  }
  write_file(out_dir / "replications.csv", reps);

  std::string summary = "estimator,n,reps,mean,std_error,failures\n";
  for (const auto& s : rs.summaries) {
    summary += to_string(s.estimator) + "," + std::to_string(config.n) + "," + std::to_string(s.succeeded) +
               "," + format_double(s.mean) + "," + format_double(s.std_error) + "," +
               std::to_string(s.failures) + "\n";
    log << to_string(s.estimator) << ": mean error " << format_double(s.mean) << " (se "
        << format_double(s.std_error) << ", " << s.failures << " failed)\n";
  }
  write_file(out_dir / "summary.csv", summary);

  std::string meta = "design = " + to_string(config.design) + "\ndims = " + format_dims(config.dims) +
                     "\np = " + std::to_string(config.p) + "\nn = " + std::to_string(config.n) +
                     "\nu = " + format_dims(config.u) + "\nfit_u = " + format_dims(config.working_u()) +
                     "\nsigma0_sq = " + format_double(config.sigma0_sq) +
                     "\nsigma = " + format_double(truth.sigma) + "\nreps = " + std::to_string(config.reps) +
                     "\nseed = " + std::to_string(config.seed) + "\n";
  if (config.design == Design::shape) {
    meta += "shape = " + to_string(config.shape.kind) + "\n";
    if (config.shape.kind == ShapeKind::disk)
      meta += "radius = " +
              format_double(config.shape.radius > 0 ? config.shape.radius : 0.3 * static_cast<double>(config.shape.size)) +
              "\n";
    meta += "signal_rank = " + std::to_string(numerical_rank(make_shape(config.shape))) + "\n";
  }
  write_file(out_dir / "scenario_used.txt", meta);
}

void cmd_fit(const fs::path& manifest, const fs::path& out_dir, const CommandOptions& opts,
             std::ostream& log) {
  const Manifest man = read_manifest(manifest);
  const LoadedData loaded = load_dataset(man);
  const Estimator est = opts.estimator.value_or(Estimator::iterative);
  const std::size_t m = man.dims.size();
  Dims u = opts.u.value_or(man.dims);
  if (u.size() == 1 && m > 1) u.assign(m, u[0]);
  if (est != Estimator::ols && !opts.u) throw FormatError("envelope fits need --u");
  FitOptions fo = apply(FitOptions{}, opts);
  const FitResult res = fit(loaded.data, est, u, fo);

  fs::create_directories(out_dir);
  write_tensor(out_dir / "b.tenv", res.b);
  for (std::size_t k = 0; k < m; ++k)
    write_tensor(out_dir / ("sigma_" + std::to_string(k + 1) + ".tenv"), matrix_tensor(res.cov.factors[k]));
  if (res.model) {
    const auto& mod = *res.model;
    if (mod.theta) write_tensor(out_dir / "theta.tenv", *mod.theta);
    for (std::size_t k = 0; k < m; ++k) {
      const std::string id = std::to_string(k + 1);
      if (mod.basis.gammas[k].cols() > 0) {
        write_tensor(out_dir / ("gamma_" + id + ".tenv"), matrix_tensor(mod.basis.gammas[k]));
        write_tensor(out_dir / ("omega_" + id + ".tenv"), matrix_tensor(mod.omegas[k]));
      }
      if (mod.basis.completions[k].cols() > 0)
        write_tensor(out_dir / ("omega0_" + id + ".tenv"), matrix_tensor(mod.omega0s[k]));
    }
  }
  const Dims uu = est == Estimator::ols ? man.dims : u;
  const ParameterCount pc = parameter_count(man.dims, uu, man.p);
  std::string d;
  d += "estimator = " + to_string(est) + "\n";
  d += "dims = " + format_dims(man.dims) + "\n";
  d += "n = " + std::to_string(man.n) + "\np = " + std::to_string(man.p) + "\n";
  d += "u = " + format_dims(uu) + "\n";
  d += "order = " + std::to_string(m) + "\n";
  d += "iterations = " + std::to_string(res.iterations) + "\n";
  d += std::string("converged = ") + (res.converged ? "true" : "false") + "\n";
  d += "stop_reason = " + res.stop_reason + "\n";
  d += "rejected_steps = " + std::to_string(res.rejected_steps) + "\n";
  d += "initial_objective = " + format_double(res.initial_objective) + "\n";
  d += "objective_trace = " + join(res.objective_trace) + "\n";
  d += "tau = " + format_double(res.cov.tau) + "\n";
  d += "params_full = " + std::to_string(pc.full) + "\n";
  d += "params_envelope = " + std::to_string(pc.envelope) + "\n";
  d += "params_saved = " + std::to_string(pc.saved) + "\n";
  d += "seconds = " + format_double(res.seconds) + "\n";
  write_file(out_dir / "diagnostics.txt", d);
  log << to_string(est) << ": " << res.iterations << " iteration(s), objective "
      << (res.objective_trace.empty() ? std::string("NA") : format_double(res.objective_trace.back())) << ", "
      << res.stop_reason << "\n";
}

void cmd_pvalue(const fs::path& fit_dir, const fs::path& manifest, const fs::path& out_dir,
                const CommandOptions& opts, std::ostream& log) {
  if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw FormatError("--alpha must lie in (0, 1)");
  if (!(opts.fdr > 0.0 && opts.fdr < 1.0)) throw FormatError("--fdr must lie in (0, 1)");
  const Manifest man = read_manifest(manifest);
  const LoadedData loaded = load_dataset(man);
  const fs::path diag_path = fit_dir / "diagnostics.txt";
  double tau = 0.0;
  for (const auto& kv : parse_key_values(read_file(diag_path), kDiagnosticKeys, diag_path.string()))
    if (kv.key == "tau") tau = std::stod(kv.value);
  if (!(tau > 0.0)) throw FormatError(diag_path.string() + ": missing or invalid tau");
  const Tensor b = read_tensor(fit_dir / "b.tenv");
  const std::size_t m = man.dims.size();
  std::vector<Matrix> factors;
  for (std::size_t k = 0; k < m; ++k) {
    const Tensor f = read_tensor(fit_dir / ("sigma_" + std::to_string(k + 1) + ".tenv"));
    if (f.order() != 2) throw FormatError("covariance factor file is not a matrix");
    factors.push_back(f.to_matrix());
  }
  Dims bd = man.dims;
  bd.push_back(man.p);
  if (b.dims() != bd) throw FormatError("fit coefficient dims do not match the manifest");
  const SeparableCovariance cov(factors, tau);
  const PValueMap pm = pvalue_map(b, u_ols(predictor_covariance(loaded.data), cov), man.n);
  const Tensor raw = threshold_map(pm.p, opts.alpha);
  const Tensor bh = bh_fdr(pm.p, opts.fdr);

  fs::create_directories(out_dir);
  write_tensor(out_dir / "pvalues.tenv", pm.p);
  write_tensor(out_dir / "zscores.tenv", pm.z);
  write_tensor(out_dir / "mask_raw.tenv", raw);
  write_tensor(out_dir / "mask_bh.tenv", bh);
  double nraw = 0, nbh = 0;
  for (std::size_t j = 0; j < raw.size(); ++j) nraw += raw[j], nbh += bh[j];
  if (m == 2) {
    for (std::size_t l = 0; l < man.p; ++l) {
      const std::string spec = ":,:," + std::to_string(l);
      const std::string id = std::to_string(l + 1);
      write_pgm(out_dir / ("coef_" + id + ".pgm"), scale_to_gray(extract_slice(b, spec)));
      write_pgm(out_dir / ("mask_raw_" + id + ".pgm"), mask_to_gray(extract_slice(raw, spec)));
      write_pgm(out_dir / ("mask_bh_" + id + ".pgm"), mask_to_gray(extract_slice(bh, spec)));
    }
  }
  log << "entries with p < " << format_double(opts.alpha) << ": " << nraw << "; BH rejections at q = "
      << format_double(opts.fdr) << ": " << nbh << "\n";
}

void cmd_render(const fs::path& tensor, const std::string& slice, const fs::path& out_pgm, bool mask,
                std::ostream& log) {
  const Tensor t = read_tensor(tensor);
  const Matrix s = extract_slice(t, slice);
  write_pgm(out_pgm, mask ? mask_to_gray(s) : scale_to_gray(s));
  log << "wrote " << out_pgm.string() << " (" << s.rows() << " x " << s.cols() << ")\n";
}

void cmd_dimsweep(const fs::path& manifest, const std::vector<Dims>& u_list, const fs::path& out_csv,
                  const CommandOptions& opts, std::ostream& log) {
  const Manifest man = read_manifest(manifest);
  const LoadedData loaded = load_dataset(man);
  const std::size_t m = man.dims.size();
  const Estimator est = opts.estimator.value_or(Estimator::iterative);
  const FitOptions fo = apply(FitOptions{}, opts);
  Tensor reference;
  if (loaded.truth) {
    reference = *loaded.truth;
  } else {
    reference = ols_fit(loaded.data, fo).b;
  }
  std::string out = "u,status,objective,error,params_full,params_envelope,params_saved\n";
  for (Dims u : u_list) {
    if (u.size() == 1 && m > 1) u.assign(m, u[0]);
    out += format_dims(u, ' ') + ",";
    try {
      const ParameterCount pc = parameter_count(man.dims, u, man.p);
      const FitResult res = fit(loaded.data, est, u, fo);
      out += "ok," + format_double(res.objective_trace.back()) + "," +
             format_double(error_metric(res.b, reference)) + "," + std::to_string(pc.full) + "," +
             std::to_string(pc.envelope) + "," + std::to_string(pc.saved) + "\n";
      log << "u = " << format_dims(u) << ": objective " << format_double(res.objective_trace.back()) << "\n";
    } catch (const Error& e) {
      std::string msg = e.what();
      for (auto& c : msg)
        if (c == ',' || c == '\n') c = ';';
      out += "failed: " + msg + ",NA,NA,NA,NA,NA\n";
      log << "u = " << format_dims(u) << ": failed (" << e.what() << ")\n";
    }
  }
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  write_file(out_csv, out);
}

std::size_t cmd_rank(const fs::path& mask, double tol_ratio, std::ostream& log) {
  const Matrix img = read_pgm(mask);
  const std::size_t r = numerical_rank((img.array() != 0.0).cast<double>().matrix(), tol_ratio);
  log << r << "\n";
  return r;
}

}  // namespace tenv
