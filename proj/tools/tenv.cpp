// Command-line front end. Exit codes: 0 success, 1 usage, 2 data or format
// error, 3 numerical failure.
#include "tenv/commands.hpp"
#include "tenv/error.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

std::size_t default_threads() {
  if (const char* env = std::getenv("TENV_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor envelope response regression"};
  app.require_subcommand(1);

  tenv::CommandOptions opts;
  opts.threads = default_threads();
  std::uint64_t seed = 0;
  double tol = 0.0;
  int max_iter = 0, starts = 0;
  std::string u_text, estimator_text;

  auto add_fit_flags = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Master random seed");
    sub->add_option("--threads", opts.threads, "Worker threads (default: TENV_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--tol", tol, "Relative objective change ending the outer loop");
    sub->add_option("--max-iter", max_iter, "Maximum outer iterations");
    sub->add_option("--starts", starts, "Random Grassmann starts per mode");
    sub->add_option("--estimator", estimator_text, "ols, env-iterative or env-onestep");
  };

  std::string scenario, out, manifest, fit_dir, tensor_file, slice, mask_file;
  bool render_mask = false;
  double rank_tol = 1e-8;

  auto* sim = app.add_subcommand("simulate", "Run a simulation scenario");
  sim->add_option("scenario", scenario, "Scenario file")->required();
  sim->add_option("out", out, "Output directory")->required();
  add_fit_flags(sim);
  sim->add_option("--u", u_text, "Working envelope dimensions, e.g. 2,3,4");
  sim->add_flag("--timings", opts.timings, "Record wall-clock seconds per fit");

  auto* fitc = app.add_subcommand("fit", "Fit a dataset described by a manifest");
  fitc->add_option("manifest", manifest, "Dataset manifest")->required();
  fitc->add_option("out", out, "Output directory")->required();
  add_fit_flags(fitc);
  fitc->add_option("--u", u_text, "Envelope dimensions, e.g. 2,3,4");

  auto* pv = app.add_subcommand("pvalue", "P-value maps and masks for a fit");
  pv->add_option("fit_dir", fit_dir, "Directory written by fit")->required();
  pv->add_option("manifest", manifest, "Dataset manifest")->required();
  pv->add_option("out", out, "Output directory")->required();
  pv->add_option("--alpha", opts.alpha, "Raw threshold");
  pv->add_option("--fdr", opts.fdr, "Benjamini-Hochberg level");

  auto* ren = app.add_subcommand("render", "Render an order-2 slice of a tensor file as PGM");
  ren->add_option("tensor", tensor_file, "Tensor file")->required();
  ren->add_option("slice", slice, "Slice such as :,:,0")->required();
  ren->add_option("out", out, "Output PGM")->required();
  ren->add_flag("--mask", render_mask, "Render nonzero entries black, zeros white");

  auto* sweep = app.add_subcommand("dimsweep", "Fit over a list of envelope dimensions");
  sweep->add_option("manifest", manifest, "Dataset manifest")->required();
  sweep->add_option("out", out, "Output CSV")->required();
  add_fit_flags(sweep);
  sweep->add_option("--u", u_text, "Semicolon-separated dimension lists, e.g. 5;10;15")->required();

  auto* rank = app.add_subcommand("rank", "Numerical rank of a PGM mask");
  rank->add_option("mask", mask_file, "PGM file")->required();
  rank->add_option("--tol", rank_tol, "Singular value ratio threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto was_set = [](CLI::App* sub, const char* name) {
    auto* o = sub->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  };

  try {
    CLI::App* sub = app.get_subcommands().front();
    if (was_set(sub, "--seed")) opts.seed = seed;
    if (was_set(sub, "--tol") && sub != rank) opts.tol = tol;
    if (was_set(sub, "--max-iter")) opts.max_iter = max_iter;
    if (was_set(sub, "--starts")) opts.starts = starts;
    if (was_set(sub, "--estimator")) opts.estimator = tenv::parse_estimator(estimator_text);
    if (was_set(sub, "--u") && sub != sweep) opts.u = tenv::parse_dims(u_text);

    if (sub == sim) tenv::cmd_simulate(scenario, out, opts, std::cout);
    else if (sub == fitc) tenv::cmd_fit(manifest, out, opts, std::cout);
    else if (sub == pv) tenv::cmd_pvalue(fit_dir, manifest, out, opts, std::cout);
    else if (sub == ren) tenv::cmd_render(tensor_file, slice, out, render_mask, std::cout);
    else if (sub == sweep) tenv::cmd_dimsweep(manifest, tenv::parse_u_list(u_text), out, opts, std::cout);
    else if (sub == rank) tenv::cmd_rank(mask_file, rank_tol, std::cout);
  } catch (const tenv::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const tenv::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
