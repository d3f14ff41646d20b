#pragma once

#include "tenv/estimators.hpp"
#include "tenv/io.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace tenv {

/// Flags shared by the subcommands. Unset optionals keep the scenario or
/// library defaults.
struct CommandOptions {
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::optional<double> tol;
  std::optional<int> max_iter;
  std::optional<int> starts;
  std::optional<Dims> u;
  std::optional<Estimator> estimator;
  double alpha = 0.05;
  double fdr = 0.05;
  bool timings = false;  ///< write wall-clock seconds into replication tables
};

/// Runs a scenario: writes the first replication's dataset (dataset/),
/// replications.csv ("rep,estimator,error,seconds") and summary.csv.
void cmd_simulate(const fs::path& scenario, const fs::path& out_dir, const CommandOptions& opts,
                  std::ostream& log);

/// Fits a manifest dataset; writes b.tenv, sigma_<k>.tenv, envelope
/// components for envelope fits, and diagnostics.txt.
void cmd_fit(const fs::path& manifest, const fs::path& out_dir, const CommandOptions& opts,
             std::ostream& log);

/// P-value and z maps, raw and BH masks for a fit directory, plus PGM renders
/// of every predictor slice for matrix responses.
void cmd_pvalue(const fs::path& fit_dir, const fs::path& manifest, const fs::path& out_dir,
                const CommandOptions& opts, std::ostream& log);

/// Min-max PGM render of one order-2 slice. With `mask` set, nonzero entries
/// render black and the rest white.
void cmd_render(const fs::path& tensor, const std::string& slice, const fs::path& out_pgm, bool mask,
                std::ostream& log);

/// One fit per working dimension; writes a CSV with objective, error against
/// the reference (the manifest's truth if present, else the OLS estimate) and
/// parameter counts. Failed fits are recorded and the sweep continues.
void cmd_dimsweep(const fs::path& manifest, const std::vector<Dims>& u_list, const fs::path& out_csv,
                  const CommandOptions& opts, std::ostream& log);

/// Numerical rank of a PGM mask (nonzero pixels are 1).
std::size_t cmd_rank(const fs::path& mask, double tol_ratio, std::ostream& log);

/// "5;10;15,20": semicolon-separated dimension lists. In cmd_dimsweep a
/// single integer u expands to (u, ..., u).
std::vector<Dims> parse_u_list(const std::string& s);

}  // namespace tenv
