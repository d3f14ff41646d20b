#pragma once

#include "tenv/estimators.hpp"
#include "tenv/simgen.hpp"
#include "tenv/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tenv {

namespace fs = std::filesystem;

// Tensor files: "TENV1\n<m>\n<r_1> ... <r_m>\nLE f64\n" followed by the
// entries in storage order as little-endian doubles.

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes, const std::string& origin = "<memory>");
void write_tensor(const fs::path& path, const Tensor& t);
Tensor read_tensor(const fs::path& path);

// Binary 8-bit PGM (P5). Image row i is matrix row i.

std::string encode_pgm(const std::vector<std::uint8_t>& pixels, std::size_t width, std::size_t height);
void write_pgm(const fs::path& path, const Matrix& gray);  ///< entries already in 0..255
/// Pixel values as doubles, height x width.
Matrix read_pgm(const fs::path& path);
Matrix decode_pgm(const std::string& bytes, const std::string& origin = "<memory>");

/// Linear min-max scaling to 0..255 (rounded); a constant matrix maps to 0.
Matrix scale_to_gray(const Matrix& values);
/// Mask rendering: nonzero entries black (0), zero entries white (255).
Matrix mask_to_gray(const Matrix& mask);

/// Order-2 slice selected by a spec such as ":,:,3" (zero-based indices,
/// exactly two ':' entries). The first free mode indexes rows.
Matrix extract_slice(const Tensor& t, const std::string& spec);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);
/// Comma-separated rows; each line is one matrix row.
Matrix read_csv_matrix(const fs::path& path);
void write_csv_matrix(const fs::path& path, const Matrix& m);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& contents);

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Flat "key = value" text with '#' comments and blank lines. Keys outside
/// `allowed` and repeated keys raise FormatError naming the line.
std::vector<KeyValue> parse_key_values(const std::string& text, const std::vector<std::string>& allowed,
                                       const std::string& origin);

Dims parse_dims(const std::string& s);
std::string format_dims(const Dims& d, char sep = ',');

struct Manifest {
  fs::path x_path;  ///< CSV, n rows x p columns
  fs::path y_path;  ///< tensor file, dims (r_1, ..., r_m, n)
  std::size_t n = 0;
  std::size_t p = 0;
  Dims dims;
  std::optional<fs::path> groups;  ///< one label per line
  std::optional<fs::path> truth;   ///< tensor file, dims (r_1, ..., r_m, p)
};

/// Relative paths are resolved against the manifest's directory.
Manifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const Manifest& m);

struct LoadedData {
  Dataset data;
  std::optional<Tensor> truth;
  std::vector<std::string> groups;
};

/// Reads X and Y and checks them against the declared n, p and dims.
LoadedData load_dataset(const Manifest& m);

/// Writes x.csv, y.tenv, optionally truth.tenv and manifest.txt into `dir`.
void save_dataset(const fs::path& dir, const Dataset& d, const std::optional<Tensor>& truth);

/// Scenario keys: design, dims, p, n, snr, sigma, sigma0_sq, u, fit_u, reps,
/// seed, shape, size, radius, mask, signal_scale, estimators, tol, max_iter,
/// starts, center.
ScenarioConfig parse_scenario(const std::string& text, const fs::path& base_dir = {},
                              const std::string& origin = "<scenario>");
ScenarioConfig read_scenario(const fs::path& path);

}  // namespace tenv
