#include "tenv/io.hpp"

#include "tenv/error.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tenv {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  const auto t = trim(s);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw FormatError(what + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto t = trim(s);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw FormatError(what + ": expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

// Reads one header line (up to '\n') starting at pos.
std::string header_line(const std::string& bytes, std::size_t& pos, const std::string& origin) {
  const auto nl = bytes.find('\n', pos);
  if (nl == std::string::npos || nl - pos > 4096) throw FormatError(origin + ": truncated tensor header");
  std::string line = bytes.substr(pos, nl - pos);
  pos = nl + 1;
  return line;
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

// ------------------------------------------------------------ tensor files

std::string encode_tensor(const Tensor& t) {
  if (t.order() == 0) throw DimensionError("cannot store an order-0 tensor");
  std::string out = "TENV1\n" + std::to_string(t.order()) + "\n" + format_dims(t.dims(), ' ') + "\nLE f64\n";
  const std::size_t head = out.size();
  out.resize(head + 8 * t.size());
  for (std::size_t j = 0; j < t.size(); ++j) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(t[j]));
    std::memcpy(out.data() + head + 8 * j, &bits, 8);
  }
  return out;
}

Tensor decode_tensor(const std::string& bytes, const std::string& origin) {
  std::size_t pos = 0;
  if (bytes.compare(0, 6, "TENV1\n") != 0) throw FormatError(origin + ": bad magic (not a TENV1 tensor file)");
  pos = 6;
  const std::size_t m = parse_size(header_line(bytes, pos, origin), origin + ": order");
  if (m == 0) throw FormatError(origin + ": order must be positive");
  std::istringstream dl(header_line(bytes, pos, origin));
  Dims dims;
  std::string tok;
  while (dl >> tok) dims.push_back(parse_size(tok, origin + ": dimension"));
  if (dims.size() != m) throw FormatError(origin + ": header lists " + std::to_string(dims.size()) +
                                          " dimensions for order " + std::to_string(m));
  for (auto d : dims)
    if (d == 0) throw FormatError(origin + ": zero dimension");
  if (header_line(bytes, pos, origin) != "LE f64") throw FormatError(origin + ": unsupported element type");
  const std::size_t count = dims_product(dims);
  if (bytes.size() - pos != 8 * count)
    throw FormatError(origin + ": payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                      std::to_string(8 * count));
  std::vector<double> data(count);
  for (std::size_t j = 0; j < count; ++j) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, bytes.data() + pos + 8 * j, 8);
    data[j] = std::bit_cast<double>(to_le(bits));
  }
  return Tensor(std::move(dims), std::move(data));
}

void write_tensor(const fs::path& path, const Tensor& t) { write_file(path, encode_tensor(t)); }

Tensor read_tensor(const fs::path& path) { return decode_tensor(read_file(path), path.string()); }

// ------------------------------------------------------------------- PGM

std::string encode_pgm(const std::vector<std::uint8_t>& pixels, std::size_t width, std::size_t height) {
  if (pixels.size() != width * height) throw DimensionError("encode_pgm: pixel count mismatch");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

void write_pgm(const fs::path& path, const Matrix& gray) {
  const auto h = static_cast<std::size_t>(gray.rows()), w = static_cast<std::size_t>(gray.cols());
  std::vector<std::uint8_t> px(w * h);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double v = gray(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      px[i * w + j] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  write_file(path, encode_pgm(px, w, h));
}

Matrix decode_pgm(const std::string& bytes, const std::string& origin) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError(origin + ": truncated PGM header");
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P5") throw FormatError(origin + ": not a binary PGM (P5)");
  const std::size_t w = parse_size(next_token(), origin + ": width");
  const std::size_t h = parse_size(next_token(), origin + ": height");
  const std::size_t maxval = parse_size(next_token(), origin + ": maxval");
  if (w == 0 || h == 0) throw FormatError(origin + ": empty image");
  if (maxval == 0 || maxval > 255) throw FormatError(origin + ": only 8-bit PGM is supported");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos || bytes.size() - pos != w * h)
    throw FormatError(origin + ": pixel data has the wrong length");
  Matrix out(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<unsigned char>(bytes[pos + i * w + j]);
  return out;
}

Matrix read_pgm(const fs::path& path) { return decode_pgm(read_file(path), path.string()); }

Matrix scale_to_gray(const Matrix& values) {
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  if (!(hi > lo)) return Matrix::Zero(values.rows(), values.cols());
  return ((values.array() - lo) * (255.0 / (hi - lo))).round().matrix();
}

Matrix mask_to_gray(const Matrix& mask) {
  return (mask.array() != 0.0).select(Matrix::Zero(mask.rows(), mask.cols()), 255.0);
}

Matrix extract_slice(const Tensor& t, const std::string& spec) {
  const auto parts = split(spec, ',');
  if (parts.size() != t.order())
    throw FormatError("slice '" + spec + "' has " + std::to_string(parts.size()) + " entries for an order-" +
                      std::to_string(t.order()) + " tensor");
  std::vector<std::size_t> free;
  std::vector<std::size_t> idx(t.order(), 0);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k] == ":") {
      free.push_back(k);
    } else {
      idx[k] = parse_size(parts[k], "slice index");
      if (idx[k] >= t.dim(k)) throw FormatError("slice index " + parts[k] + " out of range for mode " +
                                                std::to_string(k + 1));
    }
  }
  if (free.size() != 2) throw FormatError("slice '" + spec + "' must contain exactly two ':' entries");
  Matrix out(static_cast<Eigen::Index>(t.dim(free[0])), static_cast<Eigen::Index>(t.dim(free[1])));
  for (std::size_t j = 0; j < t.dim(free[1]); ++j)
    for (std::size_t i = 0; i < t.dim(free[0]); ++i) {
      idx[free[0]] = i;
      idx[free[1]] = j;
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = t[t.linear_index(idx)];
    }
  return out;
}

// ------------------------------------------------------------------- CSV

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf, ptr);
}

Matrix read_csv_matrix(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split(line, ','))
      row.push_back(parse_double(cell, path.string() + ":" + std::to_string(lineno)));
    if (!rows.empty() && row.size() != rows[0].size())
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path.string() + ": empty CSV");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[0].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void write_csv_matrix(const fs::path& path, const Matrix& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  write_file(path, out);
}

// ------------------------------------------------------------ key/value

std::vector<KeyValue> parse_key_values(const std::string& text, const std::vector<std::string>& allowed,
                                       const std::string& origin) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw FormatError(where + ": expected 'key = value'");
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
    if (kv.key.empty()) throw FormatError(where + ": empty key");
    if (kv.key.find_first_of("[]{}.") != std::string::npos)
      throw FormatError(where + ": nested keys are not supported ('" + kv.key + "')");
    if (std::find(allowed.begin(), allowed.end(), kv.key) == allowed.end())
      throw FormatError(where + ": unknown key '" + kv.key + "'");
    for (const auto& prev : out)
      if (prev.key == kv.key) throw FormatError(where + ": duplicate key '" + kv.key + "'");
    out.push_back(std::move(kv));
  }
  return out;
}

Dims parse_dims(const std::string& s) {
  Dims d;
  std::string t = trim(s);
  if (t.empty()) throw FormatError("empty dimension list");
  std::replace(t.begin(), t.end(), 'x', ',');
  if (t.find(',') == std::string::npos) std::replace(t.begin(), t.end(), ' ', ',');
  for (const auto& part : split(t, ',')) {
    if (part.empty()) throw FormatError("empty entry in dimension list '" + s + "'");
    d.push_back(parse_size(part, "dimension list"));
  }
  return d;
}

std::string format_dims(const Dims& d, char sep) {
  std::string out;
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (k) out += sep;
    out += std::to_string(d[k]);
  }
  return out;
}

// -------------------------------------------------------------- manifest

Manifest read_manifest(const fs::path& path) {
  const auto kvs = parse_key_values(read_file(path), {"x", "y", "n", "p", "dims", "groups", "truth"},
                                    path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& v) {
    fs::path p(v);
    return p.is_absolute() ? p : base / p;
  };
  Manifest m;
  bool has_x = false, has_y = false, has_n = false, has_p = false, has_dims = false;
  for (const auto& kv : kvs) {
    const std::string where = path.string() + ":" + std::to_string(kv.line);
    if (kv.key == "x") m.x_path = resolve(kv.value), has_x = true;
    else if (kv.key == "y") m.y_path = resolve(kv.value), has_y = true;
    else if (kv.key == "n") m.n = parse_size(kv.value, where), has_n = true;
    else if (kv.key == "p") m.p = parse_size(kv.value, where), has_p = true;
    else if (kv.key == "dims") m.dims = parse_dims(kv.value), has_dims = true;
    else if (kv.key == "groups") m.groups = resolve(kv.value);
    else if (kv.key == "truth") m.truth = resolve(kv.value);
  }
  if (!(has_x && has_y && has_n && has_p && has_dims))
    throw FormatError(path.string() + ": manifest needs x, y, n, p and dims");
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  auto rel = [&](const fs::path& p) { return p.lexically_relative(path.parent_path()).generic_string(); };
  std::string out = "x = " + rel(m.x_path) + "\ny = " + rel(m.y_path) + "\nn = " + std::to_string(m.n) +
                    "\np = " + std::to_string(m.p) + "\ndims = " + format_dims(m.dims) + "\n";
  if (m.groups) out += "groups = " + rel(*m.groups) + "\n";
  if (m.truth) out += "truth = " + rel(*m.truth) + "\n";
  write_file(path, out);
}

LoadedData load_dataset(const Manifest& m) {
  const Matrix xrows = read_csv_matrix(m.x_path);
  if (static_cast<std::size_t>(xrows.rows()) != m.n || static_cast<std::size_t>(xrows.cols()) != m.p)
    throw FormatError(m.x_path.string() + ": expected " + std::to_string(m.n) + " x " + std::to_string(m.p) +
                      " predictors, found " + std::to_string(xrows.rows()) + " x " + std::to_string(xrows.cols()));
  Tensor y = read_tensor(m.y_path);
  Dims expect = m.dims;
  expect.push_back(m.n);
  if (y.dims() != expect)
    throw FormatError(m.y_path.string() + ": dims " + format_dims(y.dims()) + " do not match the manifest (" +
                      format_dims(expect) + ")");
  LoadedData out{Dataset(xrows.transpose(), std::move(y)), std::nullopt, {}};
  if (m.truth) {
    Tensor t = read_tensor(*m.truth);
    Dims bd = m.dims;
    bd.push_back(m.p);
    if (t.dims() != bd) throw FormatError(m.truth->string() + ": truth dims do not match the manifest");
    out.truth = std::move(t);
  }
  if (m.groups) {
    std::istringstream in(read_file(*m.groups));
    std::string line;
    while (std::getline(in, line))
      if (!trim(line).empty()) out.groups.push_back(trim(line));
    if (out.groups.size() != m.n) throw FormatError(m.groups->string() + ": expected one label per sample");
  }
  return out;
}

void save_dataset(const fs::path& dir, const Dataset& d, const std::optional<Tensor>& truth) {
  fs::create_directories(dir);
  Manifest m;
  m.x_path = dir / "x.csv";
  m.y_path = dir / "y.tenv";
  m.n = d.n();
  m.p = d.p();
  m.dims = d.response_dims();
  write_csv_matrix(m.x_path, d.x.transpose());
  write_tensor(m.y_path, d.y);
  if (truth) {
    m.truth = dir / "truth.tenv";
    write_tensor(*m.truth, *truth);
  }
  write_manifest(dir / "manifest.txt", m);
}

// -------------------------------------------------------------- scenario

ScenarioConfig parse_scenario(const std::string& text, const fs::path& base_dir, const std::string& origin) {
  static const std::vector<std::string> keys{
      "design", "dims",   "p",    "n",    "snr",          "sigma",      "sigma0_sq", "u",
      "fit_u",  "reps",   "seed", "shape", "size",        "radius",     "mask",      "signal_scale",
      "estimators", "tol", "max_iter", "starts", "center"};
  ScenarioConfig c;
  bool size_set = false, dims_set = false, u_set = false;
  for (const auto& kv : parse_key_values(text, keys, origin)) {
    const std::string where = origin + ":" + std::to_string(kv.line);
    try {
      if (kv.key == "design") c.design = parse_design(kv.value);
      else if (kv.key == "dims") c.dims = parse_dims(kv.value), dims_set = true;
      else if (kv.key == "p") c.p = parse_size(kv.value, kv.key);
      else if (kv.key == "n") c.n = parse_size(kv.value, kv.key);
      else if (kv.key == "snr") c.snr = parse_double(kv.value, kv.key);
      else if (kv.key == "sigma") c.sigma = parse_double(kv.value, kv.key);
      else if (kv.key == "sigma0_sq") c.sigma0_sq = parse_double(kv.value, kv.key);
      else if (kv.key == "u") c.u = parse_dims(kv.value), u_set = true;
      else if (kv.key == "fit_u") c.fit_u = parse_dims(kv.value);
      else if (kv.key == "reps") c.reps = parse_size(kv.value, kv.key);
      else if (kv.key == "seed") c.seed = parse_size(kv.value, kv.key);
      else if (kv.key == "shape") c.shape.kind = parse_shape_kind(kv.value);
      else if (kv.key == "size") c.shape.size = parse_size(kv.value, kv.key), size_set = true;
      else if (kv.key == "radius") c.shape.radius = parse_double(kv.value, kv.key);
      else if (kv.key == "mask") {
        fs::path p(kv.value);
        c.shape.path = (p.is_absolute() ? p : base_dir / p).string();
      } else if (kv.key == "signal_scale") c.signal_scale = parse_double(kv.value, kv.key);
      else if (kv.key == "estimators") {
        c.estimators.clear();
        for (const auto& e : split(kv.value, ',')) c.estimators.push_back(parse_estimator(e));
      } else if (kv.key == "tol") c.fit.tol = parse_double(kv.value, kv.key);
      else if (kv.key == "max_iter") c.fit.max_iter = static_cast<int>(parse_size(kv.value, kv.key));
      else if (kv.key == "starts") c.fit.random_starts = static_cast<int>(parse_size(kv.value, kv.key));
      else if (kv.key == "center") {
        if (kv.value == "true" || kv.value == "1") c.fit.center = true;
        else if (kv.value == "false" || kv.value == "0") c.fit.center = false;
        else throw FormatError("expected true or false");
      }
    } catch (const Error& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  if (c.design == Design::shape) {
    if (!size_set && dims_set && c.dims.size() == 2) c.shape.size = c.dims[0];
    if (!dims_set) c.dims = {c.shape.size, c.shape.size};
    if (!u_set) throw FormatError(origin + ": the shape design needs u");
    c.p = 1;
  }
  if (c.design == Design::shape && c.shape.kind == ShapeKind::mask_file) {
    const Matrix mask = make_shape(c.shape);
    c.dims = {static_cast<std::size_t>(mask.rows()), static_cast<std::size_t>(mask.cols())};
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw FormatError(origin + ": " + e.what());
  }
  return c;
}

ScenarioConfig read_scenario(const fs::path& path) {
  return parse_scenario(read_file(path), path.parent_path(), path.string());
}

}  // namespace tenv
