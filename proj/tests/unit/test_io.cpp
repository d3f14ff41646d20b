#include "test_util.hpp"

#include <tenv/error.hpp>
#include <tenv/io.hpp>

#include <doctest.h>

#include <cmath>
#include <limits>
#include <unistd.h>

using namespace tenv;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("tenv_io_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string error_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("tensor files round trip bitwise") {
  TempDir tmp;
  Rng rng(1);
  for (const Dims& d : {Dims{5}, Dims{2, 3}, Dims{3, 1, 4, 2}}) {
    Tensor t = testutil::random_tensor(d, rng);
    t[0] = -0.0;
    t[t.size() - 1] = std::numeric_limits<double>::denorm_min();
    write_tensor(tmp.path / "t.tenv", t);
    const Tensor back = read_tensor(tmp.path / "t.tenv");
    CHECK(back.dims() == d);
    CHECK(std::memcmp(back.data().data(), t.data().data(), 8 * t.size()) == 0);
  }
  const std::string bytes = encode_tensor(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(bytes.substr(0, 17) == "TENV1\n2\n2 3\nLE f6");
  CHECK(bytes.size() == 19 + 48);
  // 1.0 little-endian
  CHECK(bytes.substr(19, 8) == std::string("\0\0\0\0\0\0\xf0\x3f", 8));
}

TEST_CASE("corrupt tensor files are rejected") {
  const std::string good = encode_tensor(Tensor({2, 2}, {1, 2, 3, 4}));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(error_of([&] { decode_tensor(bad_magic, "f"); }).find("bad magic") != std::string::npos);
  CHECK_THROWS_AS(decode_tensor(good.substr(0, good.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode_tensor(good + "x"), FormatError);
  CHECK_THROWS_AS(decode_tensor("TENV1\n2\n2\nLE f64\n"), FormatError);
  CHECK_THROWS_AS(decode_tensor("TENV1\n1\n0\nLE f64\n"), FormatError);
  CHECK_THROWS_AS(decode_tensor("TENV1\n1\n1\nBE f32\n12345678"), FormatError);
  CHECK_THROWS_AS(decode_tensor("TENV1\n"), FormatError);
  CHECK_THROWS_AS(decode_tensor(""), FormatError);
  CHECK_THROWS_AS(read_tensor("/nonexistent/file.tenv"), FormatError);
}

TEST_CASE("PGM encoding") {
  TempDir tmp;
  Matrix g(2, 3);
  g << 0, 128, 255, 7, 8, 9;
  write_pgm(tmp.path / "a.pgm", g);
  const std::string raw = read_file(tmp.path / "a.pgm");
  CHECK(raw.substr(0, 2) == "P5");
  CHECK(read_pgm(tmp.path / "a.pgm") == g);
  // comments in the header are allowed
  const std::string with_comment = std::string("P5\n# made by hand\n2 1\n255\n") + '\x01' + '\x02';
  const Matrix c = decode_pgm(with_comment);
  CHECK(c.rows() == 1);
  CHECK(c(0, 1) == 2.0);
  CHECK_THROWS_AS(decode_pgm("P2\n1 1\n255\n0"), FormatError);
  CHECK_THROWS_AS(decode_pgm("P5\n2 2\n255\nab"), FormatError);
  CHECK_THROWS_AS(decode_pgm("P5\n1 1\n65535\nab"), FormatError);

  Matrix v(1, 3);
  v << -1.0, 0.0, 1.0;
  const Matrix s = scale_to_gray(v);
  CHECK(s(0, 0) == 0.0);
  CHECK(s(0, 1) == 128.0);
  CHECK(s(0, 2) == 255.0);
  CHECK(scale_to_gray(Matrix::Constant(2, 2, 3.0)).cwiseAbs().maxCoeff() == 0.0);
  Matrix mk(1, 2);
  mk << 1.0, 0.0;
  const Matrix mg = mask_to_gray(mk);
  CHECK(mg(0, 0) == 0.0);
  CHECK(mg(0, 1) == 255.0);
}

TEST_CASE("slice extraction") {
  Rng rng(2);
  const Tensor t = testutil::random_tensor({3, 4, 5}, rng);
  const Matrix a = extract_slice(t, ":,:,3");
  CHECK(a.rows() == 3);
  CHECK(a.cols() == 4);
  CHECK(a(2, 1) == t.at({2, 1, 3}));
  const Matrix b = extract_slice(t, "1,:,:");
  CHECK(b.rows() == 4);
  CHECK(b(3, 4) == t.at({1, 3, 4}));
  CHECK_THROWS_AS(extract_slice(t, ":,:,5"), FormatError);
  CHECK_THROWS_AS(extract_slice(t, ":,1,2"), FormatError);
  CHECK_THROWS_AS(extract_slice(t, ":,:"), FormatError);
  CHECK(extract_slice(Tensor::from_matrix(a), ":,:") == a);
}

TEST_CASE("CSV and number formatting") {
  TempDir tmp;
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1e300) == "1e+300");
  CHECK(format_double(std::nan("")) == "NA");
  Rng rng(3);
  const Matrix m = testutil::random_matrix(4, 3, rng);
  write_csv_matrix(tmp.path / "m.csv", m);
  CHECK(read_csv_matrix(tmp.path / "m.csv") == m);
  write_file(tmp.path / "r.csv", "1,2\n3\n");
  CHECK(error_of([&] { read_csv_matrix(tmp.path / "r.csv"); }).find("r.csv:2") != std::string::npos);
  write_file(tmp.path / "e.csv", "1,abc\n");
  CHECK_THROWS_AS(read_csv_matrix(tmp.path / "e.csv"), FormatError);
  write_file(tmp.path / "z.csv", "\n");
  CHECK_THROWS_AS(read_csv_matrix(tmp.path / "z.csv"), FormatError);
}

TEST_CASE("key-value parsing") {
  const std::vector<std::string> keys{"a", "b"};
  const auto kv = parse_key_values("# header\na = 1\n\nb=two words # trailing\n", keys, "cfg");
  REQUIRE(kv.size() == 2);
  CHECK(kv[1].value == "two words");
  CHECK(kv[1].line == 4);
  CHECK(error_of([&] { parse_key_values("a = 1\nc = 2\n", keys, "cfg"); }).find("cfg:2") != std::string::npos);
  CHECK(error_of([&] { parse_key_values("a = 1\na = 2\n", keys, "cfg"); }).find("duplicate") != std::string::npos);
  CHECK(error_of([&] { parse_key_values("a.x = 1\n", keys, "cfg"); }).find("nested") != std::string::npos);
  CHECK_THROWS_AS(parse_key_values("just text\n", keys, "cfg"), FormatError);

  CHECK(parse_dims("20,30,40") == Dims{20, 30, 40});
  CHECK(parse_dims("64x64") == Dims{64, 64});
  CHECK(parse_dims("2 3") == Dims{2, 3});
  CHECK(parse_dims(" 2, 3 ") == Dims{2, 3});
  CHECK_THROWS_AS(parse_dims("2,,3"), FormatError);
  CHECK_THROWS_AS(parse_dims(""), FormatError);
  CHECK(format_dims({2, 3, 4}) == "2,3,4");
}

TEST_CASE("scenario files") {
  const ScenarioConfig c = parse_scenario(
      "design = tucker\ndims = 4,5,6\nu = 1,2,3\np = 2\nn = 30\nsnr = 0.5\nreps = 3\nseed = 9\n"
      "estimators = ols, env-onestep\ntol = 1e-7\n");
  CHECK(c.dims == Dims{4, 5, 6});
  CHECK(c.u == Dims{1, 2, 3});
  CHECK(c.snr == 0.5);
  CHECK(c.fit.tol == 1e-7);
  CHECK(c.estimators == std::vector<Estimator>{Estimator::ols, Estimator::onestep});

  const ScenarioConfig s = parse_scenario("design = shape\nshape = cross\nsize = 32\nu = 2,2\n");
  CHECK(s.dims == Dims{32, 32});
  CHECK(s.p == 1);

  const std::string err = error_of([] { parse_scenario("dims = 4,5\n\nbogus = 1\n", {}, "scn"); });
  CHECK(err.find("scn:3") != std::string::npos);
  CHECK(err.find("bogus") != std::string::npos);
  CHECK(error_of([] { parse_scenario("snr = abc\n", {}, "scn"); }).find("scn:1") != std::string::npos);
  CHECK_THROWS_AS(parse_scenario("dims = 4,5\nu = 5,6\n"), FormatError);
  CHECK_THROWS_AS(parse_scenario("design = shape\nshape = square\n"), FormatError);
  CHECK_THROWS_AS(parse_scenario("center = maybe\n"), FormatError);
}

TEST_CASE("datasets and manifests round trip") {
  TempDir tmp;
  Rng rng(4);
  const Matrix x = testutil::random_matrix(2, 7, rng);
  const Tensor y = testutil::random_tensor({3, 4, 7}, rng);
  const Tensor truth = testutil::random_tensor({3, 4, 2}, rng);
  save_dataset(tmp.path / "d", Dataset(x, y), truth);
  const Manifest m = read_manifest(tmp.path / "d" / "manifest.txt");
  CHECK(m.n == 7);
  CHECK(m.p == 2);
  CHECK(m.dims == Dims{3, 4});
  CHECK(m.x_path.is_absolute() == (tmp.path / "d").is_absolute());
  const LoadedData ld = load_dataset(m);
  CHECK(ld.data.x == x);
  CHECK(ld.data.y == y);
  CHECK(*ld.truth == truth);

  Manifest wrong = m;
  wrong.dims = {4, 3};
  CHECK_THROWS_AS(load_dataset(wrong), FormatError);
  wrong = m;
  wrong.n = 6;
  CHECK_THROWS_AS(load_dataset(wrong), FormatError);

  write_file(tmp.path / "d" / "g.txt", "a\nb\na\nb\na\nb\na\n");
  write_file(tmp.path / "d" / "m2.txt", "x = x.csv\ny = y.tenv\nn = 7\np = 2\ndims = 3,4\ngroups = g.txt\n");
  const LoadedData lg = load_dataset(read_manifest(tmp.path / "d" / "m2.txt"));
  CHECK(lg.groups.size() == 7);
  CHECK(!lg.truth);
  write_file(tmp.path / "d" / "m3.txt", "x = x.csv\nn = 7\n");
  CHECK_THROWS_AS(read_manifest(tmp.path / "d" / "m3.txt"), FormatError);
}
