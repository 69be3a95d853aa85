#include <doctest.h>

#include "cmirror/errors.hpp"
#include "cmirror/io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace cmirror;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cmirror_test_imgio";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string f32le(float v) {
  const auto b = std::bit_cast<std::uint32_t>(v);
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((b >> (8 * i)) & 0xff);
  return s;
}

std::string f32be(float v) {
  std::string s = f32le(v);
  return {s.rbegin(), s.rend()};
}

Image random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  Image img(h, w);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(u(rng));
  return img;
}

// Header = everything up to and including the third newline.
std::string payload_of(const std::string& file) {
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) pos = file.find('\n', pos) + 1;
  return file.substr(pos);
}

} // namespace

TEST_CASE("pfm decode flips bottom-up rows") {
  // rows stored bottom-up: last image row first
  std::string file = "Pf\n2 2\n-1.0\n" + f32le(2) + f32le(3) + f32le(0) + f32le(1);
  std::istringstream in(file);
  const Image img = read_pfm(in);
  REQUIRE(img.rows() == 2);
  REQUIRE(img.cols() == 2);
  CHECK(img(0, 0) == 0.0);
  CHECK(img(0, 1) == 1.0);
  CHECK(img(1, 0) == 2.0);
  CHECK(img(1, 1) == 3.0);
}

TEST_CASE("pfm big-endian scale is honoured") {
  std::string file = "Pf\n2 1\n1.0\n" + f32be(0.25f) + f32be(-4.0f);
  std::istringstream in(file);
  const Image img = read_pfm(in);
  CHECK(img(0, 0) == 0.25);
  CHECK(img(0, 1) == -4.0);
}

TEST_CASE("pfm round trip is byte-identical") {
  std::mt19937_64 rng(1);
  const Image img = random_image(7, 5, rng);
  const auto a = scratch("a.pfm"), b = scratch("b.pfm");
  write_pfm(img, a);
  write_pfm(read_pfm(a), b);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("pfm truncated payload names the shortfall") {
  std::string file = "Pf\n2 2\n-1.0\n" + f32le(0) + f32le(1) + f32le(2);
  std::istringstream in(file);
  try {
    read_pfm(in);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("payload short by 4 bytes") != std::string::npos);
  }
}

TEST_CASE("pfm color files are rejected distinctly") {
  std::string file = "PF\n1 1\n-1.0\n" + f32le(0) + f32le(0) + f32le(0);
  std::istringstream in(file);
  try {
    read_pfm(in);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("color") != std::string::npos);
  }
  std::istringstream junk("P5\n1 1\n255\n");
  CHECK_THROWS_AS(read_pfm(junk), InputError);
  std::istringstream bad_dims("Pf\nx 1\n-1.0\n");
  CHECK_THROWS_AS(read_pfm(bad_dims), InputError);
}

TEST_CASE("pfm constant payload and size") {
  const auto p = scratch("half.pfm");
  write_pfm(Image::Constant(3, 4, 0.5), p);
  const std::string payload = payload_of(slurp(p));
  REQUIRE(payload.size() == 3 * 4 * 4);
  for (std::size_t i = 0; i < payload.size(); i += 4) CHECK(payload.substr(i, 4) == f32le(0.5f));

  const auto big = scratch("big.pfm");
  write_pfm(Image::Zero(512, 640), big);
  CHECK(payload_of(slurp(big)).size() == 512u * 640u * 4u);
}

TEST_CASE("pfm refuses non-finite pixels") {
  Image img = Image::Zero(2, 2);
  img(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(write_pfm(img, scratch("nan.pfm")), InputError);
  img(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(write_pfm(img, scratch("inf.pfm")), InputError);
}

TEST_CASE("pfm random round trips are bit-exact") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const int h = 1 + static_cast<int>(rng() % 17), w = 1 + static_cast<int>(rng() % 17);
    const Image img = random_image(h, w, rng);
    const auto p = scratch("rt.pfm");
    write_pfm(img, p);
    const Image back = read_pfm(p);
    REQUIRE(back.rows() == h);
    REQUIRE(back.cols() == w);
    CHECK((back == img).all());
  }
}

TEST_CASE("missing pfm names the path") {
  try {
    read_pfm(scratch("does_not_exist.pfm"));
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("does_not_exist.pfm") != std::string::npos);
  }
}

namespace {

SeidelConvModel random_model(int h, int w, int K, int Q, int N, int ds, std::mt19937_64& rng) {
  SeidelConvModel m(h, w, K, Q, N, ds);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < N; ++k)
    for (int q = 0; q < Q; ++q) {
      auto& c = m.component(k, q);
      // parameters are stored as f32
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) c.warp.R(i, j) = static_cast<float>((i == j ? 1.0 : 0.0) + 0.05 * n(rng));
      for (int i = 0; i < 2; ++i) c.warp.t(i) = static_cast<float>(n(rng));
      for (Eigen::Index i = 0; i < c.kernel.size(); ++i) c.kernel.data()[i] = static_cast<float>(n(rng));
      for (Eigen::Index i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = static_cast<float>(n(rng));
    }
  return m;
}

} // namespace

TEST_CASE("default model round trips") {
  const SeidelConvModel m(4, 5, 3, 1, 1);
  const auto p = scratch("m1.scnv");
  save_model(m, p);
  CHECK(load_model(p) == m);
}

TEST_CASE("random models round trip bit-exactly") {
  std::mt19937_64 rng(3);
  for (int ds : {1, 3}) {
    const SeidelConvModel m = random_model(9, 11, 5, 3, 2, ds, rng);
    const auto p = scratch("m2.scnv");
    save_model(m, p);
    CHECK(load_model(p) == m);
  }
}

TEST_CASE("model file size follows the layout") {
  const SeidelConvModel m(512, 640, 11, 31, 3);
  const auto p = scratch("big.scnv");
  save_model(m, p);
  CHECK(fs::file_size(p) == 16u + 3u * 31u * (6u + 121u + 512u * 640u) * 4u);
  fs::remove(p);
}

TEST_CASE("model header errors") {
  const auto p = scratch("m3.scnv");
  save_model(SeidelConvModel(4, 4, 3, 2, 1), p);
  std::string bytes = slurp(p);

  std::string bad = bytes;
  bad[0] = 'X';
  std::ofstream(scratch("magic.scnv"), std::ios::binary) << bad;
  CHECK_THROWS_AS(load_model(scratch("magic.scnv")), InputError);

  bad = bytes;
  bad[4] = 9;
  std::ofstream(scratch("version.scnv"), std::ios::binary) << bad;
  CHECK_THROWS_AS(load_model(scratch("version.scnv")), InputError);

  // header claims a larger frame than the payload holds
  bad = bytes;
  bad[14] = 5;
  std::ofstream(scratch("dims.scnv"), std::ios::binary) << bad;
  CHECK_THROWS_AS(load_model(scratch("dims.scnv")), InputError);

  std::ofstream(scratch("short.scnv"), std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  CHECK_THROWS_AS(load_model(scratch("short.scnv")), InputError);
}

TEST_CASE("focal stack directories round trip") {
  std::mt19937_64 rng(4);
  FocalStack s;
  s.z0 = -100;
  s.dz = 50;
  s.corrected = true;
  for (int k = 0; k < 3; ++k) s.slices.push_back(random_image(6, 8, rng));
  const auto dir = scratch("stack");
  write_stack(s, dir);
  const FocalStack back = read_stack(dir);
  CHECK(back.size() == 3);
  CHECK(back.z0 == -100);
  CHECK(back.dz == 50);
  CHECK(back.corrected);
  for (int k = 0; k < 3; ++k) CHECK((back.slices[k] == s.slices[k]).all());
}
