#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "sitsfuse/error.hpp"
#include "sitsfuse/kernels.hpp"
#include "sitsfuse/reference_kernels.hpp"
#include "sitsfuse/tns.hpp"

using namespace sitsfuse;
using testutil::random_tensor;

TEST_CASE("tensor reshape keeps element count") {
  Tensor t({2, 3}, 1.5);
  t.reshape({3, 2});
  CHECK(t.shape() == Shape{3, 2});
  CHECK_THROWS(t.reshape({4, 2}));
  CHECK(numel({2, 3, 4}) == 24);
}

TEST_CASE("tns round trip for every dtype") {
  testutil::TempDir dir("tns");
  const std::vector<float> f{1.f, -2.5f, 3.25f, 0.f, 7.f, 8.f};
  const std::vector<std::int32_t> i{-1, 0, 5, 9};
  const std::vector<double> d{0.1, 0.2, 0.3};
  tns::write(dir.path() / "f.tns", {2, 3}, std::span<const float>(f));
  tns::write(dir.path() / "i.tns", {4}, std::span<const std::int32_t>(i));
  tns::write(dir.path() / "d.tns", {3, 1}, std::span<const double>(d));
  Shape s;
  CHECK(tns::read_f32(dir.path() / "f.tns", s) == f);
  CHECK(s == Shape{2, 3});
  CHECK(tns::read_i32(dir.path() / "i.tns", s) == i);
  const Tensor t = tns::read_f64(dir.path() / "d.tns");
  CHECK(t.shape() == Shape{3, 1});
  CHECK(t.storage() == d);
}

TEST_CASE("tns header layout") {
  testutil::TempDir dir("tnshdr");
  const std::vector<std::int32_t> v{7};
  tns::write(dir.path() / "x.tns", {1}, std::span<const std::int32_t>(v));
  std::ifstream in(dir.path() / "x.tns", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 8 + 4 + 4 + 1 + 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "TNSR0001");
  CHECK(bytes[8] == 1);
  CHECK(bytes[12] == 1);
  CHECK(bytes[16] == 1);
  CHECK(bytes[17] == 7);
}

TEST_CASE("tns rejects bad magic and truncation") {
  testutil::TempDir dir("tnsbad");
  {
    std::ofstream out(dir.path() / "bad.tns", std::ios::binary);
    out << "NOTATENSOR";
  }
  CHECK_THROWS_AS(tns::read(dir.path() / "bad.tns"), FormatError);
  const std::vector<float> f(12, 1.f);
  tns::write(dir.path() / "t.tns", {3, 4}, std::span<const float>(f));
  std::filesystem::resize_file(dir.path() / "t.tns", 30);
  CHECK_THROWS_AS(tns::read(dir.path() / "t.tns"), FormatError);
  CHECK_THROWS(tns::write(dir.path() / "w.tns", {5}, std::span<const float>(f)));
}

TEST_CASE("named rng streams are independent of each other") {
  Rng a = make_stream(1, "x", 0), b = make_stream(1, "x", 0), c = make_stream(1, "x", 1), d = make_stream(1, "y", 0);
  const auto va = a(), vb = b(), vc = c(), vd = d();
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(va != vd);
  Rng u = make_stream(5, "u");
  for (int i = 0; i < 1000; ++i) {
    const double x = uniform01(u);
    CHECK((x >= 0.0 && x < 1.0));
  }
}

namespace {
double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}
}  // namespace

TEST_CASE("parallel kernels match the serial reference") {
  const std::size_t n = 17, k = 23, m = 11;
  const Tensor a = random_tensor({n, k}, 1), b = random_tensor({k, m}, 2), bt = random_tensor({m, k}, 3),
               at = random_tensor({n, m}, 4);
  std::vector<double> c1(n * m, 0.5), c2(n * m, 0.5);
  kernels::matmul(a.data(), b.data(), c1.data(), n, k, m, true);
  reference::matmul(a.data(), b.data(), c2.data(), n, k, m, true);
  CHECK(max_diff(c1, c2) < 1e-12);
  kernels::matmul_nt(a.data(), bt.data(), c1.data(), n, k, m, false);
  reference::matmul_nt(a.data(), bt.data(), c2.data(), n, k, m, false);
  CHECK(max_diff(c1, c2) < 1e-12);
  std::vector<double> d1(k * m), d2(k * m);
  kernels::matmul_tn(a.data(), at.data(), d1.data(), n, k, m, false);
  reference::matmul_tn(a.data(), at.data(), d2.data(), n, k, m, false);
  CHECK(max_diff(d1, d2) < 1e-12);

  const kernels::ConvGeometry g{2, 3, 9, 7, 4, 3, 2, 1};
  const Tensor x = random_tensor({2, 3, 9, 7}, 5), w = random_tensor({4, 3, 3, 3}, 6), bias = random_tensor({4}, 7);
  std::vector<double> y1(2 * 4 * g.out_height() * g.out_width()), y2(y1.size());
  kernels::conv2d_forward(g, x.data(), w.data(), bias.data(), y1.data());
  reference::conv2d_forward(g, x.data(), w.data(), bias.data(), y2.data());
  CHECK(max_diff(y1, y2) < 1e-12);
  const Tensor dy = random_tensor({2, 4, g.out_height(), g.out_width()}, 8);
  std::vector<double> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size()), db1(4), db2(4);
  kernels::conv2d_backward(g, x.data(), w.data(), dy.data(), dx1.data(), dw1.data(), db1.data());
  reference::conv2d_backward(g, x.data(), w.data(), dy.data(), dx2.data(), dw2.data(), db2.data());
  CHECK(max_diff(dx1, dx2) < 1e-12);
  CHECK(max_diff(dw1, dw2) < 1e-12);
  CHECK(max_diff(db1, db2) < 1e-12);

  const Tensor s = random_tensor({5, 6, 4}, 9);
  std::vector<double> p1(5 * 8), p2(5 * 8);
  kernels::set_mean_std_forward(5, 6, 4, s.data(), p1.data());
  reference::set_mean_std_forward(5, 6, 4, s.data(), p2.data());
  CHECK(max_diff(p1, p2) < 1e-12);
}

TEST_CASE("transposed convolution matches the reference") {
  const Tensor x = random_tensor({2, 3, 4, 5}, 11), w = random_tensor({3, 2, 2, 2}, 12), b = random_tensor({2}, 13);
  std::vector<double> y1(2 * 2 * 8 * 10), y2(y1.size());
  kernels::conv_transpose2x2_forward(2, 3, 4, 5, 2, x.data(), w.data(), b.data(), y1.data());
  reference::conv_transpose2x2_forward(2, 3, 4, 5, 2, x.data(), w.data(), b.data(), y2.data());
  CHECK(max_diff(y1, y2) < 1e-12);
}
