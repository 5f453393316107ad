#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "seg2eye/core.hpp"
#include "seg2eye/rng.hpp"

using namespace seg2eye;

TEST_CASE("pixel conversion round trip") {
  for (int p = 0; p <= 255; ++p) {
    double x = pixel_to_internal(static_cast<std::uint8_t>(p));
    CHECK(x >= -1.0);
    CHECK(x <= 1.0);
    CHECK(pixel_to_disk(x) == p);
  }
  CHECK(pixel_to_internal(0) == doctest::Approx(-1.0));
  CHECK(pixel_to_internal(255) == doctest::Approx(1.0));
  CHECK(pixel_to_disk(-1.0) == 0);
  CHECK(pixel_to_disk(1.0) == 255);
  CHECK(pixel_to_disk(-5.0) == 0);
  CHECK(pixel_to_disk(5.0) == 255);
}

TEST_CASE("pixel_to_disk rounds half away from floor") {
  // internal value exactly between 127 and 128 on the 8-bit grid
  double x = pixel_to_internal(127) + 1.0 / 255.0;
  CHECK(pixel_to_disk(x) == 128);
}

TEST_CASE("one_hot places exactly one 1 per pixel") {
  SegMask m(2, 3);
  m.at(0, 0) = 0;
  m.at(0, 1) = 1;
  m.at(0, 2) = 2;
  m.at(1, 0) = 3;
  m.at(1, 1) = 1;
  m.at(1, 2) = 0;
  auto t = one_hot<double>(m, kNumClasses);
  REQUIRE(t.shape == std::vector<int>{1, 4, 2, 3});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) {
      double sum = 0;
      for (int c = 0; c < 4; ++c) sum += t.at(0, c, y, x);
      CHECK(sum == 1.0);
      CHECK(t.at(0, m.at(y, x), y, x) == 1.0);
    }
}

TEST_CASE("one_hot rejects out-of-range class") {
  SegMask m(1, 1);
  m.at(0, 0) = 4;
  CHECK_THROWS_AS(one_hot<double>(m, kNumClasses), std::out_of_range);
}

TEST_CASE("argmax_mask inverts one_hot") {
  Rng rng(7);
  SegMask m(8, 8);
  for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));
  auto t = one_hot<double>(m, kNumClasses);
  CHECK(argmax_mask(t) == m);
}

TEST_CASE("downsample_mask uses top-left rule") {
  SegMask m(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) m.at(y, x) = static_cast<std::uint8_t>((y * 4 + x) % 4);
  auto d = downsample_mask(m, 2);
  REQUIRE(d.height == 2);
  REQUIRE(d.width == 2);
  CHECK(d.at(0, 0) == m.at(0, 0));
  CHECK(d.at(0, 1) == m.at(0, 2));
  CHECK(d.at(1, 0) == m.at(2, 0));
  CHECK(d.at(1, 1) == m.at(2, 2));
  CHECK_THROWS_AS(downsample_mask(m, 3), std::invalid_argument);
}

TEST_CASE("to_disk/to_internal round trip") {
  Rng rng(11);
  std::vector<std::uint8_t> pix(64);
  for (auto& p : pix) p = static_cast<std::uint8_t>(rng.uniform_int(256));
  GrayImage img = to_internal(pix, 8, 8);
  CHECK(to_disk(img) == pix);
}

TEST_CASE("rng streams are deterministic and independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng::derive(1, 2, 3) == Rng::derive(1, 2, 3));
  CHECK(Rng::derive(1, 2, 3) != Rng::derive(1, 2, 4));
  CHECK(Rng::derive(1, 2, 3) != Rng::derive(1, 3, 2));
}

TEST_CASE("rng normal has plausible moments") {
  Rng rng(5);
  double sum = 0, sum2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}

TEST_CASE("tensor_from_images matches layout") {
  GrayImage a(2, 2), b(2, 2);
  a.at(0, 1) = 0.5;
  b.at(1, 0) = -0.25;
  auto t = tensor_from_images<float>({a, b});
  REQUIRE(t.shape == std::vector<int>{2, 1, 2, 2});
  CHECK(t.at(0, 0, 0, 1) == doctest::Approx(0.5));
  CHECK(t.at(1, 0, 1, 0) == doctest::Approx(-0.25));
}
