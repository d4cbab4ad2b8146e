#include <doctest.h>

#include <cmath>

#include "invmahal/image.hpp"

using namespace invmahal;

namespace {

RasterImage bar(std::size_t side, std::size_t col) {
  auto img = RasterImage::blank(side, side);
  std::vector<double> px(img.pixels().begin(), img.pixels().end());
  for (std::size_t y = 2; y + 2 < side; ++y) px[y * side + col] = 1.0;
  return RasterImage(side, side, px);
}

RasterImage blob(std::size_t side) {
  std::vector<double> px(side * side, 0.0);
  const double c = (double(side) - 1) / 2;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double r2 = (x - c) * (x - c) + (y - c) * (y - c) * 0.3;
      px[y * side + x] = std::exp(-r2 / 4.0);
    }
  }
  return RasterImage(side, side, px);
}

}  // namespace

TEST_CASE("raster validation") {
  CHECK_THROWS_AS(RasterImage(2, 2, {0, 0, 0}), Error);
  CHECK_THROWS_AS(RasterImage(1, 1, {1.5}), Error);
  CHECK_THROWS_AS(RasterImage(1, 1, {-0.1}), Error);
  CHECK(RasterImage::blank(3, 2).total_intensity() == 0.0);
}

TEST_CASE("transform parsing") {
  CHECK(parse_transforms("shift:1").size() == 4);
  CHECK(parse_transforms("shift8:2").size() == 8);
  CHECK(parse_transforms("shift:1:-2")[0] == Transform::shift(1, -2));
  const auto r = parse_transforms("rotate:5; shift:1");
  CHECK(r.size() == 6);
  CHECK(r[0] == Transform::rotate(5));
  CHECK(r[1] == Transform::rotate(-5));
  CHECK(parse_transforms("").empty());
  CHECK_THROWS_AS(parse_transforms("zoom:2"), Error);
  CHECK_THROWS_AS(parse_transforms("shift:x"), Error);
  CHECK_THROWS_AS(parse_transforms("shift:0"), Error);
  for (const auto& t : parse_transforms("shift8:1 rotate:2.5")) {
    CHECK(parse_transforms(to_string(t)).front() == t);
  }
}

TEST_CASE("shift moves pixels with zero fill") {
  const auto img = bar(8, 3);
  const auto s = shift(img, 2, 0);
  CHECK(s.at(5, 4) == 1.0);
  CHECK(s.at(3, 4) == 0.0);
  CHECK(s.total_intensity() == img.total_intensity());
  const auto off = shift(bar(8, 7), 1, 0);
  CHECK(off.total_intensity() == 0.0);
  CHECK_THROWS_AS(shift(img, 5, 0), Error);
  CHECK_NOTHROW(shift(img, 4, 0));
}

TEST_CASE("small rotations keep mass and compose toward large angles") {
  const auto img = blob(28);
  CHECK(rotate_small(img, 0.0) == img);
  CHECK_THROWS_AS(rotate_small(img, 15.5), Error);
  // Six 15 degree steps make 90 degrees; mass is conserved within 5%.
  RasterImage r = img;
  for (int i = 0; i < 6; ++i) r = rotate_small(r, 15.0);
  CHECK(std::abs(r.total_intensity() - img.total_intensity()) <= 0.05 * img.total_intensity());
  // The elongated blob's principal axis turns from vertical to horizontal.
  const auto m0 = moments(img);
  const auto m1 = moments(r);
  CHECK(m0.mu02 > m0.mu20);
  CHECK(m1.mu20 > m1.mu02);
}

TEST_CASE("moments of a vertical bar") {
  const auto m = moments(bar(9, 4));
  CHECK(m.cx == doctest::Approx(4.0));
  CHECK(m.cy == doctest::Approx(4.0));
  CHECK(m.mu11 == doctest::Approx(0.0));
  CHECK(m.mu20 == doctest::Approx(0.0));
}

TEST_CASE("deskew straightens a slanted stroke") {
  const std::size_t side = 20;
  std::vector<double> px(side * side, 0.0);
  for (std::size_t y = 3; y < 17; ++y) px[y * side + (4 + (y - 3) / 2)] = 1.0;
  const RasterImage slanted(side, side, px);
  const auto before = moments(slanted);
  const auto after = moments(deskew(slanted));
  CHECK(std::abs(before.mu11) > 1.0);
  CHECK(std::abs(after.mu11) < 0.25 * std::abs(before.mu11));
  CHECK(after.cx == doctest::Approx(9.5).epsilon(0.05));
  CHECK_THROWS_AS(deskew(RasterImage::blank(4, 4)), Error);
}

TEST_CASE("make_tangents applies each transform in order") {
  const auto img = bar(8, 3);
  const auto t = make_tangents(img, parse_transforms("shift:1"));
  REQUIRE(t.size() == 4);
  CHECK(t[0] == shift(img, 1, 0).flatten());
  CHECK(t[3] == shift(img, 0, -1).flatten());
  const auto blank = make_tangents(RasterImage::blank(6, 6), parse_transforms("shift:1 rotate:3"));
  for (const auto& v : blank) {
    for (double p : v.values()) CHECK(p == 0.0);
  }
}
