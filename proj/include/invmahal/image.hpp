#pragma once

// Grayscale raster utilities that generate transformation outputs T_j(x0)
// for invariant metrics, plus moment-based deskewing.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "invmahal/core.hpp"

namespace invmahal {

/// Row-major grayscale image with intensities in [0,1].
class RasterImage {
 public:
  /// Rejects size mismatches and intensities outside [0,1].
  RasterImage(std::size_t width, std::size_t height, std::vector<double> pixels);

  static RasterImage blank(std::size_t width, std::size_t height);
  /// Unflattens a feature vector of length width*height.
  static RasterImage from_features(std::span<const double> values, std::size_t width,
                                   std::size_t height);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  double at(std::size_t x, std::size_t y) const { return pixels_[y * width_ + x]; }
  std::span<const double> pixels() const noexcept { return pixels_; }
  double total_intensity() const;

  FeatureVector flatten() const { return FeatureVector(pixels_); }

  bool operator==(const RasterImage&) const = default;

 private:
  std::size_t width_;
  std::size_t height_;
  std::vector<double> pixels_;
};

struct Transform {
  enum class Kind { Shift, Rotate };
  Kind kind = Kind::Shift;
  int dx = 0;
  int dy = 0;
  double degrees = 0.0;

  static Transform shift(int dx, int dy) { return {Kind::Shift, dx, dy, 0.0}; }
  static Transform rotate(double degrees) { return {Kind::Rotate, 0, 0, degrees}; }
  bool operator==(const Transform&) const = default;
};

std::string to_string(const Transform& t);

/// Parses a whitespace- or ';'-separated list:
///   shift:N        the four shifts (+-N,0), (0,+-N)
///   shift8:N       the eight neighbours at distance N
///   shift:DX:DY    one shift
///   rotate:DEG     rotations by +DEG and -DEG
/// Throws InvalidArgument.
std::vector<Transform> parse_transforms(std::string_view spec);

/// Integer translation, zero fill. Throws ShiftTooLarge when |dx| or |dy|
/// exceeds min(width, height) / 2.
RasterImage shift(const RasterImage& img, int dx, int dy);

/// Rotation about the image center with bilinear sampling and zero fill.
/// Throws AngleTooLarge for |degrees| > 15.
RasterImage rotate_small(const RasterImage& img, double degrees);

struct ImageMoments {
  double mass = 0.0;
  double cx = 0.0, cy = 0.0;               // intensity centroid
  double mu20 = 0.0, mu02 = 0.0, mu11 = 0.0;  // central second moments
};

ImageMoments moments(const RasterImage& img);

/// Shears rows by mu11/mu02 about the centroid (bilinear) and moves the
/// centroid to the image center. Throws BlankImage.
RasterImage deskew(const RasterImage& img);

RasterImage apply(const RasterImage& img, const Transform& t);

/// Flattened T_j(img) per descriptor, in order.
std::vector<FeatureVector> make_tangents(const RasterImage& img, std::span<const Transform> spec);

}  // namespace invmahal
