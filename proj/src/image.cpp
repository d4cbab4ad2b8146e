#include "invmahal/image.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

namespace invmahal {

namespace {

constexpr double kMaxRotation = 15.0;

double pixel_or_zero(const RasterImage& img, long x, long y) {
  if (x < 0 || y < 0 || x >= long(img.width()) || y >= long(img.height())) return 0.0;
  return img.at(std::size_t(x), std::size_t(y));
}

double bilinear(const RasterImage& img, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const double tx = x - fx;
  const double ty = y - fy;
  const long x0 = long(fx);
  const long y0 = long(fy);
  return (1 - tx) * (1 - ty) * pixel_or_zero(img, x0, y0) +
         tx * (1 - ty) * pixel_or_zero(img, x0 + 1, y0) +
         (1 - tx) * ty * pixel_or_zero(img, x0, y0 + 1) +
         tx * ty * pixel_or_zero(img, x0 + 1, y0 + 1);
}

template <class Map>
RasterImage resample(const RasterImage& img, Map&& source_of) {
  std::vector<double> out(img.width() * img.height());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const auto [sx, sy] = source_of(double(x), double(y));
      out[y * img.width() + x] = std::clamp(bilinear(img, sx, sy), 0.0, 1.0);
    }
  }
  return RasterImage(img.width(), img.height(), std::move(out));
}

int parse_int(std::string_view text, std::string_view item) {
  int v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw Error(ErrorCode::InvalidArgument, "bad integer in transform '" + std::string(item) + "'");
  }
  return v;
}

double parse_real(std::string_view text, std::string_view item) {
  try {
    std::size_t pos = 0;
    const std::string s(text);
    const double v = std::stod(s, &pos);
    if (pos == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidArgument, "bad number in transform '" + std::string(item) + "'");
}

}  // namespace

RasterImage::RasterImage(std::size_t width, std::size_t height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width_ == 0 || height_ == 0 || pixels_.size() != width_ * height_) {
    throw Error(ErrorCode::DimensionMismatch, "pixel count must equal width * height");
  }
  for (double p : pixels_) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "pixel intensity outside [0,1]");
    }
  }
}

RasterImage RasterImage::blank(std::size_t width, std::size_t height) {
  return RasterImage(width, height, std::vector<double>(width * height, 0.0));
}

RasterImage RasterImage::from_features(std::span<const double> values, std::size_t width,
                                       std::size_t height) {
  return RasterImage(width, height, std::vector<double>(values.begin(), values.end()));
}

double RasterImage::total_intensity() const {
  double s = 0.0;
  for (double p : pixels_) s += p;
  return s;
}

std::string to_string(const Transform& t) {
  if (t.kind == Transform::Kind::Shift) {
    return "shift:" + std::to_string(t.dx) + ":" + std::to_string(t.dy);
  }
  return "rotate:" + format_exact(t.degrees);
}

std::vector<Transform> parse_transforms(std::string_view spec) {
  std::vector<Transform> out;
  std::size_t pos = 0;
  while (pos < spec.size()) {
    const auto end = spec.find_first_of(" \t;", pos);
    const std::string_view item = spec.substr(pos, end == std::string_view::npos ? end : end - pos);
    pos = end == std::string_view::npos ? spec.size() : end + 1;
    if (item.empty()) continue;

    std::vector<std::string_view> parts;
    std::size_t p = 0;
    for (;;) {
      const auto c = item.find(':', p);
      parts.push_back(item.substr(p, c == std::string_view::npos ? c : c - p));
      if (c == std::string_view::npos) break;
      p = c + 1;
    }
    if (parts[0] == "shift" && parts.size() == 2) {
      const int n = parse_int(parts[1], item);
      if (n <= 0) throw Error(ErrorCode::InvalidArgument, "shift magnitude must be positive");
      for (auto [dx, dy] : {std::pair{n, 0}, {-n, 0}, {0, n}, {0, -n}}) {
        out.push_back(Transform::shift(dx, dy));
      }
    } else if (parts[0] == "shift" && parts.size() == 3) {
      out.push_back(Transform::shift(parse_int(parts[1], item), parse_int(parts[2], item)));
    } else if (parts[0] == "shift8" && parts.size() == 2) {
      const int n = parse_int(parts[1], item);
      if (n <= 0) throw Error(ErrorCode::InvalidArgument, "shift magnitude must be positive");
      for (int dy = -n; dy <= n; dy += n) {
        for (int dx = -n; dx <= n; dx += n) {
          if (dx != 0 || dy != 0) out.push_back(Transform::shift(dx, dy));
        }
      }
    } else if (parts[0] == "rotate" && parts.size() == 2) {
      const double deg = parse_real(parts[1], item);
      out.push_back(Transform::rotate(deg));
      out.push_back(Transform::rotate(-deg));
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown transform '" + std::string(item) + "'");
    }
  }
  return out;
}

RasterImage shift(const RasterImage& img, int dx, int dy) {
  const double limit = double(std::min(img.width(), img.height())) / 2.0;
  if (std::abs(dx) > limit || std::abs(dy) > limit) {
    throw Error(ErrorCode::ShiftTooLarge, "shift exceeds half the image size");
  }
  std::vector<double> out(img.width() * img.height(), 0.0);
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const long tx = long(x) + dx;
      const long ty = long(y) + dy;
      if (tx < 0 || ty < 0 || tx >= long(img.width()) || ty >= long(img.height())) continue;
      out[std::size_t(ty) * img.width() + std::size_t(tx)] = img.at(x, y);
    }
  }
  return RasterImage(img.width(), img.height(), std::move(out));
}

RasterImage rotate_small(const RasterImage& img, double degrees) {
  if (!(std::abs(degrees) <= kMaxRotation)) {
    throw Error(ErrorCode::AngleTooLarge, "rotation limited to +-15 degrees");
  }
  if (degrees == 0.0) return img;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const double cx = (double(img.width()) - 1.0) / 2.0;
  const double cy = (double(img.height()) - 1.0) / 2.0;
  // Inverse map: each output pixel samples the input rotated by -degrees.
  return resample(img, [&](double x, double y) {
    const double u = x - cx;
    const double v = y - cy;
    return std::pair{cx + c * u + s * v, cy - s * u + c * v};
  });
}

ImageMoments moments(const RasterImage& img) {
  ImageMoments m;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double p = img.at(x, y);
      m.mass += p;
      m.cx += p * double(x);
      m.cy += p * double(y);
    }
  }
  if (m.mass == 0.0) return m;
  m.cx /= m.mass;
  m.cy /= m.mass;
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double p = img.at(x, y);
      const double u = double(x) - m.cx;
      const double v = double(y) - m.cy;
      m.mu20 += p * u * u;
      m.mu02 += p * v * v;
      m.mu11 += p * u * v;
    }
  }
  return m;
}

RasterImage deskew(const RasterImage& img) {
  const ImageMoments m = moments(img);
  if (m.mass == 0.0) throw Error(ErrorCode::BlankImage, "cannot deskew a blank image");
  const double skew = m.mu02 > 0.0 ? m.mu11 / m.mu02 : 0.0;
  const double cx = (double(img.width()) - 1.0) / 2.0;
  const double cy = (double(img.height()) - 1.0) / 2.0;
  return resample(img, [&](double x, double y) {
    return std::pair{x + (m.cx - cx) + skew * (y - cy), y + (m.cy - cy)};
  });
}

RasterImage apply(const RasterImage& img, const Transform& t) {
  return t.kind == Transform::Kind::Shift ? shift(img, t.dx, t.dy) : rotate_small(img, t.degrees);
}

std::vector<FeatureVector> make_tangents(const RasterImage& img, std::span<const Transform> spec) {
  std::vector<FeatureVector> out;
  out.reserve(spec.size());
  for (const auto& t : spec) out.push_back(apply(img, t).flatten());
  return out;
}

}  // namespace invmahal
