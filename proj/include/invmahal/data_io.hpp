#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "invmahal/core.hpp"
#include "invmahal/image.hpp"

namespace invmahal {

/// Feature rows with interned labels. Label ids are dense, starting at 0;
/// the id order is the class index used for tie-breaking.
struct LabeledSet {
  RowMatrix features;
  std::vector<int> labels;
  std::vector<std::string> label_names;
  std::size_t image_width = 0;   // nonzero when rows are flattened images
  std::size_t image_height = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dimension() const noexcept { return features.cols(); }
  std::size_t class_count() const noexcept { return label_names.size(); }
  bool has_image_shape() const noexcept { return image_width > 0; }

  FeatureVector feature(std::size_t i) const { return FeatureVector(features.row(i)); }
  RasterImage image(std::size_t i) const;

  /// Rows at `indices`, keeping the label dictionary and image shape.
  LabeledSet subset(std::span<const std::size_t> indices) const;
};

/// IDX images (magic 0x00000803), pixels scaled by 1/255.
/// Throws Io, BadMagic, TruncatedFile, ParseError (trailing bytes).
std::vector<RasterImage> read_idx_images(const std::filesystem::path& path);
std::vector<RasterImage> parse_idx_images(std::span<const unsigned char> bytes);

/// IDX labels (magic 0x00000801), one byte each.
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
std::vector<std::uint8_t> parse_idx_labels(std::span<const unsigned char> bytes);

/// Pixels are rounded to the nearest multiple of 1/255.
void write_idx_images(const std::filesystem::path& path, std::span<const RasterImage> images);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Images plus byte labels as a labeled set; label ids follow byte order.
LabeledSet from_idx(std::span<const RasterImage> images, std::span<const std::uint8_t> labels);

/// Comma-separated rows: text label, then a constant number of finite reals.
/// Throws ParseError with the 1-based line number.
LabeledSet read_feature_table(const std::filesystem::path& path);
LabeledSet parse_feature_table(std::string_view text);
std::string format_feature_table(const LabeledSet& set);
void write_feature_table(const std::filesystem::path& path, const LabeledSet& set);

/// Class centers drawn uniformly on the radius-5 sphere, points = center +
/// N(0, sigma^2 I). Deterministic in `seed`.
LabeledSet make_blobs(std::size_t classes, std::size_t per_class, std::size_t dimension,
                      double sigma, std::uint64_t seed);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace invmahal
