#include "invmahal/data_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace invmahal {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t be32(std::span<const unsigned char> b, std::size_t at) {
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) |
         (std::uint32_t(b[at + 2]) << 8) | std::uint32_t(b[at + 3]);
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xffu));
}

std::span<const unsigned char> as_bytes(const std::string& s) {
  return {reinterpret_cast<const unsigned char*>(s.data()), s.size()};
}

void check_magic(std::span<const unsigned char> bytes, std::uint32_t want, std::size_t header) {
  if (bytes.size() < 4) throw Error(ErrorCode::TruncatedFile, "IDX header truncated");
  const std::uint32_t magic = be32(bytes, 0);
  if (magic != want) {
    std::ostringstream msg;
    msg << "IDX magic 0x" << std::hex << magic << ", expected 0x" << want;
    throw Error(ErrorCode::BadMagic, msg.str());
  }
  if (bytes.size() < header) throw Error(ErrorCode::TruncatedFile, "IDX header truncated");
}

void check_payload(std::size_t have, std::size_t want) {
  if (have < want) {
    throw Error(ErrorCode::TruncatedFile, "IDX payload holds " + std::to_string(have) +
                                              " bytes, header declares " + std::to_string(want));
  }
  if (have > want) throw Error(ErrorCode::ParseError, "trailing bytes after IDX payload");
}

}  // namespace

RasterImage LabeledSet::image(std::size_t i) const {
  if (!has_image_shape()) throw Error(ErrorCode::InvalidArgument, "dataset has no image shape");
  return RasterImage::from_features(features.row(i), image_width, image_height);
}

LabeledSet LabeledSet::subset(std::span<const std::size_t> indices) const {
  LabeledSet out;
  out.features = RowMatrix(0, dimension());
  out.label_names = label_names;
  out.image_width = image_width;
  out.image_height = image_height;
  for (std::size_t i : indices) {
    out.features.append_row(features.row(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::vector<RasterImage> parse_idx_images(std::span<const unsigned char> bytes) {
  check_magic(bytes, kImageMagic, 16);
  const std::size_t count = be32(bytes, 4);
  const std::size_t rows = be32(bytes, 8);
  const std::size_t cols = be32(bytes, 12);
  if (count > 0 && (rows == 0 || cols == 0)) {
    throw Error(ErrorCode::ParseError, "IDX image dimensions must be positive");
  }
  const std::size_t per = rows * cols;
  check_payload(bytes.size() - 16, count * per);
  std::vector<RasterImage> images;
  images.reserve(count);
  std::vector<double> px(per);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t base = 16 + n * per;
    for (std::size_t i = 0; i < per; ++i) px[i] = double(bytes[base + i]) / 255.0;
    images.emplace_back(cols, rows, px);
  }
  return images;
}

std::vector<RasterImage> read_idx_images(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  return parse_idx_images(as_bytes(raw));
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const unsigned char> bytes) {
  check_magic(bytes, kLabelMagic, 8);
  const std::size_t count = be32(bytes, 4);
  check_payload(bytes.size() - 8, count);
  return {bytes.begin() + 8, bytes.end()};
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  return parse_idx_labels(as_bytes(raw));
}

void write_idx_images(const std::filesystem::path& path, std::span<const RasterImage> images) {
  std::string out;
  put_be32(out, kImageMagic);
  put_be32(out, std::uint32_t(images.size()));
  put_be32(out, std::uint32_t(images.empty() ? 0 : images.front().height()));
  put_be32(out, std::uint32_t(images.empty() ? 0 : images.front().width()));
  for (const auto& img : images) {
    if (img.width() != images.front().width() || img.height() != images.front().height()) {
      throw Error(ErrorCode::DimensionMismatch, "IDX images must share one shape");
    }
    for (double p : img.pixels()) out.push_back(static_cast<char>(std::lround(p * 255.0)));
  }
  write_file(path, out);
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::string out;
  put_be32(out, kLabelMagic);
  put_be32(out, std::uint32_t(labels.size()));
  out.append(labels.begin(), labels.end());
  write_file(path, out);
}

LabeledSet from_idx(std::span<const RasterImage> images, std::span<const std::uint8_t> labels) {
  if (images.size() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "image and label counts differ");
  }
  LabeledSet set;
  if (images.empty()) return set;
  set.image_width = images.front().width();
  set.image_height = images.front().height();
  set.features = RowMatrix(0, set.image_width * set.image_height);
  std::map<std::uint8_t, int> ids;
  for (auto l : labels) ids.emplace(l, 0);
  for (auto& [byte, id] : ids) {
    id = int(set.label_names.size());
    set.label_names.push_back(std::to_string(byte));
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].width() != set.image_width || images[i].height() != set.image_height) {
      throw Error(ErrorCode::DimensionMismatch, "images must share one shape");
    }
    set.features.append_row(images[i].pixels());
    set.labels.push_back(ids.at(labels[i]));
  }
  return set;
}

LabeledSet parse_feature_table(std::string_view text) {
  LabeledSet set;
  std::map<std::string, int, std::less<>> ids;
  std::size_t line_no = 0;
  std::size_t width = 0;
  std::vector<double> row;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    const auto comma = line.find(',');
    if (comma == std::string_view::npos || comma == 0) {
      throw Error(ErrorCode::ParseError, "expected 'label,values...'", line_no);
    }
    const std::string label(line.substr(0, comma));
    row.clear();
    std::size_t p = comma + 1;
    for (;;) {
      auto c = line.find(',', p);
      std::string_view cell = line.substr(p, c == std::string_view::npos ? c : c - p);
      while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
      while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw Error(ErrorCode::ParseError, "bad number '" + std::string(cell) + "'", line_no);
      }
      if (!std::isfinite(v)) throw Error(ErrorCode::ParseError, "non-finite value", line_no);
      row.push_back(v);
      if (c == std::string_view::npos) break;
      p = c + 1;
    }
    if (width == 0) {
      width = row.size();
      set.features = RowMatrix(0, width);
    } else if (row.size() != width) {
      throw Error(ErrorCode::ParseError,
                  "row has " + std::to_string(row.size()) + " values, expected " +
                      std::to_string(width),
                  line_no);
    }
    auto [it, fresh] = ids.emplace(label, int(set.label_names.size()));
    if (fresh) set.label_names.push_back(label);
    set.labels.push_back(it->second);
    set.features.append_row(row);
  }
  return set;
}

LabeledSet read_feature_table(const std::filesystem::path& path) {
  return parse_feature_table(read_file(path));
}

std::string format_feature_table(const LabeledSet& set) {
  std::string out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    out += set.label_names.at(set.labels[i]);
    for (double v : set.features.row(i)) {
      out += ',';
      out += format_exact(v);
    }
    out += '\n';
  }
  return out;
}

void write_feature_table(const std::filesystem::path& path, const LabeledSet& set) {
  write_file(path, format_feature_table(set));
}

LabeledSet make_blobs(std::size_t classes, std::size_t per_class, std::size_t dimension,
                      double sigma, std::uint64_t seed) {
  if (classes == 0 || per_class == 0 || dimension == 0) {
    throw Error(ErrorCode::InvalidArgument, "blob counts must be >= 1");
  }
  if (!(sigma >= 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  RowMatrix centers(classes, dimension);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm = 0.0;
    while (norm == 0.0) {
      for (auto& v : centers.row(c)) v = gauss(rng);
      for (double v : centers.row(c)) norm += v * v;
    }
    const double scale = 5.0 / std::sqrt(norm);
    for (auto& v : centers.row(c)) v *= scale;
  }
  LabeledSet set;
  set.features = RowMatrix(0, dimension);
  for (std::size_t c = 0; c < classes; ++c) set.label_names.push_back(std::to_string(c));
  std::vector<double> point(dimension);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < per_class; ++k) {
      for (std::size_t j = 0; j < dimension; ++j) {
        point[j] = centers(c, j) + (sigma > 0.0 ? sigma * gauss(rng) : 0.0);
      }
      set.features.append_row(point);
      set.labels.push_back(int(c));
    }
  }
  return set;
}

}  // namespace invmahal
