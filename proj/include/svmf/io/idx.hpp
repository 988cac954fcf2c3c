// IDX (MNIST) image/label files, raw or gzip-compressed.
//
// Images: magic 0x00000803, then big-endian u32 count, rows, cols, then
// count*rows*cols unsigned bytes. Labels: magic 0x00000801, u32 count, bytes.
#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "svmf/nn/tape.hpp"
#include "svmf/rng.hpp"

namespace svmf::io {

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Whole file contents; gzip streams are inflated, plain files pass through.
inline std::vector<unsigned char> read_file_maybe_gzip(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IdxError("cannot open '" + path + "'");
  std::vector<unsigned char> out;
  std::vector<unsigned char> chunk(1 << 16);
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      int err = 0;
      const std::string msg = gzerror(f, &err);
      gzclose(f);
      throw IdxError("read error in '" + path + "': " + msg);
    }
    if (n == 0) break;
    out.insert(out.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return out;
}

namespace detail {

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset,
                               const std::string& name) {
  if (b.size() < offset + 4)
    throw IdxError(name + ": truncated header, need " + std::to_string(offset + 4) +
                   " bytes, file has " + std::to_string(b.size()));
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

inline std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace detail

struct IdxImages {
  int rows = 0;
  int cols = 0;
  /// [count, rows * cols], intensities scaled to [0, 1].
  nn::Tensor pixels;
};

inline IdxImages parse_idx_images(const std::vector<unsigned char>& bytes, const std::string& name) {
  const std::uint32_t magic = detail::read_be32(bytes, 0, name);
  if (magic != kIdxImagesMagic)
    throw IdxError(name + ": bad magic " + detail::hex32(magic) + " at byte offset 0, expected " +
                   detail::hex32(kIdxImagesMagic));
  const std::uint32_t count = detail::read_be32(bytes, 4, name);
  const std::uint32_t rows = detail::read_be32(bytes, 8, name);
  const std::uint32_t cols = detail::read_be32(bytes, 12, name);
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
    throw IdxError(name + ": implausible image dimensions " + std::to_string(rows) + "x" +
                   std::to_string(cols) + " at byte offset 8");
  const std::uint64_t expected = 16 + std::uint64_t{count} * rows * cols;
  if (bytes.size() != expected)
    throw IdxError(name + ": length mismatch, header implies " + std::to_string(expected) +
                   " bytes, file has " + std::to_string(bytes.size()));
  IdxImages out;
  out.rows = static_cast<int>(rows);
  out.cols = static_cast<int>(cols);
  const std::size_t pixels = std::size_t{rows} * cols;
  out.pixels.resize(count, static_cast<Eigen::Index>(pixels));
  for (std::size_t i = 0; i < count * pixels; ++i) out.pixels.data()[i] = bytes[16 + i] / 255.0;
  return out;
}

inline std::vector<int> parse_idx_labels(const std::vector<unsigned char>& bytes,
                                         const std::string& name) {
  const std::uint32_t magic = detail::read_be32(bytes, 0, name);
  if (magic != kIdxLabelsMagic)
    throw IdxError(name + ": bad magic " + detail::hex32(magic) + " at byte offset 0, expected " +
                   detail::hex32(kIdxLabelsMagic));
  const std::uint32_t count = detail::read_be32(bytes, 4, name);
  const std::uint64_t expected = 8 + std::uint64_t{count};
  if (bytes.size() != expected)
    throw IdxError(name + ": length mismatch, header implies " + std::to_string(expected) +
                   " bytes, file has " + std::to_string(bytes.size()));
  return {bytes.begin() + 8, bytes.end()};
}

inline IdxImages load_idx_images(const std::string& path) {
  return parse_idx_images(read_file_maybe_gzip(path), path);
}

inline std::vector<int> load_idx_labels(const std::string& path) {
  return parse_idx_labels(read_file_maybe_gzip(path), path);
}

/// Writes an image file; `gzip` selects compression. Pixels are rounded from [0, 1].
inline void write_idx_images(const std::string& path, const nn::Tensor& pixels, int rows, int cols,
                             bool gzip) {
  if (pixels.cols() != rows * cols) throw IdxError("write_idx_images: shape mismatch");
  std::vector<unsigned char> bytes;
  auto be32 = [&bytes](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) bytes.push_back(static_cast<unsigned char>(v >> s));
  };
  be32(kIdxImagesMagic);
  be32(static_cast<std::uint32_t>(pixels.rows()));
  be32(static_cast<std::uint32_t>(rows));
  be32(static_cast<std::uint32_t>(cols));
  for (Eigen::Index i = 0; i < pixels.size(); ++i) {
    const double v = std::clamp(pixels.data()[i], 0.0, 1.0);
    bytes.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  gzFile f = gzopen(path.c_str(), gzip ? "wb9" : "wbT");
  if (!f) throw IdxError("cannot open '" + path + "' for writing");
  const int written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
  if (written != static_cast<int>(bytes.size())) throw IdxError("short write to '" + path + "'");
}

inline void write_idx_labels(const std::string& path, const std::vector<int>& labels, bool gzip) {
  std::vector<unsigned char> bytes{0, 0, 8, 1};
  const auto n = static_cast<std::uint32_t>(labels.size());
  for (int s = 24; s >= 0; s -= 8) bytes.push_back(static_cast<unsigned char>(n >> s));
  for (int l : labels) bytes.push_back(static_cast<unsigned char>(l));
  gzFile f = gzopen(path.c_str(), gzip ? "wb9" : "wbT");
  if (!f) throw IdxError("cannot open '" + path + "' for writing");
  const int written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
  if (written != static_cast<int>(bytes.size())) throw IdxError("short write to '" + path + "'");
}

/// Grayscale images with labels; binarization happens per epoch.
struct ImageDataset {
  nn::Tensor train;
  std::vector<int> train_labels;
  nn::Tensor test;
  std::vector<int> test_labels;
  int rows = 28;
  int cols = 28;
};

/// Bernoulli-resampled binary copy of grayscale intensities.
inline nn::Tensor binarize(const nn::Tensor& gray, Rng& rng) {
  nn::Tensor out(gray.rows(), gray.cols());
  for (Eigen::Index i = 0; i < gray.size(); ++i)
    out.data()[i] = rng.uniform() < gray.data()[i] ? 1.0 : 0.0;
  return out;
}

/// Finds `stem` or `stem.gz` in dir.
inline std::optional<std::string> find_idx(const std::filesystem::path& dir, const std::string& stem) {
  for (const std::string& name : {stem, stem + ".gz"}) {
    const auto p = dir / name;
    if (std::filesystem::exists(p)) return p.string();
  }
  return std::nullopt;
}

/// Standard MNIST file names in `dir` (raw or .gz). Returns nullopt if any
/// of the four files is missing; throws IdxError on malformed files.
inline std::optional<ImageDataset> load_mnist_idx(const std::filesystem::path& dir) {
  const auto ti = find_idx(dir, "train-images-idx3-ubyte");
  const auto tl = find_idx(dir, "train-labels-idx1-ubyte");
  const auto vi = find_idx(dir, "t10k-images-idx3-ubyte");
  const auto vl = find_idx(dir, "t10k-labels-idx1-ubyte");
  if (!ti || !tl || !vi || !vl) return std::nullopt;
  ImageDataset d;
  IdxImages train = load_idx_images(*ti);
  IdxImages test = load_idx_images(*vi);
  d.train_labels = load_idx_labels(*tl);
  d.test_labels = load_idx_labels(*vl);
  if (static_cast<Eigen::Index>(d.train_labels.size()) != train.pixels.rows() ||
      static_cast<Eigen::Index>(d.test_labels.size()) != test.pixels.rows())
    throw IdxError("MNIST image/label counts disagree");
  if (train.rows != test.rows || train.cols != test.cols)
    throw IdxError("MNIST train/test image sizes disagree");
  d.rows = train.rows;
  d.cols = train.cols;
  d.train = std::move(train.pixels);
  d.test = std::move(test.pixels);
  return d;
}

}  // namespace svmf::io
