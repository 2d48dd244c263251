#pragma once

// IDX (MNIST) image/label files: big-endian u32 magic, big-endian u32
// dimension sizes, unsigned byte payload.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dppmlf/errors.hpp"
#include "dppmlf/models.hpp"

namespace dppmlf {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path, 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset, const std::string& what) {
  if (offset + 4 > buf.size()) throw FormatError(what + ": truncated header", buf.size());
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

}  // namespace detail

/// Loads an IDX image file and its label file. Pixels are scaled to [0, 1];
/// the class count is max(label) + 1 (at least 2). Nothing is returned unless
/// both files parse completely.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file_bytes(images_path);
  const auto lab = detail::read_file_bytes(labels_path);

  if (const auto m = detail::read_be32(img, 0, images_path); m != kIdxImageMagic) {
    throw FormatError(images_path + ": bad image magic " + std::to_string(m), 0);
  }
  if (const auto m = detail::read_be32(lab, 0, labels_path); m != kIdxLabelMagic) {
    throw FormatError(labels_path + ": bad label magic " + std::to_string(m), 0);
  }
  const std::size_t n_images = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t n_labels = detail::read_be32(lab, 4, labels_path);
  if (n_images != n_labels) {
    throw FormatError("image count " + std::to_string(n_images) + " != label count " + std::to_string(n_labels), 4);
  }
  const std::size_t pixels = rows * cols;
  if (n_images == 0 || pixels == 0) throw FormatError(images_path + ": empty image set", 4);
  if (img.size() < 16 + n_images * pixels) {
    throw FormatError(images_path + ": truncated payload", img.size());
  }
  if (lab.size() < 8 + n_labels) throw FormatError(labels_path + ": truncated payload", lab.size());

  std::vector<Sample> samples(n_images);
  std::size_t max_label = 1;
  for (std::size_t i = 0; i < n_images; ++i) {
    auto& s = samples[i];
    s.features.resize(pixels);
    const unsigned char* src = img.data() + 16 + i * pixels;
    for (std::size_t j = 0; j < pixels; ++j) s.features[j] = src[j] / 255.0;
    s.label = lab[8 + i];
    max_label = std::max<std::size_t>(max_label, lab[8 + i]);
  }
  return Dataset(std::move(samples), max_label + 1);
}

}  // namespace dppmlf
