#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "shedlab/errors.hpp"
#include "shedlab/rng.hpp"
#include "shedlab/tensor.hpp"

namespace shedlab {

/// Labeled samples with a fixed per-sample shape. Features are stored
/// row-major, one sample after another.
struct Dataset {
  std::vector<std::size_t> sample_shape;
  std::size_t num_classes = 0;
  std::vector<double> features;
  std::vector<int> labels;

  std::size_t count() const { return labels.size(); }
  std::size_t sample_size() const { return Tensor::element_count(sample_shape); }

  /// Gathers the given sample indices into a batch tensor shaped
  /// (n, per-sample dims...).
  Tensor gather(const std::vector<std::size_t>& indices) const {
    const std::size_t dim = sample_size();
    std::vector<std::size_t> shape = sample_shape;
    shape.insert(shape.begin(), indices.size());
    Tensor batch = Tensor::zeros(shape);
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t k = 0; k < dim; ++k)
        batch.data[i * dim + k] = features[indices[i] * dim + k];
    return batch;
  }

  std::vector<int> gather_labels(const std::vector<std::size_t>& indices) const {
    std::vector<int> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
    return out;
  }
};

/// Gaussian class blobs: per-class centers drawn uniformly from [-1, 1]^dim,
/// samples cycle through the classes in order and add noise_scale * N(0, 1)
/// per coordinate. Fully determined by the integer seed (see rng.hpp for the
/// exact generator), so repeated generation is byte-identical.
inline Dataset synthetic_blobs(std::size_t classes, std::size_t dim, std::size_t samples,
                               double noise_scale, std::uint64_t seed) {
  if (classes < 2) throw ValidationError("synthetic blobs need at least 2 classes");
  if (dim == 0 || samples == 0) throw ValidationError("synthetic blobs need dim and samples >= 1");
  if (noise_scale < 0.0) throw ValidationError("noise scale must be >= 0");

  Rng rng(Rng::derive(seed, 0x626c6f62));
  std::vector<double> centers(classes * dim);
  for (double& c : centers) c = rng.uniform(-1.0, 1.0);

  Dataset ds;
  ds.sample_shape = {dim};
  ds.num_classes = classes;
  ds.features.resize(samples * dim);
  ds.labels.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t label = i % classes;
    ds.labels[i] = static_cast<int>(label);
    for (std::size_t k = 0; k < dim; ++k)
      ds.features[i * dim + k] = centers[label * dim + k] + noise_scale * rng.normal();
  }
  return ds;
}

namespace detail {

inline std::uint32_t read_be_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(path + ": truncated while reading header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

inline void write_be_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // unsigned byte, 3 dims
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // unsigned byte, 1 dim

/// Loads an IDX image/label pair (the MNIST container format). Pixel values
/// map to (byte / 255 - mean) / stddev. Sample shape is (h, w).
inline Dataset load_idx(const std::string& image_path, const std::string& label_path,
                        double mean = 0.0, double stddev = 1.0) {
  if (stddev <= 0.0) throw ValidationError("idx stddev must be > 0");
  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw FormatError(image_path + ": cannot open");
  if (detail::read_be_u32(img, image_path) != kIdxImageMagic)
    throw FormatError(image_path + ": bad image magic");
  const std::uint32_t n = detail::read_be_u32(img, image_path);
  const std::uint32_t h = detail::read_be_u32(img, image_path);
  const std::uint32_t w = detail::read_be_u32(img, image_path);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * h * w);
  if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size())))
    throw FormatError(image_path + ": truncated pixel data");

  std::ifstream lab(label_path, std::ios::binary);
  if (!lab) throw FormatError(label_path + ": cannot open");
  if (detail::read_be_u32(lab, label_path) != kIdxLabelMagic)
    throw FormatError(label_path + ": bad label magic");
  const std::uint32_t ln = detail::read_be_u32(lab, label_path);
  if (ln != n)
    throw FormatError(label_path + ": label count " + std::to_string(ln) +
                      " does not match image count " + std::to_string(n));
  std::vector<unsigned char> raw(ln);
  if (!lab.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw FormatError(label_path + ": truncated label data");

  Dataset ds;
  ds.sample_shape = {h, w};
  ds.features.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i)
    ds.features[i] = (static_cast<double>(pixels[i]) / 255.0 - mean) / stddev;
  ds.labels.resize(ln);
  int max_label = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    ds.labels[i] = static_cast<int>(raw[i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

inline void write_idx_images(const std::string& path, std::uint32_t n, std::uint32_t h,
                             std::uint32_t w, const std::vector<unsigned char>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(n) * h * w)
    throw StructuralError("pixel buffer does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  detail::write_be_u32(out, kIdxImageMagic);
  detail::write_be_u32(out, n);
  detail::write_be_u32(out, h);
  detail::write_be_u32(out, w);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path + ": cannot open for writing");
  detail::write_be_u32(out, kIdxLabelMagic);
  detail::write_be_u32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

}  // namespace shedlab
