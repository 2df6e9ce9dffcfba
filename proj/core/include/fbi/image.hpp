#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fbi/saliency.hpp"
#include "fbi/tensor.hpp"

namespace fbi {

/// 8-bit image, row-major with interleaved channels (1 = gray, 3 = RGB).
struct ImageU8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }

  friend bool operator==(const ImageU8&, const ImageU8&) = default;
};

/// Decode binary PGM (P5) or PPM (P6) with maxval 255.
ImageU8 load_pnm(std::span<const std::uint8_t> bytes);
ImageU8 load_pnm_file(const std::string& path);

/// Canonical encoding: "P5\n" or "P6\n", "W H\n", "255\n", raster.
std::vector<std::uint8_t> save_pnm(const ImageU8& image);
void save_pnm_file(const ImageU8& image, const std::string& path);

/// Channel-first tensor of pixel - mean[channel]. Never resizes: the image
/// must already be expected[1] x expected[2] with expected[0] channels.
Tensor preprocess(const ImageU8& image, std::span<const float> mean, const Shape& expected);

/// |values| reduced by max over channels, scaled so the peak maps to 255
/// (round half up). An all-zero map renders black.
ImageU8 render_grayscale(const SaliencyMap& saliency);

/// Saliency in red over a dimmed grayscale copy of `base`.
ImageU8 render_overlay(const SaliencyMap& saliency, const ImageU8& base);

}  // namespace fbi
