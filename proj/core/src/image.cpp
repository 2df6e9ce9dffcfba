#include "fbi/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace fbi {
namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      if (value > 100'000'000) throw FormatError(std::string("PNM ") + what + " too large");
      value = value * 10 + (bytes_[pos_] - '0');
      ++pos_;
      ++digits;
    }
    if (digits == 0) throw FormatError(std::string("PNM header: expected ") + what);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void raster_separator() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
      throw FormatError("PNM header: missing whitespace before raster");
    }
    ++pos_;
  }

  std::size_t offset() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  static bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint8_t round_half_up(double value) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(value + 0.5), 0.0, 255.0));
}

struct PlaneView {
  std::size_t channels;
  std::size_t height;
  std::size_t width;
};

PlaneView plane_view(const Shape& shape) {
  if (shape.rank() == 3) return {shape[0], shape[1], shape[2]};
  if (shape.rank() == 1) return {1, 1, shape[0]};
  throw ShapeError("cannot render saliency of shape " + shape.to_string());
}

}  // namespace

ImageU8 load_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("bad PNM magic: expected P5 or P6");
  }
  ImageU8 image;
  image.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader header(bytes);
  header.advance(2);
  image.width = header.number("width");
  image.height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (image.width == 0 || image.height == 0) throw FormatError("PNM image has zero extent");
  if (maxval != 255) {
    throw FormatError("unsupported PNM maxval " + std::to_string(maxval) + " (only 255)");
  }
  header.raster_separator();
  const std::size_t need = image.width * image.height * image.channels;
  const std::size_t have = bytes.size() - header.offset();
  if (have < need) {
    throw FormatError("truncated PNM raster: need " + std::to_string(need) + " bytes, have " +
                      std::to_string(have));
  }
  const auto raster = bytes.subspan(header.offset(), need);
  image.pixels.assign(raster.begin(), raster.end());
  return image;
}

ImageU8 load_pnm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  try {
    return load_pnm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::vector<std::uint8_t> save_pnm(const ImageU8& image) {
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                             std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

void save_pnm_file(const ImageU8& image, const std::string& path) {
  const auto bytes = save_pnm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

Tensor preprocess(const ImageU8& image, std::span<const float> mean, const Shape& expected) {
  if (expected.rank() != 3) {
    throw ShapeError("image models need a [C,H,W] input, got " + expected.to_string());
  }
  if (image.channels != expected[0] || image.height != expected[1] ||
      image.width != expected[2]) {
    throw ShapeError("image is " + std::to_string(image.channels) + "x" +
                     std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " (CxHxW) but the model expects " + expected.to_string() +
                     "; resize it beforehand");
  }
  if (mean.size() != image.channels) {
    throw ShapeError("mean has " + std::to_string(mean.size()) + " entries for " +
                     std::to_string(image.channels) + " channels");
  }
  Tensor out(expected);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        out.at(c, y, x) = static_cast<float>(image.at(y, x, c)) - mean[c];
      }
    }
  }
  return out;
}

ImageU8 render_grayscale(const SaliencyMap& saliency) {
  const PlaneView view = plane_view(saliency.values.shape());
  const std::size_t plane = view.height * view.width;
  std::vector<float> magnitude(plane, 0.0f);
  for (std::size_t c = 0; c < view.channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      magnitude[p] = std::max(magnitude[p], std::fabs(saliency.values[c * plane + p]));
    }
  }
  const float peak = *std::max_element(magnitude.begin(), magnitude.end());

  ImageU8 image{view.width, view.height, 1, std::vector<std::uint8_t>(plane, 0)};
  if (peak == 0.0f) return image;
  for (std::size_t p = 0; p < plane; ++p) {
    image.pixels[p] =
        round_half_up(255.0 * static_cast<double>(magnitude[p]) / static_cast<double>(peak));
  }
  return image;
}

ImageU8 render_overlay(const SaliencyMap& saliency, const ImageU8& base) {
  const ImageU8 heat = render_grayscale(saliency);
  if (heat.width != base.width || heat.height != base.height) {
    throw ShapeError("overlay base is " + std::to_string(base.width) + "x" +
                     std::to_string(base.height) + " but the saliency is " +
                     std::to_string(heat.width) + "x" + std::to_string(heat.height));
  }
  ImageU8 out{base.width, base.height, 3, std::vector<std::uint8_t>(base.width * base.height * 3)};
  for (std::size_t p = 0; p < base.width * base.height; ++p) {
    unsigned luma = 0;
    if (base.channels == 1) {
      luma = base.pixels[p];
    } else {
      // ITU-R 601 weights in integer thousandths, rounded half up.
      const unsigned r = base.pixels[p * 3];
      const unsigned g = base.pixels[p * 3 + 1];
      const unsigned b = base.pixels[p * 3 + 2];
      luma = (299 * r + 587 * g + 114 * b + 500) / 1000;
    }
    // 0.3 * luma + 0.7 * 255 * (heat / 255), exact in tenths.
    const unsigned dim = (3 * luma + 5) / 10;
    const unsigned red = std::min(255u, (3 * luma + 7 * heat.pixels[p] + 5) / 10);
    out.pixels[p * 3] = static_cast<std::uint8_t>(red);
    out.pixels[p * 3 + 1] = static_cast<std::uint8_t>(dim);
    out.pixels[p * 3 + 2] = static_cast<std::uint8_t>(dim);
  }
  return out;
}

}  // namespace fbi
