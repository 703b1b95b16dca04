#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace panorag {

/// Interleaved, row-major float image with values in [0, 1].
/// Frames have 3 channels; masks use 1.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c = 3, float fill = 0.0f)
      : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {}

  float& at(int x, int y, int c = 0) { return data[(std::size_t(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const {
    return data[(std::size_t(y) * width + x) * channels + c];
  }
  std::size_t pixel_count() const { return std::size_t(width) * height; }
  bool empty() const { return data.empty(); }
  /// Dimensions positive, buffer sized, values finite and within [0, 1].
  bool is_valid() const;

  bool operator==(const ImageBuffer&) const = default;
};

/// Netpbm (P5/P6, 8 or 16 bit) and PFM (Pf/PF) readers. PFM round-trips
/// float data bit-exactly; Netpbm is quantized.
/// Throws Error(FileNotFound) / Error(ParseError).
ImageBuffer read_image(const std::filesystem::path& path);
/// Format follows the extension: .pfm, .ppm, .pgm.
void write_image(const std::filesystem::path& path, const ImageBuffer& img);

/// In-memory PFM encoding (used for exact transport of frames).
std::string encode_pfm(const ImageBuffer& img);
ImageBuffer decode_pfm(const std::string& bytes);
/// Back-to-back PFM images (each is self-delimiting).
std::string encode_pfm_sequence(const std::vector<ImageBuffer>& frames);
std::vector<ImageBuffer> decode_pfm_sequence(const std::string& bytes);

}  // namespace panorag
