#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "panorag/error.hpp"
#include "panorag/image.hpp"

namespace panorag {

bool ImageBuffer::is_valid() const {
  if (width < 1 || height < 1 || channels < 1) return false;
  if (data.size() != std::size_t(width) * height * channels) return false;
  for (float v : data) {
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  }
  return true;
}

namespace {

// Skips whitespace and '#' comments between Netpbm header tokens.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(char(ch));
  }
  return tok;
}

int parse_int(const std::string& tok) {
  try {
    std::size_t used = 0;
    int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "bad image header token '" + tok + "'");
  }
}

ImageBuffer read_pfm(std::istream& in, const std::string& magic) {
  const int channels = magic == "PF" ? 3 : 1;
  const int w = parse_int(next_token(in));
  const int h = parse_int(next_token(in));
  double scale;
  try {
    scale = std::stod(next_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "bad PFM scale");
  }
  if (w < 1 || h < 1) throw Error(ErrorCode::ParseError, "bad PFM dimensions");
  const bool little = scale < 0.0;

  ImageBuffer img(w, h, channels);
  const std::size_t row = std::size_t(w) * channels;
  std::vector<std::uint32_t> raw(row);
  // PFM stores rows bottom to top.
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(row * 4));
    if (!in) throw Error(ErrorCode::ParseError, "truncated PFM data");
    for (std::size_t i = 0; i < row; ++i) {
      std::uint32_t bits = raw[i];
      if (little != (std::endian::native == std::endian::little)) bits = __builtin_bswap32(bits);
      img.data[std::size_t(y) * row + i] = std::bit_cast<float>(bits);
    }
  }
  return img;
}

ImageBuffer read_netpbm(std::istream& in, const std::string& magic) {
  const int channels = magic == "P6" ? 3 : 1;
  const int w = parse_int(next_token(in));
  const int h = parse_int(next_token(in));
  const int maxval = parse_int(next_token(in));
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) {
    throw Error(ErrorCode::ParseError, "bad Netpbm header");
  }
  ImageBuffer img(w, h, channels);
  const std::size_t n = img.data.size();
  if (maxval < 256) {
    std::vector<unsigned char> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n));
    if (!in) throw Error(ErrorCode::ParseError, "truncated Netpbm data");
    for (std::size_t i = 0; i < n; ++i) img.data[i] = float(raw[i]) / float(maxval);
  } else {
    std::vector<unsigned char> raw(2 * n);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(2 * n));
    if (!in) throw Error(ErrorCode::ParseError, "truncated Netpbm data");
    for (std::size_t i = 0; i < n; ++i) {
      img.data[i] = float((raw[2 * i] << 8) | raw[2 * i + 1]) / float(maxval);
    }
  }
  return img;
}

ImageBuffer read_any(std::istream& in) {
  const std::string magic = next_token(in);
  if (magic == "PF" || magic == "Pf") return read_pfm(in, magic);
  if (magic == "P5" || magic == "P6") return read_netpbm(in, magic);
  throw Error(ErrorCode::ParseError, "unsupported image format '" + magic + "'");
}

void write_pfm(std::ostream& out, const ImageBuffer& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error(ErrorCode::BadRequest, "PFM supports 1 or 3 channels");
  }
  out << (img.channels == 3 ? "PF" : "Pf") << "\n"
      << img.width << " " << img.height << "\n"
      << (std::endian::native == std::endian::little ? "-1.0" : "1.0") << "\n";
  const std::size_t row = std::size_t(img.width) * img.channels;
  for (int y = img.height - 1; y >= 0; --y) {
    out.write(reinterpret_cast<const char*>(img.data.data() + std::size_t(y) * row),
              std::streamsize(row * sizeof(float)));
  }
}

}  // namespace

ImageBuffer read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open image " + path.string());
  return read_any(in);
}

void write_image(const std::filesystem::path& path, const ImageBuffer& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::FileNotFound, "cannot write image " + path.string());
  const std::string ext = path.extension().string();
  if (ext == ".pfm") {
    write_pfm(out, img);
    return;
  }
  const bool color = ext == ".ppm";
  if (!color && ext != ".pgm") {
    throw Error(ErrorCode::BadRequest, "unsupported image extension '" + ext + "'");
  }
  const int out_channels = color ? 3 : 1;
  out << (color ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixel_count() * out_channels);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    for (int c = 0; c < out_channels; ++c) {
      const int src_c = img.channels == 1 ? 0 : (color ? c : 0);
      const float v = std::clamp(img.data[p * img.channels + src_c], 0.0f, 1.0f);
      raw[p * out_channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
}

std::string encode_pfm(const ImageBuffer& img) {
  std::ostringstream out(std::ios::binary);
  write_pfm(out, img);
  return out.str();
}

ImageBuffer decode_pfm(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  const std::string magic = next_token(in);
  if (magic != "PF" && magic != "Pf") throw Error(ErrorCode::ParseError, "not a PFM payload");
  return read_pfm(in, magic);
}

std::string encode_pfm_sequence(const std::vector<ImageBuffer>& frames) {
  std::ostringstream out(std::ios::binary);
  for (const auto& f : frames) write_pfm(out, f);
  return out.str();
}

std::vector<ImageBuffer> decode_pfm_sequence(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  std::vector<ImageBuffer> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::string magic = next_token(in);
    if (magic.empty()) break;
    if (magic != "PF" && magic != "Pf") throw Error(ErrorCode::ParseError, "not a PFM sequence");
    out.push_back(read_pfm(in, magic));
  }
  return out;
}

}  // namespace panorag
