#include "pdseg/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace pdseg {

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::string& header, const std::vector<unsigned char>& payload) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << header;
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

// Whitespace-separated header tokens with '#' comments; stops after `count`
// tokens and the single whitespace byte that follows the last one.
struct HeaderReader {
  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;

  std::size_t token_start = 0;

  std::string token() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    token_start = start;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    if (start == pos) throw ParseError("unexpected end of header", start);
    return {bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(pos)};
  }

  long integer(const char* what) {
    const std::string t = token();
    const std::size_t at = token_start;
    try {
      std::size_t used = 0;
      const long v = std::stol(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
      return v;
    } catch (const std::exception&) {
      throw ParseError(std::string("bad ") + what + " '" + t + "'", at);
    }
  }

  void end_header() {
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ParseError("missing header terminator", pos);
    ++pos;
  }
};

void check_dims(long w, long h, std::size_t at) {
  if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16) throw ParseError("invalid image dimensions", at);
}

void require_plane(const Image& img, const char* what) {
  if (img.channels != 1) throw DimensionError(std::string(what) + " needs a single-channel image");
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw DimensionError("PFM needs a 1- or 3-channel image");
  std::vector<unsigned char> payload(image.data.size() * 4);
  std::size_t k = 0;
  for (int y = image.height - 1; y >= 0; --y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {  // interleaved per pixel
        std::uint32_t bits = std::bit_cast<std::uint32_t>(image.at(c, y, x));
        for (int b = 0; b < 4; ++b) payload[k++] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
      }
    }
  }
  const char* magic = image.channels == 1 ? "Pf\n" : "PF\n";
  dump(path, magic + std::to_string(image.width) + " " + std::to_string(image.height) + "\n-1.0\n", payload);
}

Image read_pfm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  HeaderReader r{bytes};
  const std::string magic = r.token();
  if (magic != "Pf" && magic != "PF") throw ParseError("expected PFM magic 'Pf' or 'PF', got '" + magic + "'", 0);
  const int channels = magic == "Pf" ? 1 : 3;
  const std::size_t dims_at = r.pos;
  const long w = r.integer("width");
  const long h = r.integer("height");
  check_dims(w, h, dims_at);
  const std::size_t scale_at = r.pos;
  const std::string scale_tok = r.token();
  double scale = 0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw ParseError("bad PFM scale '" + scale_tok + "'", scale_at);
  }
  if (scale == 0) throw ParseError("PFM scale must be non-zero", scale_at);
  r.end_header();
  const bool little = scale < 0;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 4 * channels;
  if (bytes.size() - r.pos < need) throw ParseError("truncated PFM payload", bytes.size());
  Image img(channels, static_cast<int>(h), static_cast<int>(w));
  std::size_t k = r.pos;
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < channels; ++c) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
          const std::uint32_t byte = bytes[k + static_cast<std::size_t>(b)];
          bits |= little ? byte << (8 * b) : byte << (8 * (3 - b));
        }
        k += 4;
        img.at(c, y, x) = std::bit_cast<float>(bits);
      }
    }
  }
  return img;
}

void write_pgm16(const std::filesystem::path& path, const Image& plane, float lo, float hi) {
  require_plane(plane, "PGM16");
  if (!(hi > lo)) throw ConfigError("PGM16 range must satisfy hi > lo");
  std::vector<unsigned char> payload(plane.data.size() * 2);
  for (std::size_t i = 0; i < plane.data.size(); ++i) {
    const double v = std::clamp((static_cast<double>(plane.data[i]) - lo) / (hi - lo), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    payload[2 * i] = static_cast<unsigned char>(q >> 8);
    payload[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  dump(path, "P5\n" + std::to_string(plane.width) + " " + std::to_string(plane.height) + "\n65535\n", payload);
}

Image read_pgm16(const std::filesystem::path& path, float lo, float hi) {
  const auto bytes = slurp(path);
  HeaderReader r{bytes};
  const std::string magic = r.token();
  if (magic != "P5") throw ParseError("expected PGM magic 'P5', got '" + magic + "'", 0);
  const std::size_t dims_at = r.pos;
  const long w = r.integer("width");
  const long h = r.integer("height");
  check_dims(w, h, dims_at);
  const std::size_t max_at = r.pos;
  const long maxval = r.integer("maxval");
  if (maxval != 65535) {
    throw ParseError("only 16-bit PGM (maxval 65535) is supported, got maxval " + std::to_string(maxval), max_at);
  }
  r.end_header();
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 2;
  if (bytes.size() - r.pos < need) throw ParseError("truncated PGM payload", bytes.size());
  Image img(1, static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const unsigned q = (static_cast<unsigned>(bytes[r.pos + 2 * i]) << 8) | bytes[r.pos + 2 * i + 1];
    img.data[i] = static_cast<float>(lo + (hi - lo) * (q / 65535.0));
  }
  return img;
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  std::vector<unsigned char> payload(labels.labels.begin(), labels.labels.end());
  dump(path, "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n", payload);
}

LabelMap read_label_pgm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  HeaderReader r{bytes};
  const std::string magic = r.token();
  if (magic != "P5") throw ParseError("expected PGM magic 'P5', got '" + magic + "'", 0);
  const std::size_t dims_at = r.pos;
  const long w = r.integer("width");
  const long h = r.integer("height");
  check_dims(w, h, dims_at);
  const std::size_t max_at = r.pos;
  if (r.integer("maxval") != 255) throw ParseError("label maps must be 8-bit PGM", max_at);
  r.end_header();
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - r.pos < need) throw ParseError("truncated label payload", bytes.size());
  LabelMap out(static_cast<int>(h), static_cast<int>(w));
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos), need, out.labels.begin());
  return out;
}

}  // namespace pdseg
