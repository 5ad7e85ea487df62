#include "axi/ingest/pgm.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace axi::ingest {

std::string encode_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw ImageError("truncated PGM header");
    return std::string(bytes_.substr(start, pos_ - start));
  }

  std::size_t number() {
    const std::string t = token();
    std::size_t value = 0;
    for (char ch : t) {
      if (!std::isdigit(static_cast<unsigned char>(ch))) throw ImageError("bad PGM header field '" + t + "'");
      value = value * 10 + static_cast<std::size_t>(ch - '0');
      if (value > (1u << 20)) throw ImageError("PGM dimension too large");
    }
    return value;
  }

  /// Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw ImageError("missing separator before PGM raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage decode_pgm(std::string_view bytes) {
  HeaderReader reader(bytes);
  if (reader.token() != "P5") throw ImageError("not a binary PGM (P5)");
  const std::size_t w = reader.number();
  const std::size_t h = reader.number();
  const std::size_t maxval = reader.number();
  if (w == 0 || h == 0) throw ImageError("PGM has zero extent");
  if (maxval != 255) throw ImageError("PGM maxval must be 255, got " + std::to_string(maxval));
  const std::size_t start = reader.raster_start();
  if (bytes.size() - std::min(bytes.size(), start) < w * h) throw ImageError("PGM raster truncated");
  GrayImage img(w, h);
  std::copy_n(bytes.data() + start, w * h, reinterpret_cast<char*>(img.pixels.data()));
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return decode_pgm(buf.str());
  } catch (const ImageError& e) {
    throw ImageError(path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot write image " + path.string());
  const std::string bytes = encode_pgm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("short write to " + path.string());
}

}  // namespace axi::ingest
