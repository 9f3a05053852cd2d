#include "cxrnet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "cxrnet/error.hpp"

namespace cxr::img {

namespace {

class HeaderParser {
 public:
  HeaderParser(const io::Bytes& b, const std::string& ctx) : b_(b), ctx_(ctx) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("format error in " + ctx_ + " at byte " + std::to_string(pos_) + ": " + what);
  }

  void skip_space() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* what) {
    skip_space();
    if (pos_ >= b_.size()) fail(std::string("unexpected end of header reading ") + what);
    if (!std::isdigit(b_[pos_])) fail(std::string("expected ") + what);
    unsigned long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<unsigned long>(b_[pos_] - '0');
      if (v > 0xFFFFFFFUL) fail(std::string(what) + " is too large");
      ++pos_;
    }
    return v;
  }

  std::size_t& pos() noexcept { return pos_; }

 private:
  const io::Bytes& b_;
  const std::string& ctx_;
  std::size_t pos_ = 0;
};

double clamp01(double v) { return std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0; }

}  // namespace

Tensor decode_pgm(const io::Bytes& b, const std::string& context) {
  HeaderParser hp(b, context);
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '2' && b[1] != '5'))
    hp.fail("not a PGM file (expected P2 or P5 magic)");
  const bool ascii = b[1] == '2';
  hp.pos() = 2;
  const unsigned long w = hp.number("width");
  const unsigned long h = hp.number("height");
  const unsigned long maxval = hp.number("maxval");
  if (w == 0 || h == 0) hp.fail("zero image extent");
  if (maxval == 0 || maxval > 65535) hp.fail("maxval must be in 1..65535");
  Tensor t({h, w});
  const double scale = 1.0 / static_cast<double>(maxval);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (ascii) {
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned long v = hp.number("pixel value");
      if (v > maxval) hp.fail("pixel value exceeds maxval");
      t[i] = static_cast<double>(v) * scale;
    }
    return t;
  }
  if (hp.pos() >= b.size() || !std::isspace(b[hp.pos()])) hp.fail("missing whitespace after maxval");
  ++hp.pos();
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t need = n * bpp;
  const std::size_t have = b.size() - hp.pos();
  if (have < need)
    hp.fail("truncated pixel data, missing " + std::to_string(need - have) + " byte(s)");
  const std::uint8_t* p = b.data() + hp.pos();
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bpp == 1 ? p[i] : (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
    if (v > maxval) {
      hp.pos() += i * bpp;
      hp.fail("pixel value exceeds maxval");
    }
    t[i] = static_cast<double>(v) * scale;
  }
  return t;
}

Tensor load_pgm(const std::filesystem::path& path) {
  return decode_pgm(io::read_file(path), path.string());
}

io::Bytes encode_pgm(const Tensor& t, int bits) {
  if (t.rank() != 2) throw ShapeError("PGM output expects [H,W], got " + shape_str(t.shape()));
  if (bits != 8 && bits != 16) throw ParameterError("PGM bit depth must be 8 or 16");
  const unsigned maxval = bits == 8 ? 255u : 65535u;
  io::Writer w;
  w.str("P5\n" + std::to_string(t.dim(1)) + " " + std::to_string(t.dim(0)) + "\n" +
        std::to_string(maxval) + "\n");
  for (double v : t.values()) {
    const auto q = static_cast<unsigned>(std::lround(clamp01(v) * maxval));
    if (bits == 16) {
      const std::uint8_t hi = static_cast<std::uint8_t>(q >> 8), lo = static_cast<std::uint8_t>(q & 0xFF);
      w.raw(&hi, 1);
      w.raw(&lo, 1);
    } else {
      const auto c = static_cast<std::uint8_t>(q);
      w.raw(&c, 1);
    }
  }
  return std::move(w.bytes());
}

void save_pgm(const Tensor& t, const std::filesystem::path& path, int bits) {
  io::write_file_atomic(path, encode_pgm(t, bits));
}

io::Bytes encode_ppm(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3)
    throw ShapeError("PPM output expects [H,W,3], got " + shape_str(rgb.shape()));
  io::Writer w;
  w.str("P6\n" + std::to_string(rgb.dim(1)) + " " + std::to_string(rgb.dim(0)) + "\n255\n");
  for (double v : rgb.values()) {
    const auto c = static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0));
    w.raw(&c, 1);
  }
  return std::move(w.bytes());
}

void save_ppm(const Tensor& rgb, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_ppm(rgb));
}

}  // namespace cxr::img
