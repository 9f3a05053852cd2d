#include "cxrnet/binio.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "cxrnet/error.hpp"

namespace cxr::io {

namespace {

template <class T>
void put_le(Bytes& b, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

constexpr std::uint64_t kMaxRank = 8;

}  // namespace

void Writer::u32(std::uint32_t v) { put_le(buf_, v); }
void Writer::u64(std::uint64_t v) { put_le(buf_, v); }
void Writer::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void Writer::raw(const void* p, std::size_t n) {
  const auto* c = static_cast<const std::uint8_t*>(p);
  buf_.insert(buf_.end(), c, c + n);
}

void Writer::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) u64(d);
  buf_.reserve(buf_.size() + t.values().size() * 8);
  for (double v : t.values()) f64(v);
}

void Reader::fail(const std::string& what) const {
  throw FormatError("format error in " + ctx_ + " at byte " + std::to_string(off_) + ": " + what);
}

void Reader::need(std::size_t n) const {
  if (n > n_ - off_)
    fail("truncated, need " + std::to_string(n) + " more byte(s) but " +
         std::to_string(n_ - off_) + " remain");
}

const std::uint8_t* Reader::take(std::size_t n) {
  need(n);
  const std::uint8_t* p = p_ + off_;
  off_ += n;
  return p;
}

std::uint32_t Reader::u32() { return get_le<std::uint32_t>(take(4)); }
std::uint64_t Reader::u64() { return get_le<std::uint64_t>(take(8)); }
double Reader::f64() { return std::bit_cast<double>(get_le<std::uint64_t>(take(8))); }

std::string Reader::str(std::size_t n) {
  const std::uint8_t* p = take(n);
  return std::string(reinterpret_cast<const char*>(p), n);
}

void Reader::raw(void* dst, std::size_t n) { std::memcpy(dst, take(n), n); }

Tensor Reader::tensor() {
  const std::uint32_t rank = u32();
  if (rank > kMaxRank) fail("tensor rank " + std::to_string(rank) + " exceeds " + std::to_string(kMaxRank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    const std::uint64_t e = u64();
    if (e != 0 && count > remaining() / 8 / e) fail("tensor extents exceed the remaining payload");
    d = static_cast<std::size_t>(e);
    count *= e;
  }
  if (rank == 0) count = 0;
  need(count * 8);
  Tensor t(shape);
  for (double& v : t.values()) v = f64();
  return t;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0, std::ios::beg);
  Bytes b(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(b.data()), size);
  if (!in) throw FormatError("cannot read '" + path.string() + "'");
  return b;
}

void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
  }
}

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    c = ::crc32(c, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace cxr::io
