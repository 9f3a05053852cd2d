#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cxrnet/tensor.hpp"

// Little-endian byte buffers and whole-file helpers shared by the weight,
// bundle and ensemble formats.
namespace cxr::io {

using Bytes = std::vector<std::uint8_t>;

class Writer {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void raw(const void* p, std::size_t n);
  void str(std::string_view s) { raw(s.data(), s.size()); }
  // rank, extents and float64 payload
  void tensor(const Tensor& t);

  Bytes& bytes() noexcept { return buf_; }
  std::size_t size() const noexcept { return buf_.size(); }

 private:
  Bytes buf_;
};

// Bounds-checked reader. Every failure is a FormatError carrying the byte
// offset and `context`.
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string context)
      : p_(data), n_(size), ctx_(std::move(context)) {}
  explicit Reader(const Bytes& b, std::string context = "buffer")
      : Reader(b.data(), b.size(), std::move(context)) {}

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str(std::size_t n);
  void raw(void* dst, std::size_t n);
  Tensor tensor();
  const std::uint8_t* take(std::size_t n);

  std::size_t offset() const noexcept { return off_; }
  std::size_t remaining() const noexcept { return n_ - off_; }
  bool done() const noexcept { return off_ == n_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n) const;
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t off_ = 0;
  std::string ctx_;
};

Bytes read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size);
inline void write_file_atomic(const std::filesystem::path& path, const Bytes& b) {
  write_file_atomic(path, b.data(), b.size());
}
inline void write_file_atomic(const std::filesystem::path& path, std::string_view s) {
  write_file_atomic(path, s.data(), s.size());
}

std::uint32_t crc32(const std::uint8_t* data, std::size_t size);

}  // namespace cxr::io
