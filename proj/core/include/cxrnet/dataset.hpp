#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "cxrnet/binio.hpp"
#include "cxrnet/tensor.hpp"

namespace cxr::data {

enum Label : int { kCovidNegative = 0, kCovidPositive = 1 };

// One image with its optional annotations. An empty tensor means "absent";
// label -1 means unlabelled.
struct Sample {
  std::string id;
  Tensor image;       // [H,W], [0,1]
  Tensor float_mask;  // [H,W], [0,1] lung probability
  Tensor seg_truth;   // [H,W,2], channel 0 lung, channel 1 non-lung
  int label = -1;
  std::string group;
  double weight = 1.0;
};

// Two complementary binary channels from a {0,1} lung map.
Tensor seg_truth_from_mask(const Tensor& binary_mask);

// CXB1 container: "CXB1", u32 version, u32 section count, then sections of
// (4-byte tag, u64 payload length, payload, u32 CRC-32 of the payload).
// HEAD holds JSON metadata; IMGS, FMSK and SEGT hold float64 tensors.
struct DatasetBundle {
  std::size_t height = 0;
  std::size_t width = 0;
  double mean = 0.0;  // standardization statistics, meaningful when standardized
  double std = 1.0;
  bool standardized = false;
  std::array<double, 2> class_weights{1.0, 1.0};
  std::vector<Sample> samples;

  // Checks shapes, value ranges and field presence; throws ValidationError.
  void validate() const;
  std::vector<int> labels() const;
};

inline constexpr std::uint32_t kBundleVersion = 1;

io::Bytes pack_bundle(const DatasetBundle& b);
DatasetBundle unpack_bundle(const io::Bytes& bytes, const std::string& context = "bundle");
void save_bundle(const DatasetBundle& b, const std::filesystem::path& path);
DatasetBundle load_bundle(const std::filesystem::path& path);

}  // namespace cxr::data
