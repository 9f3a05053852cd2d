#include "cxrnet/dataset.hpp"

#include <cmath>
#include <cstring>
#include <json.hpp>

#include "cxrnet/error.hpp"

namespace cxr::data {

using nlohmann::json;

Tensor seg_truth_from_mask(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("segmentation truth needs an [H,W] mask");
  Tensor out({m.dim(0), m.dim(1), 2});
  for (std::size_t i = 0; i < m.numel(); ++i) {
    const double v = m[i] >= 0.5 ? 1.0 : 0.0;
    out[2 * i] = v;
    out[2 * i + 1] = 1.0 - v;
  }
  return out;
}

void DatasetBundle::validate() const {
  bool any_mask = false, any_truth = false;
  for (const Sample& s : samples) {
    any_mask |= !s.float_mask.empty();
    any_truth |= !s.seg_truth.empty();
  }
  for (const Sample& s : samples) {
    const std::string who = "sample '" + s.id + "'";
    if (s.image.shape() != Shape{height, width})
      throw ValidationError(who + ": image " + shape_str(s.image.shape()) + " does not match bundle extent " +
                            std::to_string(height) + "x" + std::to_string(width));
    if (!s.image.all_finite()) throw ValidationError(who + ": non-finite pixel");
    if (any_mask) {
      if (s.float_mask.shape() != Shape{height, width})
        throw ValidationError(who + ": float mask missing or misshapen");
      for (double v : s.float_mask.values())
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(who + ": float mask outside [0,1]");
    }
    if (any_truth) {
      if (s.seg_truth.shape() != Shape{height, width, 2})
        throw ValidationError(who + ": segmentation truth missing or misshapen");
      for (double v : s.seg_truth.values())
        if (v != 0.0 && v != 1.0) throw ValidationError(who + ": segmentation truth is not binary");
    }
    if (s.label < -1 || s.label > 1) throw ValidationError(who + ": label must be -1, 0 or 1");
    if (!(s.weight >= 0.0) || !std::isfinite(s.weight)) throw ValidationError(who + ": bad weight");
  }
}

std::vector<int> DatasetBundle::labels() const {
  std::vector<int> l;
  l.reserve(samples.size());
  for (const Sample& s : samples) l.push_back(s.label);
  return l;
}

namespace {

void put_section(io::Writer& w, const char tag[5], const io::Bytes& payload) {
  w.raw(tag, 4);
  w.u64(payload.size());
  w.raw(payload.data(), payload.size());
  w.u32(io::crc32(payload.data(), payload.size()));
}

io::Bytes pack_tensors(const std::vector<Sample>& samples, Tensor Sample::*field) {
  io::Writer w;
  for (const Sample& s : samples)
    for (double v : (s.*field).values()) w.f64(v);
  return std::move(w.bytes());
}

}  // namespace

io::Bytes pack_bundle(const DatasetBundle& b) {
  b.validate();
  const bool has_mask = !b.samples.empty() && !b.samples[0].float_mask.empty();
  const bool has_truth = !b.samples.empty() && !b.samples[0].seg_truth.empty();
  json head;
  head["count"] = b.samples.size();
  head["height"] = b.height;
  head["width"] = b.width;
  head["mean"] = b.mean;
  head["std"] = b.std;
  head["standardized"] = b.standardized;
  head["class_weights"] = b.class_weights;
  head["has_float_mask"] = has_mask;
  head["has_seg_truth"] = has_truth;
  json ids = json::array(), groups = json::array(), labels = json::array(), weights = json::array();
  for (const Sample& s : b.samples) {
    ids.push_back(s.id);
    groups.push_back(s.group);
    labels.push_back(s.label);
    weights.push_back(s.weight);
  }
  head["ids"] = ids;
  head["groups"] = groups;
  head["labels"] = labels;
  head["weights"] = weights;
  const std::string text = head.dump();

  std::vector<std::pair<const char*, io::Bytes>> sections;
  sections.emplace_back("HEAD", io::Bytes(text.begin(), text.end()));
  sections.emplace_back("IMGS", pack_tensors(b.samples, &Sample::image));
  if (has_mask) sections.emplace_back("FMSK", pack_tensors(b.samples, &Sample::float_mask));
  if (has_truth) sections.emplace_back("SEGT", pack_tensors(b.samples, &Sample::seg_truth));

  io::Writer w;
  w.str("CXB1");
  w.u32(kBundleVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [tag, payload] : sections) put_section(w, tag, payload);
  return std::move(w.bytes());
}

DatasetBundle unpack_bundle(const io::Bytes& bytes, const std::string& context) {
  io::Reader r(bytes, context);
  if (r.remaining() < 4 || r.str(4) != "CXB1") r.fail("bad magic, not a CXB1 bundle");
  const std::uint32_t version = r.u32();
  if (version != kBundleVersion) r.fail("unsupported bundle version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, std::pair<const std::uint8_t*, std::size_t>>> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string tag = r.str(4);
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) r.fail("section " + tag + " length " + std::to_string(len) + " exceeds file");
    const std::uint8_t* p = r.take(static_cast<std::size_t>(len));
    const std::uint32_t crc = r.u32();
    if (crc != io::crc32(p, static_cast<std::size_t>(len)))
      throw IntegrityError("integrity error in " + context + ": checksum mismatch in section " + tag);
    sections.emplace_back(std::move(tag), std::make_pair(p, static_cast<std::size_t>(len)));
  }
  if (!r.done()) r.fail("trailing bytes after the last section");
  auto find = [&](const std::string& tag) -> const std::pair<const std::uint8_t*, std::size_t>* {
    for (const auto& s : sections)
      if (s.first == tag) return &s.second;
    return nullptr;
  };
  const auto* hs = find("HEAD");
  if (!hs) throw FormatError("format error in " + context + ": missing HEAD section");
  DatasetBundle b;
  json head;
  try {
    head = json::parse(std::string(reinterpret_cast<const char*>(hs->first), hs->second));
    const std::size_t n = head.at("count").get<std::size_t>();
    b.height = head.at("height").get<std::size_t>();
    b.width = head.at("width").get<std::size_t>();
    b.mean = head.at("mean").get<double>();
    b.std = head.at("std").get<double>();
    b.standardized = head.at("standardized").get<bool>();
    b.class_weights = head.at("class_weights").get<std::array<double, 2>>();
    const auto ids = head.at("ids").get<std::vector<std::string>>();
    const auto groups = head.at("groups").get<std::vector<std::string>>();
    const auto labels = head.at("labels").get<std::vector<int>>();
    const auto weights = head.at("weights").get<std::vector<double>>();
    if (ids.size() != n || groups.size() != n || labels.size() != n || weights.size() != n)
      throw FormatError("header arrays disagree with count");
    b.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      b.samples[i].id = ids[i];
      b.samples[i].group = groups[i];
      b.samples[i].label = labels[i];
      b.samples[i].weight = weights[i];
    }
  } catch (const json::exception& e) {
    throw FormatError("format error in " + context + ": bad HEAD section: " + e.what());
  } catch (const FormatError& e) {
    throw FormatError("format error in " + context + ": " + e.what());
  }
  auto unpack = [&](const char* tag, Tensor Sample::*field, Shape shape, bool required) {
    const auto* s = find(tag);
    if (!s) {
      if (required) throw FormatError("format error in " + context + ": missing " + tag + " section");
      return;
    }
    const std::size_t per = shape_numel(shape);
    if (s->second != per * b.samples.size() * 8)
      throw FormatError("format error in " + context + ": section " + tag + " has " +
                        std::to_string(s->second) + " bytes, expected " +
                        std::to_string(per * b.samples.size() * 8));
    io::Reader tr(s->first, s->second, context + ":" + tag);
    for (Sample& smp : b.samples) {
      Tensor t(shape);
      for (double& v : t.values()) v = tr.f64();
      smp.*field = std::move(t);
    }
  };
  unpack("IMGS", &Sample::image, {b.height, b.width}, true);
  unpack("FMSK", &Sample::float_mask, {b.height, b.width}, head.value("has_float_mask", false));
  unpack("SEGT", &Sample::seg_truth, {b.height, b.width, 2}, head.value("has_seg_truth", false));
  return b;
}

void save_bundle(const DatasetBundle& b, const std::filesystem::path& path) {
  io::write_file_atomic(path, pack_bundle(b));
}

DatasetBundle load_bundle(const std::filesystem::path& path) {
  return unpack_bundle(io::read_file(path), path.string());
}

}  // namespace cxr::data
