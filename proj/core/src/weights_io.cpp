#include "cxrnet/weights_io.hpp"

#include <map>

#include "cxrnet/error.hpp"

namespace cxr::nn {

namespace {

bool selected(const Param& p, const std::string& prefix) {
  return p.name.size() >= prefix.size() && p.name.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

io::Bytes weights_to_bytes(const ParamStore& params, const std::string& prefix) {
  io::Writer w;
  w.str("CXWT");
  w.u32(kWeightsVersion);
  for (const Param& p : params) {
    if (!selected(p, prefix)) continue;
    const std::string name = p.name.substr(prefix.size());
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.tensor(p.value);
  }
  return std::move(w.bytes());
}

void weights_from_bytes(ParamStore& params, const io::Bytes& bytes, const std::string& context,
                        const std::string& prefix) {
  io::Reader r(bytes, context);
  if (r.remaining() < 4 || r.str(4) != "CXWT") throw FormatError("format error in " + context + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kWeightsVersion)
    throw FormatError("format error in " + context + ": unsupported version " + std::to_string(version));
  std::map<std::string, Tensor> records;
  while (!r.done()) {
    const std::uint32_t len = r.u32();
    if (len > r.remaining()) r.fail("name length " + std::to_string(len) + " exceeds file");
    std::string name = prefix + r.str(len);
    Tensor t = r.tensor();
    if (!records.emplace(name, std::move(t)).second) r.fail("duplicate tensor '" + name + "'");
  }
  std::string missing, mismatched;
  for (const Param& p : params) {
    if (!selected(p, prefix)) continue;
    auto it = records.find(p.name);
    if (it == records.end()) {
      missing += (missing.empty() ? "" : ", ") + p.name;
    } else if (it->second.shape() != p.value.shape()) {
      mismatched += (mismatched.empty() ? "" : ", ") + p.name + " (file " +
                    shape_str(it->second.shape()) + ", model " + shape_str(p.value.shape()) + ")";
    }
  }
  std::string unexpected;
  for (const auto& [name, t] : records)
    if (!params.find(name)) unexpected += (unexpected.empty() ? "" : ", ") + name;
  std::string msg;
  if (!missing.empty()) msg += "missing tensors: " + missing + ". ";
  if (!mismatched.empty()) msg += "shape mismatch: " + mismatched + ". ";
  if (!unexpected.empty()) msg += "unexpected tensors: " + unexpected + ". ";
  if (!msg.empty()) throw ValidationError(context + ": " + msg.substr(0, msg.size() - 1));
  for (Param& p : params)
    if (selected(p, prefix)) p.value = std::move(records.at(p.name));
}

void save_weights(const Graph& g, const std::filesystem::path& path) {
  io::write_file_atomic(path, weights_to_bytes(g.params()));
}

void load_weights(Graph& g, const std::filesystem::path& path) {
  weights_from_bytes(g.params(), io::read_file(path), path.string());
}

}  // namespace cxr::nn
