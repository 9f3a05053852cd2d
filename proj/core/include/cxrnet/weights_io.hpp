#pragma once

#include <filesystem>

#include "cxrnet/binio.hpp"
#include "cxrnet/graph.hpp"

// CXWT weight files: "CXWT", u32 version, then one record per parameter until
// end of file: u32 name length, utf-8 name, u32 rank, u64 extents, float64
// payload. All integers and floats are little-endian. Non-trainable state
// (batch-norm running statistics) is stored alongside the trainable weights.
namespace cxr::nn {

inline constexpr std::uint32_t kWeightsVersion = 1;

// With a non-empty `prefix` only parameters whose names start with it are
// written, with the prefix stripped; loading maps file names back under it.
io::Bytes weights_to_bytes(const ParamStore& params, const std::string& prefix = "");
// Every selected parameter must appear exactly once with a matching shape;
// otherwise nothing is modified and the error lists the offending names.
void weights_from_bytes(ParamStore& params, const io::Bytes& bytes,
                        const std::string& context = "weights", const std::string& prefix = "");

void save_weights(const Graph& g, const std::filesystem::path& path);
void load_weights(Graph& g, const std::filesystem::path& path);

}  // namespace cxr::nn
