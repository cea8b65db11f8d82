#pragma once

// Patch artifact (.upaf), little-endian throughout:
//
//   "UPAF" | u32 version = 1 | u32 h | u32 w | f32 texels[h * w * 3]
//   | u32 n | n bytes of UTF-8 JSON metadata
//
// Texels are row-major with interleaved channels.

#include <cstdint>
#include <string>
#include <vector>

#include "upa/config.hpp"
#include "upa/render.hpp"

namespace upa::artifact {

inline constexpr std::uint32_t kFormatVersion = 1;

struct PatchArtifact {
  render::PatchTexture patch;
  std::string metadata;  // JSON text
};

// Metadata recording how the patch was produced.
std::string make_metadata(const config::RunConfig& cfg);

std::vector<std::uint8_t> encode(const PatchArtifact& artifact);
// Throws ArtifactError on any malformed input.
PatchArtifact decode(const std::vector<std::uint8_t>& bytes);

void save(const PatchArtifact& artifact, const std::string& path);
PatchArtifact load(const std::string& path);

// Binary PPM (P6), 8 bits per channel, byte = nearbyint(texel * 255)
// (round half to even), each texel repeated into a scale x scale block.
std::vector<std::uint8_t> encode_ppm(const render::PatchTexture& patch, std::size_t scale = 1);
void write_ppm(const render::PatchTexture& patch, const std::string& path, std::size_t scale = 1);
// Reads a P6 file with maxval 255 back into [0, 1] texels.
render::PatchTexture read_ppm(const std::string& path);

}  // namespace upa::artifact
