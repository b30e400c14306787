#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bevloc/feature_map.hpp"

namespace bevloc {

/// FMAP1 feature-map container: 5-byte magic "FMAP1", little-endian u32
/// height, width, channels, little-endian f32 resolution (m/px), then the
/// data row-major (row, col, channel) as little-endian f32.
std::vector<std::uint8_t> encode_fmap(const FeatureMap& map);
FeatureMap decode_fmap(const std::uint8_t* bytes, std::size_t size);
void save_fmap(const FeatureMap& map, const std::string& path);
FeatureMap load_fmap(const std::string& path);

/// Named-tensor parameter blob, FMAP1-style: magic "FPRM1", little-endian
/// u64 seed, u32 section count, then per section a u32-length-prefixed name,
/// u32 ndims, u32 dims[ndims] and the f32 payload.
struct ParamBlob {
  std::uint64_t seed = 0;
  struct Section {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
  };
  std::map<std::string, Section> sections;

  void add(const std::string& name, std::vector<std::uint32_t> dims, std::vector<float> data);
  const Section& get(const std::string& name) const;
};

std::vector<std::uint8_t> encode_params(const ParamBlob& blob);
ParamBlob decode_params(const std::uint8_t* bytes, std::size_t size);
void save_params(const ParamBlob& blob, const std::string& path);
ParamBlob load_params(const std::string& path);

/// 16-bit binary PGM (P5, maxval 65535, big-endian samples).
void save_pgm16(const std::vector<double>& values, int height, int width,
                const std::string& path);

/// Writes bytes atomically (temp file in the same directory, then rename).
void atomic_write(const std::string& path, const void* data, std::size_t size);
void atomic_write(const std::string& path, const std::string& text);

std::string read_text_file(const std::string& path);

}  // namespace bevloc
