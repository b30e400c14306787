#include "bevloc/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace bevloc {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 8);
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

class Reader {
 public:
  Reader(const std::uint8_t* bytes, std::size_t size) : p_(bytes), end_(bytes + size) {}

  void expect_magic(const char* magic, std::size_t n) {
    need(n);
    if (std::memcmp(p_, magic, n) != 0) throw std::runtime_error("bad magic in binary file");
    p_ += n;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, p_, 4);
    p_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, p_, 8);
    p_ += 8;
    return v;
  }
  float f32() {
    need(4);
    float v;
    std::memcpy(&v, p_, 4);
    p_ += 4;
    return v;
  }
  void floats(float* dst, std::size_t n) {
    need(4 * n);
    std::memcpy(dst, p_, 4 * n);
    p_ += 4 * n;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }

 private:
  void need(std::size_t n) {
    if (static_cast<std::size_t>(end_ - p_) < n)
      throw std::runtime_error("truncated binary file");
  }
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

std::vector<std::uint8_t> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

std::vector<std::uint8_t> encode_fmap(const FeatureMap& map) {
  map.validate("fmap");
  std::vector<std::uint8_t> out;
  out.reserve(21 + 4 * map.data.size());
  out.insert(out.end(), {'F', 'M', 'A', 'P', '1'});
  put_u32(out, static_cast<std::uint32_t>(map.height));
  put_u32(out, static_cast<std::uint32_t>(map.width));
  put_u32(out, static_cast<std::uint32_t>(map.channels));
  put_f32(out, map.resolution);
  const auto* p = reinterpret_cast<const std::uint8_t*>(map.data.data());
  out.insert(out.end(), p, p + 4 * map.data.size());
  return out;
}

FeatureMap decode_fmap(const std::uint8_t* bytes, std::size_t size) {
  Reader r(bytes, size);
  r.expect_magic("FMAP1", 5);
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  const float res = r.f32();
  if (h < 1 || w < 1 || c < 1 || h > (1u << 20) || w > (1u << 20) || c > (1u << 16))
    throw std::runtime_error("fmap: implausible dims");
  FeatureMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), res);
  r.floats(map.data.data(), map.data.size());
  map.validate("fmap");
  return map;
}

void save_fmap(const FeatureMap& map, const std::string& path) {
  const auto bytes = encode_fmap(map);
  atomic_write(path, bytes.data(), bytes.size());
}

FeatureMap load_fmap(const std::string& path) {
  const auto bytes = read_binary_file(path);
  return decode_fmap(bytes.data(), bytes.size());
}

void ParamBlob::add(const std::string& name, std::vector<std::uint32_t> dims,
                    std::vector<float> data) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  if (n != data.size()) throw std::invalid_argument("param section " + name + ": size mismatch");
  sections[name] = Section{std::move(dims), std::move(data)};
}

const ParamBlob::Section& ParamBlob::get(const std::string& name) const {
  auto it = sections.find(name);
  if (it == sections.end())
    throw std::runtime_error("param blob: missing section '" + name + "'");
  return it->second;
}

std::vector<std::uint8_t> encode_params(const ParamBlob& blob) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'F', 'P', 'R', 'M', '1'});
  put_u64(out, blob.seed);
  put_u32(out, static_cast<std::uint32_t>(blob.sections.size()));
  for (const auto& [name, sec] : blob.sections) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(sec.dims.size()));
    for (auto d : sec.dims) put_u32(out, d);
    const auto* p = reinterpret_cast<const std::uint8_t*>(sec.data.data());
    out.insert(out.end(), p, p + 4 * sec.data.size());
  }
  return out;
}

ParamBlob decode_params(const std::uint8_t* bytes, std::size_t size) {
  Reader r(bytes, size);
  r.expect_magic("FPRM1", 5);
  ParamBlob blob;
  blob.seed = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const std::uint32_t ndims = r.u32();
    std::vector<std::uint32_t> dims(ndims);
    std::size_t n = 1;
    for (auto& d : dims) {
      d = r.u32();
      n *= d;
    }
    std::vector<float> data(n);
    r.floats(data.data(), n);
    blob.add(name, std::move(dims), std::move(data));
  }
  return blob;
}

void save_params(const ParamBlob& blob, const std::string& path) {
  const auto bytes = encode_params(blob);
  atomic_write(path, bytes.data(), bytes.size());
}

ParamBlob load_params(const std::string& path) {
  const auto bytes = read_binary_file(path);
  return decode_params(bytes.data(), bytes.size());
}

void save_pgm16(const std::vector<double>& values, int height, int width,
                const std::string& path) {
  if (values.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("pgm: value count does not match dims");
  const double max_v = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  const double scale = max_v > 0.0 ? 65535.0 / max_v : 0.0;
  std::ostringstream header;
  header << "P5\n" << width << ' ' << height << "\n65535\n";
  std::string out = header.str();
  out.reserve(out.size() + values.size() * 2);
  for (double v : values) {
    const auto s = static_cast<std::uint16_t>(std::clamp(v * scale, 0.0, 65535.0) + 0.5);
    out.push_back(static_cast<char>(s >> 8));  // most significant byte first
    out.push_back(static_cast<char>(s & 0xff));
  }
  atomic_write(path, out.data(), out.size());
}

void atomic_write(const std::string& path, const void* data, std::size_t size) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

void atomic_write(const std::string& path, const std::string& text) {
  atomic_write(path, text.data(), text.size());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace bevloc
