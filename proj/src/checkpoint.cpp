#include "evc/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "evc/errors.hpp"

namespace evc {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'C', 'K'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  std::uint32_t n = get_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw IoError("checkpoint: truncated string");
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_string(os, file.variant);
  put_string(os, file.config_hash);
  put_u32(os, static_cast<std::uint32_t>(file.records.size()));
  for (const auto& [name, tensor] : file.records) {
    put_string(os, name);
    const Shape& shape = tensor.shape();
    put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (Scalar v : tensor.value()) put_f32(os, static_cast<float>(v));
  }
  if (!os) throw IoError("checkpoint: write failure for " + path.string());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw CompatError("checkpoint: unsupported format version " + std::to_string(version));
  }
  CheckpointFile file;
  file.variant = get_string(is);
  file.config_hash = get_string(is);
  std::uint32_t count = get_u32(is);
  file.records.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    std::string name = get_string(is);
    std::uint32_t rank = get_u32(is);
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = get_u32(is);
      numel *= shape[i];
    }
    std::vector<Scalar> data(numel);
    for (std::size_t i = 0; i < numel; ++i) data[i] = static_cast<Scalar>(get_f32(is));
    file.records.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  return file;
}

}  // namespace evc
