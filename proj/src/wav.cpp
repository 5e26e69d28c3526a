#include "evc/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "evc/errors.hpp"

namespace evc {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void wr_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("wav: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IoError("wav: not a RIFF/WAVE file: " + path.string());
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t chunk_len = rd_u32(hdr + 4);
    const unsigned char* body = hdr + 8;
    if (pos + 8 + chunk_len > bytes.size()) {
      throw IoError("wav: truncated chunk in " + path.string());
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw IoError("wav: malformed fmt chunk in " + path.string());
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (!data || rate == 0 || channels == 0) {
    throw IoError("wav: missing fmt or data chunk in " + path.string());
  }
  bool pcm16 = format == 1 && bits == 16;
  bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw IoError("wav: unsupported encoding (need 16-bit PCM or 32-bit float): " +
                  path.string());
  }
  std::size_t bytes_per = bits / 8;
  std::size_t n_frames = data_len / (bytes_per * channels);
  WavData out;
  out.sample_rate = rate;
  out.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    Scalar acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per;
      if (pcm16) {
        std::int16_t v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
        acc += static_cast<Scalar>(v) / 32768.0;
      } else {
        float v;
        std::uint32_t bits32 = rd_u32(p);
        std::memcpy(&v, &bits32, 4);
        acc += static_cast<Scalar>(v);
      }
    }
    out.samples[i] = acc / static_cast<Scalar>(channels);
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const std::vector<Scalar>& samples,
               std::size_t sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("wav: cannot open " + path.string() + " for writing");
  std::uint32_t data_len = static_cast<std::uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  wr_u32(os, 36 + data_len);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  wr_u32(os, 16);
  wr_u16(os, 1);  // integer PCM
  wr_u16(os, 1);  // mono
  wr_u32(os, static_cast<std::uint32_t>(sample_rate));
  wr_u32(os, static_cast<std::uint32_t>(sample_rate * 2));
  wr_u16(os, 2);
  wr_u16(os, 16);
  os.write("data", 4);
  wr_u32(os, data_len);
  for (Scalar s : samples) {
    Scalar clamped = std::min(std::max(s, -1.0), 1.0);
    auto v = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!os) throw IoError("wav: write failure for " + path.string());
}

}  // namespace evc
