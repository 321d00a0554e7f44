#include "fbkws/wav.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fbkws {

namespace {

uint32_t rd_u32(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

uint16_t rd_u16(const unsigned char* p) {
  return uint16_t(p[0]) | uint16_t(p[1]) << 8;
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  WavData out;
  int channels = 0, bits = 0;
  bool have_fmt = false;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* hdr = buf.data() + pos;
    uint32_t chunk_size = rd_u32(hdr + 4);
    size_t body = pos + 8;
    if (body + chunk_size > buf.size())
      chunk_size = uint32_t(buf.size() - body);  // tolerate truncated size field
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw std::runtime_error("short fmt chunk: " + path);
      uint16_t audio_format = rd_u16(buf.data() + body);
      if (audio_format != 1)
        throw std::runtime_error("not PCM (fmt=" + std::to_string(audio_format) +
                                 "): " + path);
      channels = rd_u16(buf.data() + body + 2);
      out.sample_rate = int(rd_u32(buf.data() + body + 4));
      bits = rd_u16(buf.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("data before fmt: " + path);
      if (channels != 1)
        throw std::runtime_error("expected mono, got " +
                                 std::to_string(channels) + " channels: " + path);
      if (bits != 16)
        throw std::runtime_error("expected 16-bit PCM, got " +
                                 std::to_string(bits) + ": " + path);
      size_t n = chunk_size / 2;
      out.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        int16_t s = int16_t(rd_u16(buf.data() + body + 2 * i));
        out.samples[i] = double(s) / 32768.0;
      }
      return out;
    }
    pos = body + chunk_size + (chunk_size & 1);  // chunks are word-aligned
  }
  throw std::runtime_error("no data chunk: " + path);
}

void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  auto put_u32 = [&](uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8 & 0xff),
                          (unsigned char)(v >> 16 & 0xff),
                          (unsigned char)(v >> 24 & 0xff)};
    out.write((const char*)b, 4);
  };
  auto put_u16 = [&](uint16_t v) {
    unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8)};
    out.write((const char*)b, 2);
  };
  uint32_t data_bytes = uint32_t(samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(uint32_t(sample_rate));
  put_u32(uint32_t(sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_bytes);
  for (double x : samples) {
    double c = x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x);
    long v = std::lrint(c * 32768.0);
    if (v > 32767) v = 32767;
    if (v < -32768) v = -32768;
    put_u16(uint16_t(int16_t(v)));
  }
}

}  // namespace fbkws
