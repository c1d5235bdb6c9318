// AudioClip and 16-bit PCM mono WAV I/O.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "semcom/common.hpp"

namespace semcom {

struct AudioClip {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate = 16000;
  std::string utterance_id;
  int speaker_id = 0;
};

namespace wav_detail {

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace wav_detail

inline void write_wav(const std::string& path, const AudioClip& clip) {
  using namespace wav_detail;
  std::vector<unsigned char> b;
  std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
  std::uint32_t data_bytes = n * 2;
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(b, static_cast<std::uint32_t>(clip.sample_rate * 2));
  put_u16(b, 2);
  put_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, data_bytes);
  for (double s : clip.samples) {
    double c = s > 1.0 ? 1.0 : (s < -1.0 ? -1.0 : s);
    auto v = static_cast<std::int16_t>(c >= 0 ? c * 32767.0 + 0.5 : c * 32768.0 - 0.5);
    put_u16(b, static_cast<std::uint16_t>(v));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write wav: " + path);
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline AudioClip read_wav(const std::string& path) {
  using namespace wav_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open wav: " + path);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (b.size() < 44 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw InputError("not a RIFF/WAVE file: " + path);

  AudioClip clip;
  std::size_t pos = 12;
  bool have_fmt = false, have_data = false;
  std::uint16_t channels = 1, bits = 16;
  while (pos + 8 <= b.size()) {
    std::uint32_t chunk_size = get_u32(&b[pos + 4]);
    bool is_fmt = std::memcmp(&b[pos], "fmt ", 4) == 0;
    bool is_data = std::memcmp(&b[pos], "data", 4) == 0;
    std::size_t body = pos + 8;
    if (is_fmt && body + 16 <= b.size()) {
      std::uint16_t fmt = get_u16(&b[body]);
      channels = get_u16(&b[body + 2]);
      clip.sample_rate = static_cast<int>(get_u32(&b[body + 4]));
      bits = get_u16(&b[body + 14]);
      if (fmt != 1) throw InputError("wav is not PCM: " + path);
      have_fmt = true;
    } else if (is_data) {
      if (!have_fmt) throw InputError("wav data before fmt: " + path);
      if (channels != 1 || bits != 16) throw InputError("expected 16-bit mono wav: " + path);
      std::size_t count = std::min<std::size_t>(chunk_size, b.size() - body) / 2;
      clip.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        auto v = static_cast<std::int16_t>(get_u16(&b[body + 2 * i]));
        clip.samples[i] = v >= 0 ? v / 32767.0 : v / 32768.0;
      }
      have_data = true;
    }
    pos = body + chunk_size + (chunk_size & 1);
  }
  if (!have_data) throw InputError("wav has no data chunk: " + path);
  return clip;
}

}  // namespace semcom
