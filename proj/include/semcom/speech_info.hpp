// The compact side-channel payload D: per-phoneme (duration, pitch, power)
// triples plus speaker id. Wire format: u32 count (LE) + per-phoneme
// [u16 duration frames, f32 pitch Hz, f32 power] + u16 speaker id.
#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "semcom/common.hpp"

namespace semcom {

struct PhonemeInfo {
  std::uint16_t duration_frames = 0;  // 10 ms spectrum frames
  float pitch_hz = 0.0f;
  float power = 0.0f;
};

struct AdditionalSpeechInfo {
  std::vector<PhonemeInfo> phonemes;
  std::uint16_t speaker_id = 0;

  bool operator==(const AdditionalSpeechInfo& o) const {
    if (speaker_id != o.speaker_id || phonemes.size() != o.phonemes.size()) return false;
    for (std::size_t i = 0; i < phonemes.size(); ++i) {
      if (phonemes[i].duration_frames != o.phonemes[i].duration_frames) return false;
      if (std::memcmp(&phonemes[i].pitch_hz, &o.phonemes[i].pitch_hz, 4) != 0) return false;
      if (std::memcmp(&phonemes[i].power, &o.phonemes[i].power, 4) != 0) return false;
    }
    return true;
  }
};

inline constexpr std::size_t kSideChannelHeaderBytes = 4;
inline constexpr std::size_t kSideChannelPerPhonemeBytes = 2 + 4 + 4;
inline constexpr std::size_t kSideChannelTrailerBytes = 2;

inline std::size_t side_channel_payload_bytes(std::size_t phoneme_count) {
  return kSideChannelHeaderBytes + phoneme_count * kSideChannelPerPhonemeBytes +
         kSideChannelTrailerBytes;
}

inline std::vector<unsigned char> serialize_speech_info(const AdditionalSpeechInfo& d) {
  std::vector<unsigned char> out;
  out.reserve(side_channel_payload_bytes(d.phonemes.size()));
  auto put_u16 = [&](std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
  };
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  };
  auto put_f32 = [&](float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(u);
  };
  put_u32(static_cast<std::uint32_t>(d.phonemes.size()));
  for (const auto& p : d.phonemes) {
    put_u16(p.duration_frames);
    put_f32(p.pitch_hz);
    put_f32(p.power);
  }
  put_u16(d.speaker_id);
  return out;
}

inline AdditionalSpeechInfo deserialize_speech_info(const std::vector<unsigned char>& b) {
  std::size_t pos = 0;
  auto get_u16 = [&]() -> std::uint16_t {
    if (pos + 2 > b.size()) throw InputError("speech info payload truncated");
    std::uint16_t v = static_cast<std::uint16_t>(b[pos] | (b[pos + 1] << 8));
    pos += 2;
    return v;
  };
  auto get_u32 = [&]() -> std::uint32_t {
    if (pos + 4 > b.size()) throw InputError("speech info payload truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
    pos += 4;
    return v;
  };
  auto get_f32 = [&]() -> float {
    std::uint32_t u = get_u32();
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  };
  AdditionalSpeechInfo d;
  std::uint32_t count = get_u32();
  d.phonemes.resize(count);
  for (auto& p : d.phonemes) {
    p.duration_frames = get_u16();
    p.pitch_hz = get_f32();
    p.power = get_f32();
  }
  d.speaker_id = get_u16();
  if (pos != b.size()) throw InputError("speech info payload has trailing bytes");
  return d;
}

// Alg. 4's "Transmit D in a lossless manner": identity with a byte-exact
// serialization round trip.
inline AdditionalSpeechInfo lossless_side_channel(const AdditionalSpeechInfo& d) {
  return deserialize_speech_info(serialize_speech_info(d));
}

}  // namespace semcom
