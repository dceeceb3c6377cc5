// Copyright 2026 The sslse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "sslse/common.hpp"
#include "sslse/dsp.hpp"

namespace sslse {

namespace wav_detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void wr_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void wr_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace wav_detail

/// Reads a mono 16 kHz RIFF WAV (16-bit PCM or 32-bit float). PCM samples are
/// scaled by 1/32768.
inline AudioBuffer read_wav(const std::filesystem::path& path) {
  using namespace wav_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string(), ErrorCode::kIo);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw Error(where + ": not a RIFF/WAVE file", ErrorCode::kIo);

  int format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t len = rd_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size())
      throw Error(where + ": truncated chunk", ErrorCode::kIo);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16) throw Error(where + ": short fmt chunk", ErrorCode::kIo);
      format = rd_u16(bytes.data() + body);
      channels = rd_u16(bytes.data() + body + 2);
      rate = rd_u32(bytes.data() + body + 4);
      bits = rd_u16(bytes.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = rd_u16(bytes.data() + body + 24);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1u);
  }
  if (format == 0 || data == nullptr)
    throw Error(where + ": missing fmt or data chunk", ErrorCode::kIo);
  if (channels != 1) throw Error(where + ": only mono audio is supported", ErrorCode::kIo);
  if (rate != static_cast<std::uint32_t>(kSampleRate))
    throw Error(where + ": sample rate " + std::to_string(rate) + " != 16000",
                ErrorCode::kIo);

  AudioBuffer out;
  if (format == 1 && bits == 16) {
    out.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      const auto v = static_cast<std::int16_t>(rd_u16(data + 2 * i));
      out.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    out.samples.resize(data_len / 4);
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
      const std::uint32_t u = rd_u32(data + 4 * i);
      float f;
      std::memcpy(&f, &u, 4);
      out.samples[i] = static_cast<double>(f);
    }
  } else {
    throw Error(where + ": unsupported sample format (need 16-bit PCM or 32-bit float)",
                ErrorCode::kIo);
  }
  check_finite(out.samples, where);
  return out;
}

/// Writes 16-bit PCM: x * 32768 rounded and clamped to [-32768, 32767], so a
/// buffer read by read_wav is written back unchanged.
inline void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
  using namespace wav_detail;
  const auto n = static_cast<std::uint32_t>(audio.size());
  std::string s;
  s.reserve(44 + 2 * static_cast<std::size_t>(n));
  s += "RIFF";
  wr_u32(s, 36 + 2 * n);
  s += "WAVEfmt ";
  wr_u32(s, 16);
  wr_u16(s, 1);
  wr_u16(s, 1);
  wr_u32(s, static_cast<std::uint32_t>(audio.sample_rate));
  wr_u32(s, static_cast<std::uint32_t>(audio.sample_rate) * 2);
  wr_u16(s, 2);
  wr_u16(s, 16);
  s += "data";
  wr_u32(s, 2 * n);
  for (double x : audio.samples) {
    const double c = std::clamp(x, -1.0, 1.0) * 32768.0;
    const long q = std::clamp(std::lround(c), -32768L, 32767L);
    wr_u16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string(), ErrorCode::kIo);
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!out) throw Error("write failed: " + path.string(), ErrorCode::kIo);
}

}  // namespace sslse
