// Copyright 2026  pvad-lab authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// 16-bit PCM mono RIFF/WAVE reading and writing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pvad/common.hpp"

namespace pvad {

/// Mono audio, amplitudes nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

namespace detail {

inline std::uint32_t ReadU32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t ReadU16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}
inline void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void PutU16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

}  // namespace detail

inline Waveform ReadWav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open WAV file " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path);

  Waveform w;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::uint32_t size = detail::ReadU32(chunk + 4);
    std::size_t body = pos + 8;
    if (body + size > bytes.size())
      throw DataError("truncated WAV chunk in " + path);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw DataError("bad fmt chunk in " + path);
      std::uint16_t format = detail::ReadU16(bytes.data() + body);
      std::uint16_t channels = detail::ReadU16(bytes.data() + body + 2);
      std::uint16_t bits = detail::ReadU16(bytes.data() + body + 14);
      if (format != 1 || channels != 1 || bits != 16)
        throw DataError("only 16-bit PCM mono WAV is supported: " + path);
      w.sample_rate = int(detail::ReadU32(bytes.data() + body + 4));
      if (w.sample_rate <= 0) throw DataError("bad sample rate in " + path);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw DataError("data chunk before fmt in " + path);
      std::size_t n = size / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto v = std::int16_t(detail::ReadU16(bytes.data() + body + 2 * i));
        w.samples[i] = float(v) / 32768.0f;
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw DataError("no data chunk in " + path);
}

inline void WriteWav(const std::string& path, const Waveform& w) {
  std::string out;
  const auto n = std::uint32_t(w.samples.size());
  out += "RIFF";
  detail::PutU32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  detail::PutU32(out, 16);
  detail::PutU16(out, 1);
  detail::PutU16(out, 1);
  detail::PutU32(out, std::uint32_t(w.sample_rate));
  detail::PutU32(out, std::uint32_t(w.sample_rate) * 2);
  detail::PutU16(out, 2);
  detail::PutU16(out, 16);
  out += "data";
  detail::PutU32(out, 2 * n);
  for (float s : w.samples) {
    long v = std::lround(double(std::clamp(s, -1.0f, 1.0f)) * 32767.0);
    detail::PutU16(out, std::uint16_t(std::int16_t(v)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write WAV file " + path);
  f.write(out.data(), std::streamsize(out.size()));
}

}  // namespace pvad
