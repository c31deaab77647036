#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ge2e/common.hpp"

namespace ge2e {

/// Mono waveform, samples in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  s.append(reinterpret_cast<const char*>(&v), 4);
}

inline void put_u16(std::string& s, std::uint16_t v) {
  s.append(reinterpret_cast<const char*>(&v), 2);
}

}  // namespace detail

/// Reads a 16-bit signed PCM mono WAV file.
inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || bytes.compare(0, 4, "RIFF") != 0 ||
      bytes.compare(8, 4, "WAVE") != 0)
    throw Error(ErrorKind::FormatError, path + ": not a RIFF/WAVE file");

  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    std::uint32_t len;
    std::memcpy(&len, bytes.data() + pos + 4, 4);
    if (id == "fmt ") {
      if (len < 16 || pos + 8 + 16 > bytes.size())
        throw Error(ErrorKind::FormatError, path + ": bad fmt chunk");
      std::uint16_t fmt;
      std::memcpy(&fmt, bytes.data() + pos + 8, 2);
      std::memcpy(&channels, bytes.data() + pos + 10, 2);
      std::memcpy(&rate, bytes.data() + pos + 12, 4);
      std::memcpy(&bits, bytes.data() + pos + 22, 2);
      if (fmt != 1)
        throw Error(ErrorKind::FormatError, path + ": only PCM supported");
    } else if (id == "data") {
      data_off = pos + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (channels != 1)
    throw Error(ErrorKind::FormatError, path + ": expected mono audio");
  if (bits != 16)
    throw Error(ErrorKind::FormatError, path + ": expected 16-bit samples");
  if (data_off == 0 || data_off + data_len > bytes.size())
    throw Error(ErrorKind::FormatError, path + ": missing or truncated data chunk");

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const std::size_t n = data_len / 2;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::int16_t s;
    std::memcpy(&s, bytes.data() + data_off + 2 * i, 2);
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

/// Writes a 16-bit signed PCM mono WAV file. Samples are clipped to [-1, 1].
inline void write_wav(const std::string& path, const Waveform& w) {
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_len = n * 2;
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out += "data";
  detail::put_u32(out, data_len);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double x = std::clamp(w.samples[i], -1.0, 1.0);
    const auto s = static_cast<std::int16_t>(std::lround(x * 32767.0));
    out.append(reinterpret_cast<const char*>(&s), 2);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::IoError, "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorKind::IoError, "write failed: " + path);
}

}  // namespace ge2e
