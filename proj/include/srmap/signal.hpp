#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "srmap/common.hpp"
#include "srmap/fft.hpp"

namespace srmap {

enum class Ear : int { left = 0, right = 1 };

struct MonoSignal {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;
};

/// Two-channel calibrated buffer. Full scale is 1.0; a full-scale RMS of 1.0
/// corresponds to `calibration_db` dB SPL.
struct BinauralSignal {
  std::array<std::vector<double>, 2> channels;
  int sample_rate = kDefaultSampleRate;
  double calibration_db = kDefaultCalibration;

  BinauralSignal() = default;
  BinauralSignal(std::size_t n, int rate, double calibration = kDefaultCalibration)
      : channels{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)},
        sample_rate(rate),
        calibration_db(calibration) {}

  std::size_t size() const { return channels[0].size(); }
  std::vector<double>& operator[](Ear e) { return channels[static_cast<int>(e)]; }
  const std::vector<double>& operator[](Ear e) const { return channels[static_cast<int>(e)]; }

  void check() const {
    if (channels[0].size() != channels[1].size())
      throw ValidationError("binaural signal: channel lengths differ");
  }
};

struct ImpulseResponsePair {
  std::array<std::vector<double>, 2> ir;
  int sample_rate = kDefaultSampleRate;
  Vec3 probe_position;
  int realization_index = 0;

  std::size_t size() const { return ir[0].size(); }
};

inline double rms(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

inline double energy(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

/// RMS level in dB SPL of a calibrated channel.
inline double level_db_spl(std::span<const double> x, double calibration_db = kDefaultCalibration) {
  return amplitude_to_db(rms(x)) + calibration_db;
}

/// Per-channel linear convolution of a mono signal with a binaural IR pair.
/// Output length is N + M - 1.
inline BinauralSignal fast_convolve(const MonoSignal& x, const ImpulseResponsePair& ir) {
  if (x.sample_rate != ir.sample_rate)
    throw ValidationError("fast_convolve: sample rate mismatch (" +
                          std::to_string(x.sample_rate) + " vs " +
                          std::to_string(ir.sample_rate) + ")");
  BinauralSignal out;
  out.sample_rate = x.sample_rate;
  for (int c = 0; c < 2; ++c) out.channels[c] = fft::convolve(x.samples, ir.ir[c]);
  return out;
}

/// Channel-wise linear convolution: left with left IR, right with right IR.
inline BinauralSignal fast_convolve(const BinauralSignal& x, const ImpulseResponsePair& ir) {
  x.check();
  if (x.sample_rate != ir.sample_rate)
    throw ValidationError("fast_convolve: sample rate mismatch (" +
                          std::to_string(x.sample_rate) + " vs " +
                          std::to_string(ir.sample_rate) + ")");
  BinauralSignal out;
  out.sample_rate = x.sample_rate;
  out.calibration_db = x.calibration_db;
  for (int c = 0; c < 2; ++c) out.channels[c] = fft::convolve(x.channels[c], ir.ir[c]);
  return out;
}

// WAV I/O: RIFF, IEEE float 32-bit. Reading additionally accepts 16-bit PCM.

namespace wav {

namespace detail {
inline void put_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u16(std::ofstream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
}  // namespace detail

inline void write(const std::filesystem::path& path,
                  std::span<const std::vector<double>> channels, int sample_rate) {
  if (channels.empty()) throw Error("wav::write: no channels");
  const std::size_t frames = channels[0].size();
  for (const auto& c : channels)
    if (c.size() != frames) throw Error("wav::write: channel lengths differ");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("wav::write: cannot open " + path.string());
  const auto nch = static_cast<std::uint16_t>(channels.size());
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(frames * nch * 4);
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  detail::put_u32(os, 16);
  detail::put_u16(os, 3);  // IEEE float
  detail::put_u16(os, nch);
  detail::put_u32(os, static_cast<std::uint32_t>(sample_rate));
  detail::put_u32(os, static_cast<std::uint32_t>(sample_rate) * nch * 4);
  detail::put_u16(os, static_cast<std::uint16_t>(nch * 4));
  detail::put_u16(os, 32);
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  std::vector<float> interleaved(frames * nch);
  for (std::size_t i = 0; i < frames; ++i)
    for (std::size_t c = 0; c < nch; ++c)
      interleaved[i * nch + c] = static_cast<float>(channels[c][i]);
  static_assert(sizeof(float) == 4);
  for (float f : interleaved) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32(os, bits);
  }
  if (!os) throw Error("wav::write: write failed for " + path.string());
}

inline void write(const std::filesystem::path& path, const BinauralSignal& s) {
  s.check();
  write(path, std::span<const std::vector<double>>(s.channels), s.sample_rate);
}

inline void write(const std::filesystem::path& path, const ImpulseResponsePair& ir) {
  write(path, std::span<const std::vector<double>>(ir.ir), ir.sample_rate);
}

struct Audio {
  std::vector<std::vector<double>> channels;
  int sample_rate = 0;
};

inline Audio read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("wav::read: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw Error("wav::read: not a RIFF/WAVE file: " + path.string());
  std::size_t pos = 12;
  int format = 0, nch = 0, bits = 0, rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = detail::get_u32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + size > bytes.size()) throw Error("wav::read: truncated chunk");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0 && size >= 16) {
      format = detail::get_u16(body);
      nch = detail::get_u16(body + 2);
      rate = static_cast<int>(detail::get_u32(body + 4));
      bits = detail::get_u16(body + 14);
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      data = body;
      data_size = size;
    }
    pos += 8 + size + (size & 1u);
  }
  if (!data || nch == 0) throw Error("wav::read: missing fmt or data chunk");
  Audio out;
  out.sample_rate = rate;
  out.channels.assign(static_cast<std::size_t>(nch), {});
  if (format == 3 && bits == 32) {
    const std::size_t frames = data_size / (4u * static_cast<std::size_t>(nch));
    for (auto& c : out.channels) c.resize(frames);
    for (std::size_t i = 0; i < frames; ++i)
      for (int c = 0; c < nch; ++c) {
        const std::uint32_t u = detail::get_u32(data + 4 * (i * nch + c));
        float f;
        std::memcpy(&f, &u, 4);
        out.channels[c][i] = f;
      }
  } else if (format == 1 && bits == 16) {
    const std::size_t frames = data_size / (2u * static_cast<std::size_t>(nch));
    for (auto& c : out.channels) c.resize(frames);
    for (std::size_t i = 0; i < frames; ++i)
      for (int c = 0; c < nch; ++c)
        out.channels[c][i] =
            static_cast<std::int16_t>(detail::get_u16(data + 2 * (i * nch + c))) / 32768.0;
  } else {
    throw Error("wav::read: unsupported sample format in " + path.string());
  }
  return out;
}

inline BinauralSignal read_binaural(const std::filesystem::path& path) {
  Audio a = read(path);
  if (a.channels.size() != 2)
    throw Error("wav::read_binaural: expected 2 channels in " + path.string());
  BinauralSignal s;
  s.sample_rate = a.sample_rate;
  s.channels[0] = std::move(a.channels[0]);
  s.channels[1] = std::move(a.channels[1]);
  return s;
}

}  // namespace wav

}  // namespace srmap
